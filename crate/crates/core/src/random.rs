//! Random problem instances: orthonormal influence factors, well-posed team
//! models and stable policies. Used by the property tests, the acceptance
//! suite and the benches.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{spectral_radius, Mat};
use crate::model::{aggregate, SubPopulationSpec, TeamModel};
use crate::pg_exact;
use crate::policy::Policy;
use crate::riccati;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
}

/// Random symmetric positive definite matrix with eigenvalues at least `floor`.
pub fn random_spd(rng: &mut impl Rng, d: usize, scale: f64, floor: f64) -> Mat {
    let l = gaussian_matrix(rng, d, d, scale);
    &l * l.transpose() + Mat::identity(d, d) * floor
}

/// `n × f` influence factors with `(1/n) αᵀα = I`. Requires `n >= f`.
pub fn orthonormal_factors(rng: &mut impl Rng, n: usize, f: usize) -> Mat {
    assert!(n >= f, "need at least as many agents as features");
    let g = gaussian_matrix(rng, n, f, 1.0);
    let q = g.qr().q();
    q.columns(0, f).into_owned() * (n as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct ModelShape {
    pub subs: usize,
    pub max_f: usize,
    pub max_n: usize,
    pub max_dx: usize,
    pub max_du: usize,
    pub weakly_coupled: bool,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            subs: 2,
            max_f: 2,
            max_n: 5,
            max_dx: 3,
            max_du: 3,
            weakly_coupled: false,
        }
    }
}

/// A random valid model with `lambda = 0`.
pub fn random_model(rng: &mut impl Rng, shape: &ModelShape) -> TeamModel {
    struct Dims {
        n: usize,
        f: usize,
        dx: usize,
        du: usize,
    }
    let dims: Vec<Dims> = (0..shape.subs)
        .map(|_| {
            let f = rng.random_range(1..=shape.max_f);
            Dims {
                f,
                n: rng.random_range(f..=shape.max_n.max(f)),
                dx: rng.random_range(1..=shape.max_dx),
                du: rng.random_range(1..=shape.max_du),
            }
        })
        .collect();
    let dxt: usize = dims.iter().map(|d| d.f * d.dx).sum();
    let dut: usize = dims.iter().map(|d| d.f * d.du).sum();

    let mut x_off = 0;
    let mut u_off = 0;
    let mut qbar = Mat::zeros(dxt, dxt);
    let mut rbar = Mat::zeros(dut, dut);
    let mut subs = Vec::new();
    for d in &dims {
        let mut abar = Vec::new();
        let mut bbar = Vec::new();
        for _ in 0..d.f {
            if shape.weakly_coupled {
                let mut ab = Mat::zeros(d.dx, dxt);
                ab.view_mut((0, x_off), (d.dx, d.dx))
                    .copy_from(&gaussian_matrix(rng, d.dx, d.dx, 0.15));
                let mut bb = Mat::zeros(d.dx, dut);
                bb.view_mut((0, u_off), (d.dx, d.du))
                    .copy_from(&gaussian_matrix(rng, d.dx, d.du, 0.15));
                abar.push(ab);
                bbar.push(bb);
                let qb = random_spd(rng, d.dx, 0.4, 0.0);
                qbar.view_mut((x_off, x_off), (d.dx, d.dx)).copy_from(&qb);
                let rb = random_spd(rng, d.du, 0.4, 0.0);
                rbar.view_mut((u_off, u_off), (d.du, d.du)).copy_from(&rb);
            } else {
                abar.push(gaussian_matrix(rng, d.dx, dxt, 0.1));
                bbar.push(gaussian_matrix(rng, d.dx, dut, 0.1));
            }
            x_off += d.dx;
            u_off += d.du;
        }
        subs.push(SubPopulationSpec {
            n: d.n,
            f: d.f,
            dx: d.dx,
            du: d.du,
            a: gaussian_matrix(rng, d.dx, d.dx, 0.6 / (d.dx as f64).sqrt()),
            b: gaussian_matrix(rng, d.dx, d.du, 1.0),
            abar,
            bbar,
            q: random_spd(rng, d.dx, 0.5, 0.2),
            r: random_spd(rng, d.du, 0.5, 0.5),
            mu: rng.random_range(0.5..2.0),
            sigma_x: random_spd(rng, d.dx, 0.2, 0.05),
            sigma_w: random_spd(rng, d.dx, 0.2, 0.05),
            alpha: orthonormal_factors(rng, d.n, d.f),
        });
    }
    if !shape.weakly_coupled {
        qbar = random_spd(rng, dxt, 0.3, 0.0);
        rbar = random_spd(rng, dut, 0.3, 0.0);
    }
    TeamModel {
        subs,
        qbar_cross: qbar,
        rbar_cross: rbar,
        lambda: 0.0,
    }
}

/// Random policy whose residual and deep closed loops have spectral radius
/// at most `max_radius` and which is risk-feasible at the model's `lambda`.
/// A block whose optimal closed loop is already slower than `max_radius`
/// gets the bound halfway between its optimal radius and one instead.
///
/// Feedback gains are drawn uniformly in a box of half-width `spread` around
/// the risk-neutral optimal gains; the box shrinks if draws keep failing.
pub fn random_stable_policy(rng: &mut impl Rng, m: &TeamModel, max_radius: f64, spread: f64) -> Policy {
    let agg = aggregate(m).expect("random_stable_policy needs a valid model");
    let reference = riccati::solve(&m.with_lambda(0.0))
        .map(|sol| riccati::optimal_policy(&sol).feedback())
        .unwrap_or_else(|_| Policy::zeros(m));
    let bound = |rho: f64| if rho < max_radius { max_radius } else { 0.5 * (1.0 + rho) };
    let local_bounds: Vec<f64> = reference
        .theta
        .iter()
        .zip(&agg.residual)
        .map(|(g, r)| bound(spectral_radius(&(&r.a - &r.b * g))))
        .collect();
    let deep_bound = bound(spectral_radius(&(&agg.a - &agg.b * &reference.theta_bar)));
    let mut width = spread;
    loop {
        for _ in 0..200 {
            let k = reference.map(|g| g.map(|v| v + rng.random_range(-width..=width)));
            let stable = k
                .theta
                .iter()
                .zip(&agg.residual)
                .zip(&local_bounds)
                .all(|((g, r), b)| spectral_radius(&(&r.a - &r.b * g)) <= *b)
                && spectral_radius(&(&agg.a - &agg.b * &k.theta_bar)) <= deep_bound;
            if !stable {
                continue;
            }
            let p = Policy::from_feedback(&k);
            if m.lambda == 0.0 || pg_exact::evaluate(m, &p, m.lambda).is_ok() {
                return p;
            }
        }
        width *= 0.5;
        assert!(width > 1e-12, "no stable, risk-feasible policy near the optimum");
    }
}
