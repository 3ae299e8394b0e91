//! Model-free gradient estimation by sphere smoothing and the team learner.
//!
//! Each gain block `b` of dimension `d_b` is perturbed independently on the
//! Frobenius sphere of radius `r`, so that
//! `(d_b / r²) E[J(θ + U) U_b]` is the gradient of the ball-smoothed cost.
//! `J` is estimated by the time-averaged rollout cost `J̃_T / T`.
//!
//! Estimates are reported in feedback coordinates `K = -θ`, like the exact
//! gradients of [`crate::pg_exact`].

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Block, Error, Result};
use crate::linalg::Mat;
use crate::model::TeamModel;
use crate::pg_exact::{self, Algorithm, Oracle, RunStatus};
use crate::policy::Policy;
use crate::seed;
use crate::sim::{Engine, InitMode};
use crate::trace::{RunTrace, TraceRow};

/// Share of overflowing perturbed rollouts tolerated per estimate.
pub const MAX_REJECTED_SHARE: f64 = 0.2;
/// Ridge added to the empirical state correlation before inversion.
pub const SIGMA_RIDGE: f64 = 1e-8;

/// One draw of block perturbations and the rollout cost it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSample {
    pub perturbation: Policy,
    /// `J̃_T`, the undiscounted cost sum of one rollout.
    pub cost: f64,
    pub seed: u64,
}

fn fill_sphere(rng: &mut impl Rng, block: &mut Mat, r: f64) {
    loop {
        block.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let norm = block.norm();
        if norm > 0.0 {
            *block *= r / norm;
            return;
        }
    }
}

fn sphere_blocks(rng: &mut impl Rng, shape: &Policy, r: f64) -> Policy {
    let mut out = shape.map(|b| Mat::zeros(b.nrows(), b.ncols()));
    for b in out.blocks_mut() {
        fill_sphere(rng, b, r);
    }
    out
}

/// Independent uniform draws on the radius-`r` Frobenius sphere of every
/// block of `shape`.
pub fn sample_sphere(shape: &Policy, r: f64, seed: u64) -> Result<Policy> {
    check_radius(r)?;
    Ok(sphere_blocks(&mut seed::rng(seed), shape, r))
}

fn check_radius(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("smoothing radius must be positive, got {r}")))
    }
}

/// Sphere-smoothing estimate of `∇f(point)` from `samples` draws, in the
/// coordinates of `point` (no sign change). With `antithetic` each draw is
/// evaluated at `point ± U` and the symmetric difference is used.
pub fn sphere_gradient(
    point: &Policy,
    r: f64,
    samples: usize,
    seed: u64,
    antithetic: bool,
    mut f: impl FnMut(&Policy) -> f64,
) -> Result<Policy> {
    check_radius(r)?;
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = seed::rng(seed);
    let scales: Vec<f64> = point.blocks().map(|b| b.len() as f64 / (r * r)).collect();
    let mut acc = point.map(|b| Mat::zeros(b.nrows(), b.ncols()));
    for _ in 0..samples {
        let u = sphere_blocks(&mut rng, point, r);
        let weight = if antithetic {
            0.5 * (f(&point.add_scaled(1.0, &u)) - f(&point.add_scaled(-1.0, &u)))
        } else {
            f(&point.add_scaled(1.0, &u))
        };
        for ((a, ub), s) in acc.blocks_mut().zip(u.blocks()).zip(&scales) {
            *a += ub * (weight * s);
        }
    }
    Ok(acc.scale(1.0 / samples as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    Pg,
    /// Also estimates the state correlations used by the natural gradient.
    Npg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// Number of perturbation directions `L`.
    pub samples: usize,
    /// Rollout horizon `T`.
    pub horizon: usize,
    pub radius: f64,
    /// Evaluate each direction at `θ ± U` with a shared rollout seed.
    pub antithetic: bool,
    pub init: InitMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalGradient {
    /// Estimated gradient in feedback coordinates.
    pub grad: Policy,
    /// Empirical state correlations (local blocks, then deep), NPG mode only.
    pub sigma: Option<(Vec<Mat>, Mat)>,
    pub samples: usize,
    pub horizon: usize,
    pub radius: f64,
    /// Mean of `J̃_T / T` over the accepted rollouts.
    pub cost: f64,
    pub cost_stderr: f64,
    pub rejected: usize,
}

impl EmpiricalGradient {
    pub fn norm(&self) -> f64 {
        self.grad.norm()
    }

    /// `∇̂ (Σ̂ + εI)⁻¹` per block, zero for blocks without residual agents.
    pub fn natural_direction(&self, m: &TeamModel) -> Result<Policy> {
        let (local, deep) = self
            .sigma
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("estimate carries no state correlation".into()))?;
        let solve = |g: &Mat, s: &Mat, block: Block| -> Result<Mat> {
            let d = s.nrows();
            let reg = s + Mat::identity(d, d) * SIGMA_RIDGE;
            let chol = reg.cholesky().ok_or(Error::SingularCovariance { block })?;
            Ok(chol.solve(&g.transpose()).transpose())
        };
        let theta = m
            .subs
            .iter()
            .enumerate()
            .map(|(s, sub)| {
                if sub.n == sub.f {
                    Ok(Mat::zeros(sub.du, sub.dx))
                } else {
                    solve(&self.grad.theta[s], &local[s], Block::Local(s))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Policy {
            theta,
            theta_bar: solve(&self.grad.theta_bar, deep, Block::Deep)?,
        })
    }
}

struct Rollout {
    cost: f64,
    sigma: Option<(Vec<Mat>, Mat)>,
}

fn run_one(
    engine: &Engine,
    m: &TeamModel,
    p: &Policy,
    cfg: &EstimatorConfig,
    seed: u64,
    collect: bool,
) -> Result<Rollout> {
    let mut total = 0.0;
    let mut local: Vec<Mat> = m.subs.iter().map(|s| Mat::zeros(s.dx, s.dx)).collect();
    let dxt = m.deep_state_dim();
    let mut deep = Mat::zeros(dxt, dxt);
    engine.run(p, cfg.horizon, seed, cfg.init, |v| {
        total += v.cost;
        if collect {
            for ((acc, res), sub) in local.iter_mut().zip(v.residuals).zip(&m.subs) {
                let w = sub.mu / sub.n as f64;
                for dx in res.chunks(sub.dx) {
                    for r in 0..sub.dx {
                        for c in 0..sub.dx {
                            acc[(r, c)] += w * dx[r] * dx[c];
                        }
                    }
                }
            }
            for r in 0..dxt {
                for c in 0..dxt {
                    deep[(r, c)] += v.deep_state[r] * v.deep_state[c];
                }
            }
        }
    })?;
    let t = cfg.horizon as f64;
    Ok(Rollout {
        cost: total / t,
        sigma: collect.then(|| (local.into_iter().map(|s| s / t).collect(), deep / t)),
    })
}

struct SampleResult {
    direction: Policy,
    weight: f64,
    costs: Vec<f64>,
    sigma: Vec<(Vec<Mat>, Mat)>,
    rejected: usize,
}

/// Sphere-smoothing gradient estimate from `L` perturbed rollouts of the
/// simulator. Perturbations that overflow are rejected and redrawn.
pub fn empirical_gradient(
    m: &TeamModel,
    p: &Policy,
    cfg: &EstimatorConfig,
    seed: u64,
    mode: EstimatorMode,
) -> Result<EmpiricalGradient> {
    check_radius(cfg.radius)?;
    if cfg.samples == 0 || cfg.horizon == 0 {
        return Err(Error::InvalidArgument("samples and horizon must be at least 1".into()));
    }
    let engine = Engine::new(m, p)?;
    let r = cfg.radius;
    let collect = mode == EstimatorMode::Npg;
    let max_attempts = ((cfg.samples as f64 * MAX_REJECTED_SHARE).floor() as usize).max(1) + 1;

    let results: Vec<Result<SampleResult>> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|l| {
            let mut rejected = 0;
            for attempt in 0..max_attempts as u64 {
                let mut rng = seed::rng(seed::derive(seed, &[l, attempt, 0]));
                let u = sphere_blocks(&mut rng, p, r);
                let rollout_seed = seed::derive(seed, &[l, attempt, 1]);
                let plus = run_one(&engine, m, &p.add_scaled(1.0, &u), cfg, rollout_seed, collect);
                let outcome = if cfg.antithetic {
                    plus.and_then(|a| {
                        run_one(&engine, m, &p.add_scaled(-1.0, &u), cfg, rollout_seed, collect).map(|b| vec![a, b])
                    })
                } else {
                    plus.map(|a| vec![a])
                };
                match outcome {
                    Ok(rs) => {
                        let weight = if cfg.antithetic {
                            0.5 * (rs[0].cost - rs[1].cost)
                        } else {
                            rs[0].cost
                        };
                        let costs = rs.iter().map(|x| x.cost).collect();
                        let sigma = rs.into_iter().filter_map(|x| x.sigma).collect();
                        return Ok(SampleResult {
                            direction: u,
                            weight,
                            costs,
                            sigma,
                            rejected,
                        });
                    }
                    Err(Error::NumericOverflow { .. }) => rejected += 1,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::TooManyUnstableSamples {
                rejected,
                attempted: rejected,
            })
        })
        .collect();

    let scales: Vec<f64> = p.blocks().map(|b| b.len() as f64 / (r * r)).collect();
    let mut grad = p.map(|b| Mat::zeros(b.nrows(), b.ncols()));
    let mut costs = Vec::with_capacity(cfg.samples * 2);
    let mut local_sigma: Vec<Mat> = m.subs.iter().map(|s| Mat::zeros(s.dx, s.dx)).collect();
    let dxt = m.deep_state_dim();
    let mut deep_sigma = Mat::zeros(dxt, dxt);
    let mut sigma_count = 0usize;
    let mut rejected = 0;
    for res in results {
        let sr = match res {
            Ok(sr) => sr,
            Err(Error::TooManyUnstableSamples { rejected: k, .. }) => {
                let total = rejected + k;
                return Err(Error::TooManyUnstableSamples {
                    rejected: total,
                    attempted: total + cfg.samples,
                });
            }
            Err(e) => return Err(e),
        };
        rejected += sr.rejected;
        for ((g, u), s) in grad.blocks_mut().zip(sr.direction.blocks()).zip(&scales) {
            // Perturbations act on θ; feedback coordinates flip the sign.
            *g -= u * (sr.weight * s);
        }
        costs.extend(sr.costs);
        for (loc, deep) in sr.sigma {
            for (acc, s) in local_sigma.iter_mut().zip(loc) {
                *acc += s;
            }
            deep_sigma += deep;
            sigma_count += 1;
        }
    }
    let attempted = rejected + cfg.samples;
    if rejected as f64 > MAX_REJECTED_SHARE * attempted as f64 {
        return Err(Error::TooManyUnstableSamples { rejected, attempted });
    }
    let n = costs.len() as f64;
    let cost = costs.iter().sum::<f64>() / n;
    let cost_stderr = if costs.len() > 1 {
        (costs.iter().map(|c| (c - cost).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    let sigma = collect.then(|| {
        let k = sigma_count.max(1) as f64;
        (local_sigma.into_iter().map(|s| s / k).collect(), deep_sigma / k)
    });
    Ok(EmpiricalGradient {
        grad: grad.scale(1.0 / cfg.samples as f64),
        sigma,
        samples: cfg.samples,
        horizon: cfg.horizon,
        radius: r,
        cost,
        cost_stderr,
        rejected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnConfig {
    pub algo: Algorithm,
    pub eta: f64,
    pub iters: usize,
    pub estimator: EstimatorConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub policy: Policy,
    pub trace: RunTrace,
    pub status: RunStatus,
    /// Gain error of the final policy against the Riccati oracle.
    pub final_gain_error: f64,
    pub rejected_samples: usize,
}

/// Team learner: every iteration one shared perturbation stream produces a
/// single gradient estimate, and the same update is applied to the gains of
/// all agents. Gaps and gain errors in the trace are measured against the
/// model's Riccati oracle; stability of an iterate is checked on the model.
pub fn learn(m: &TeamModel, p0: &Policy, cfg: &LearnConfig) -> Result<LearnOutcome> {
    if m.lambda != 0.0 {
        return Err(Error::InvalidArgument(
            "model-free learning is risk-neutral; set the risk factor to 0".into(),
        ));
    }
    if !(cfg.eta > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {}", cfg.eta)));
    }
    p0.check_dims(m)?;
    let oracle = Oracle::new(m, 0.0)?;
    pg_exact::evaluate(m, p0, 0.0)?;
    let mode = match cfg.algo {
        Algorithm::Pg => EstimatorMode::Pg,
        Algorithm::Npg => EstimatorMode::Npg,
    };

    let mut policy = p0.clone();
    let mut trace = RunTrace::model_free();
    let mut rejected_total = 0;
    let mut status = RunStatus::MaxIterations;
    for iter in 0..=cfg.iters {
        let est = empirical_gradient(m, &policy, &cfg.estimator, seed::derive(cfg.seed, &[iter as u64]), mode)?;
        rejected_total += est.rejected;
        let exact = pg_exact::cost(m, &policy, 0.0)?;
        trace.push(TraceRow {
            iter,
            cost: est.cost,
            gap: Some(exact - oracle.cost),
            grad_norm: est.norm(),
            gain_err: Some(policy.distance(&oracle.policy)),
            rejected_samples: Some(est.rejected),
            estimate_stderr: Some(est.cost_stderr),
        });
        if iter == cfg.iters {
            break;
        }
        let direction = match cfg.algo {
            Algorithm::Pg => est.grad.clone(),
            Algorithm::Npg => est.natural_direction(m)?,
        };
        let candidate = policy.add_scaled(cfg.eta, &direction);
        match pg_exact::evaluate(m, &candidate, 0.0) {
            Ok(_) => policy = candidate,
            Err(e) if e.is_numerical() => {
                status = RunStatus::UnstableIterate { iter: iter + 1 };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(LearnOutcome {
        final_gain_error: policy.distance(&oracle.policy),
        policy,
        trace,
        status,
        rejected_samples: rejected_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn scalar(local: f64, deep: f64) -> Policy {
        Policy {
            theta: vec![Mat::from_element(1, 1, local)],
            theta_bar: Mat::from_element(1, 1, deep),
        }
    }

    #[test]
    fn scalar_sphere_is_two_points() {
        let mut seen = [0usize; 2];
        for s in 0..2000 {
            let u = sample_sphere(&scalar(0.0, 0.0), 0.3, s).unwrap();
            let v = u.theta[0][(0, 0)];
            assert!((v.abs() - 0.3).abs() < 1e-15);
            seen[(v > 0.0) as usize] += 1;
        }
        // Binomial(2000, 1/2) has standard deviation about 22.
        assert!((seen[0] as i64 - 1000).abs() < 100, "{seen:?}");
    }

    #[test]
    fn sphere_blocks_have_radius() {
        let shape = Policy {
            theta: vec![Mat::zeros(2, 3), Mat::zeros(1, 1)],
            theta_bar: Mat::zeros(4, 2),
        };
        let u = sample_sphere(&shape, 0.7, 11).unwrap();
        for b in u.blocks() {
            assert!((b.norm() - 0.7).abs() < 1e-12);
        }
        assert!(sample_sphere(&shape, 0.0, 1).is_err());
    }

    #[test]
    fn one_dimensional_quadratic_estimate_is_exact_in_expectation() {
        // With d = 1 the sphere is {-r, r}; the smoothed gradient of θ² at 1
        // is ((1 + r)² - (1 - r)²) / (2r) = 2.
        let r = 0.25f64;
        let expected = ((1.0 + r).powi(2) - (1.0 - r).powi(2)) / (2.0 * r);
        assert!((expected - 2.0).abs() < 1e-15);
        let point = Policy {
            theta: vec![],
            theta_bar: Mat::from_element(1, 1, 1.0),
        };
        let g = sphere_gradient(&point, r, 1, 3, true, |p| p.theta_bar[(0, 0)].powi(2)).unwrap();
        assert!((g.theta_bar[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_point_estimate_shrinks_with_pairing() {
        // Noise-free deterministic objective with a minimum at the point.
        let point = scalar(0.0, 0.0);
        let f = |p: &Policy| p.theta[0][(0, 0)].powi(2) + 3.0 * p.theta_bar[(0, 0)].powi(2);
        let small = sphere_gradient(&point, 0.1, 10, 1, true, f).unwrap();
        assert!(small.norm() < 1e-12);
    }

    #[test]
    fn estimate_is_deterministic_per_seed() {
        let p = presets::example2();
        let cfg = EstimatorConfig {
            samples: 8,
            horizon: 10,
            radius: 0.1,
            antithetic: false,
            init: p.init,
        };
        let k0 = scalar(-0.3, -0.3);
        let a = empirical_gradient(&p.model, &k0, &cfg, 5, EstimatorMode::Npg).unwrap();
        let b = empirical_gradient(&p.model, &k0, &cfg, 5, EstimatorMode::Npg).unwrap();
        assert_eq!(a, b);
        let c = empirical_gradient(&p.model, &k0, &cfg, 6, EstimatorMode::Pg).unwrap();
        assert_ne!(a.grad, c.grad);
        assert!(c.sigma.is_none());
    }

    #[test]
    fn zero_iterations_return_initial_policy() {
        let p = presets::example2();
        let k0 = scalar(-0.2, -0.2);
        let cfg = LearnConfig {
            algo: Algorithm::Pg,
            eta: 0.2,
            iters: 0,
            estimator: EstimatorConfig {
                samples: 4,
                horizon: 5,
                radius: 0.1,
                antithetic: false,
                init: p.init,
            },
            seed: 1,
        };
        let out = learn(&p.model, &k0, &cfg).unwrap();
        assert_eq!(out.policy, k0);
        assert_eq!(out.trace.rows.len(), 1);
    }

    #[test]
    fn risk_sensitive_models_are_rejected() {
        let p = presets::example1();
        let k0 = Policy::zeros(&p.model);
        let cfg = LearnConfig {
            algo: Algorithm::Pg,
            eta: 0.1,
            iters: 1,
            estimator: EstimatorConfig {
                samples: 2,
                horizon: 2,
                radius: 0.1,
                antithetic: false,
                init: p.init,
            },
            seed: 0,
        };
        assert!(matches!(learn(&p.model, &k0, &cfg), Err(Error::InvalidArgument(_))));
    }
}
