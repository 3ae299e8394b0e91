//! Independent oracles shared by the integration suites.

#![allow(dead_code)]

use lqdst::gauge::{deep_project, gauge_residual, noise_covariance, AgentField, NoiseMoment, Vector};
use lqdst::pg_exact;
use lqdst::random::gaussian_matrix;
use lqdst::sim::{team_cost, Trajectory};
use lqdst::{aggregate, Mat, Policy, TeamModel};
use rand::Rng;
use rand_distr::StandardNormal;

/// Central finite differences of the exact cost in feedback coordinates.
pub fn fd_gradient(m: &TeamModel, p: &Policy, lambda: f64, h: f64) -> Policy {
    let k = p.feedback();
    let mut out = k.map(|b| Mat::zeros(b.nrows(), b.ncols()));
    let blocks: Vec<(usize, usize, usize)> = k
        .blocks()
        .enumerate()
        .flat_map(|(b, mat)| (0..mat.nrows()).flat_map(move |r| (0..mat.ncols()).map(move |c| (b, r, c))))
        .collect();
    for (b, r, c) in blocks {
        let bump = |delta: f64| {
            let mut kk = k.clone();
            kk.blocks_mut().nth(b).unwrap()[(r, c)] += delta;
            pg_exact::cost(m, &Policy::from_feedback(&kk), lambda).unwrap()
        };
        let d = (bump(h) - bump(-h)) / (2.0 * h);
        out.blocks_mut().nth(b).unwrap()[(r, c)] = d;
    }
    out
}

pub fn rel_err(a: &Policy, b: &Policy) -> f64 {
    a.distance(b) / b.norm().max(1e-300)
}

pub fn mat_rel_err(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn random_field(rng: &mut impl Rng, m: &TeamModel, state: bool) -> AgentField {
    m.subs
        .iter()
        .map(|s| {
            let d = if state { s.dx } else { s.du };
            (0..s.n)
                .map(|_| Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)))
                .collect()
        })
        .collect()
}

fn field_norm(f: &AgentField) -> f64 {
    f.iter().flatten().map(|v| v.norm_squared()).sum::<f64>().sqrt()
}

/// Residual linear dependence, orthogonality against the deep state and the
/// split of the team cost, checked by direct summation.
pub fn check_gauge_identities(m: &TeamModel, x: &AgentField, u: &AgentField) -> Result<(), String> {
    let dx = gauge_residual(x, m).map_err(|e| e.to_string())?;
    let du = gauge_residual(u, m).map_err(|e| e.to_string())?;
    let xbar = deep_project(x, m).map_err(|e| e.to_string())?;
    let ubar = deep_project(u, m).map_err(|e| e.to_string())?;
    let scale = field_norm(x).max(1e-12);

    for (s, sub) in m.subs.iter().enumerate() {
        for j in 0..sub.f {
            let mut acc = Vector::zeros(sub.dx);
            for (i, d) in dx[s].iter().enumerate() {
                acc += d * sub.alpha[(i, j)];
            }
            if acc.norm() > 1e-9 * scale {
                return Err(format!("linear dependence fails: sub {s} feature {j}: {}", acc.norm()));
            }
        }
        let mut orth = 0.0;
        for (i, d) in dx[s].iter().enumerate() {
            for j in 0..sub.f {
                let xj = xbar.rows(m.state_offset(s, j), sub.dx);
                orth += sub.alpha[(i, j)] * d.dot(&(&sub.q * xj));
            }
        }
        if orth.abs() > 1e-9 * (1.0 + scale * scale * sub.q.norm()) {
            return Err(format!("orthogonality fails: sub {s}: {orth}"));
        }
    }

    let agg = aggregate(m).map_err(|e| e.to_string())?;
    let mut split = xbar.dot(&(&agg.q * &xbar)) + ubar.dot(&(&agg.r * &ubar));
    for (s, sub) in m.subs.iter().enumerate() {
        let mut sum = 0.0;
        for (a, b) in dx[s].iter().zip(&du[s]) {
            sum += a.dot(&(&sub.q * a)) + b.dot(&(&sub.r * b));
        }
        split += sub.mu / sub.n as f64 * sum;
    }
    let direct = team_cost(m, x, u).map_err(|e| e.to_string())?;
    if (split - direct).abs() > 1e-8 * direct.abs().max(1e-12) {
        return Err(format!("cost split {split} vs direct {direct}"));
    }
    Ok(())
}

/// Recover each agent's noise from the recorded trajectory, then check the
/// deep-state and residual dynamics against the aggregated matrices.
pub fn check_trajectory_dynamics(m: &TeamModel, tr: &Trajectory) -> Result<(), String> {
    let agg = aggregate(m).map_err(|e| e.to_string())?;
    for t in 0..tr.states.len().saturating_sub(1) {
        let x = &tr.states[t];
        let u = &tr.actions[t];
        let x_next = &tr.states[t + 1];
        let xbar = deep_project(x, m).unwrap();
        let ubar = deep_project(u, m).unwrap();
        let xbar_next = deep_project(x_next, m).unwrap();
        let noise: AgentField = m
            .subs
            .iter()
            .enumerate()
            .map(|(s, sub)| {
                (0..sub.n)
                    .map(|i| {
                        let mut w = &x_next[s][i] - &sub.a * &x[s][i] - &sub.b * &u[s][i];
                        for j in 0..sub.f {
                            w -= (&sub.abar[j] * &xbar + &sub.bbar[j] * &ubar) * sub.alpha[(i, j)];
                        }
                        w
                    })
                    .collect()
            })
            .collect();
        let scale = 1.0 + xbar_next.norm() + xbar.norm();
        let wbar = deep_project(&noise, m).unwrap();
        let deep_err = (&xbar_next - &agg.a * &xbar - &agg.b * &ubar - wbar).norm();
        if deep_err > 1e-9 * scale {
            return Err(format!("deep dynamics off by {deep_err} at t={}", t + 1));
        }
        let dx = gauge_residual(x, m).unwrap();
        let du = gauge_residual(u, m).unwrap();
        let dx_next = gauge_residual(x_next, m).unwrap();
        let dw = gauge_residual(&noise, m).unwrap();
        for (s, sub) in m.subs.iter().enumerate() {
            for i in 0..sub.n {
                let err = (&dx_next[s][i] - &sub.a * &dx[s][i] - &sub.b * &du[s][i] - &dw[s][i]).norm();
                if err > 1e-9 * (1.0 + dx_next[s][i].norm()) {
                    return Err(format!("residual dynamics off by {err}: sub {s} agent {i}"));
                }
            }
        }
    }
    Ok(())
}

/// Sample second moments of gauge-transformed noise fields against the exact
/// covariances, entry by entry within `z` standard errors.
pub fn check_noise_moments(m: &TeamModel, draws: usize, z: f64, rng: &mut impl Rng) -> Result<(), String> {
    let factors: Vec<Mat> = m.subs.iter().map(|s| lqdst::linalg::sqrt_factor(&s.sigma_w)).collect();
    for (s, sub) in m.subs.iter().enumerate() {
        let i = 0;
        let k = sub.n - 1;
        let d = sub.dx;
        let moments = [
            NoiseMoment::Residual { i, k: i },
            NoiseMoment::Residual { i, k },
            NoiseMoment::Deep { j: 0, m: sub.f - 1 },
            NoiseMoment::Cross { i: k, j: 0 },
        ];
        let mut sums = vec![Mat::zeros(d, d); 4];
        let mut squares = vec![Mat::zeros(d, d); 4];
        for _ in 0..draws {
            let field: AgentField = m
                .subs
                .iter()
                .zip(&factors)
                .map(|(sp, l)| (0..sp.n).map(|_| l * gaussian_matrix(rng, sp.dx, 1, 1.0).column(0)).collect())
                .collect();
            let res = gauge_residual(&field, m).unwrap();
            let deep = deep_project(&field, m).unwrap();
            let wbar = |j: usize| deep.rows(m.state_offset(s, j), d).into_owned();
            let products = [
                &res[s][i] * res[s][i].transpose(),
                &res[s][i] * res[s][k].transpose(),
                wbar(0) * wbar(sub.f - 1).transpose(),
                &res[s][k] * wbar(0).transpose(),
            ];
            for ((acc, sq), p) in sums.iter_mut().zip(squares.iter_mut()).zip(products) {
                *acc += &p;
                *sq += p.component_mul(&p);
            }
        }
        let n = draws as f64;
        for ((moment, sum), sq) in moments.iter().zip(&sums).zip(&squares) {
            let exact = noise_covariance(m, s, *moment).map_err(|e| e.to_string())?;
            let mean = sum / n;
            for r in 0..d {
                for c in 0..d {
                    let var = (sq[(r, c)] / n - mean[(r, c)].powi(2)).max(0.0);
                    let se = (var / n).sqrt();
                    let diff = (mean[(r, c)] - exact[(r, c)]).abs();
                    if diff > z * se + 1e-12 {
                        return Err(format!(
                            "{moment:?} of sub {s} entry ({r},{c}): sample {} exact {} se {se}",
                            mean[(r, c)],
                            exact[(r, c)]
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}
