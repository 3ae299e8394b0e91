//! Deep states, the gauge (residual) transformation and its exact noise
//! covariances.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::TeamModel;
use crate::policy::Policy;

pub type Vector = DVector<f64>;

/// One vector per agent, grouped by sub-population.
pub type AgentField = Vec<Vec<Vector>>;

/// Stacked deep vector, ordered by sub-population then feature.
pub type DeepVector = Vector;

fn field_dims(field: &AgentField, m: &TeamModel) -> Result<Vec<usize>> {
    if field.len() != m.num_subs() {
        return Err(Error::DimensionMismatch {
            what: "field sub-population count".into(),
            expected: m.num_subs().to_string(),
            found: field.len().to_string(),
        });
    }
    let mut dims = Vec::with_capacity(field.len());
    for (s, (agents, p)) in field.iter().zip(&m.subs).enumerate() {
        if agents.len() != p.n {
            return Err(Error::DimensionMismatch {
                what: format!("field agent count of sub-population {s}"),
                expected: p.n.to_string(),
                found: agents.len().to_string(),
            });
        }
        let d = agents.first().map_or(0, |v| v.len());
        if let Some(bad) = agents.iter().find(|v| v.len() != d) {
            return Err(Error::DimensionMismatch {
                what: format!("field vectors of sub-population {s}"),
                expected: d.to_string(),
                found: bad.len().to_string(),
            });
        }
        dims.push(d);
    }
    Ok(dims)
}

/// Influence-weighted regressions `(1/n) Σ_i α^{i,j} v^i` for every feature.
pub fn deep_project(field: &AgentField, m: &TeamModel) -> Result<DeepVector> {
    let dims = field_dims(field, m)?;
    let total: usize = m.subs.iter().zip(&dims).map(|(p, d)| p.f * d).sum();
    let mut out = Vector::zeros(total);
    let mut off = 0;
    for ((agents, p), &d) in field.iter().zip(&m.subs).zip(&dims) {
        let inv_n = 1.0 / p.n as f64;
        for j in 0..p.f {
            let mut acc = out.rows_mut(off, d);
            for (i, v) in agents.iter().enumerate() {
                acc.axpy(p.alpha[(i, j)] * inv_n, v, 1.0);
            }
            off += d;
        }
    }
    Ok(out)
}

/// `Δv^i = v^i - Σ_j α^{i,j} v̄^j` for every agent.
pub fn gauge_residual(field: &AgentField, m: &TeamModel) -> Result<AgentField> {
    let dims = field_dims(field, m)?;
    let deep = deep_project(field, m)?;
    let mut off = 0;
    let mut out = Vec::with_capacity(field.len());
    for ((agents, p), &d) in field.iter().zip(&m.subs).zip(&dims) {
        let mut res = Vec::with_capacity(agents.len());
        for (i, v) in agents.iter().enumerate() {
            let mut dv = v.clone();
            for j in 0..p.f {
                dv.axpy(-p.alpha[(i, j)], &deep.rows(off + j * d, d), 1.0);
            }
            res.push(dv);
        }
        off += p.f * d;
        out.push(res);
    }
    Ok(out)
}

/// Per-agent actions of a stationary policy given agent states and the deep
/// state: `u^i = θ(s)(x^i - Σ_j α^{i,j} x̄^j(s)) + Σ_j α^{i,j} θ̄^{(s,j)} 𝐱̄`.
/// Gains are applied exactly as stored.
pub fn expand_policy(p: &Policy, x: &AgentField, xbar: &DeepVector, m: &TeamModel) -> Result<AgentField> {
    p.check_dims(m)?;
    let dims = field_dims(x, m)?;
    for (s, (&d, sub)) in dims.iter().zip(&m.subs).enumerate() {
        if d != sub.dx {
            return Err(Error::DimensionMismatch {
                what: format!("state field of sub-population {s}"),
                expected: sub.dx.to_string(),
                found: d.to_string(),
            });
        }
    }
    if xbar.len() != m.deep_state_dim() {
        return Err(Error::DimensionMismatch {
            what: "deep state".into(),
            expected: m.deep_state_dim().to_string(),
            found: xbar.len().to_string(),
        });
    }
    let ubar = &p.theta_bar * xbar;
    let mut out = Vec::with_capacity(x.len());
    for (s, (agents, sub)) in x.iter().zip(&m.subs).enumerate() {
        let theta = &p.theta[s];
        let mut acts = Vec::with_capacity(agents.len());
        for (i, xi) in agents.iter().enumerate() {
            let mut dx = xi.clone();
            let mut u = Vector::zeros(sub.du);
            for j in 0..sub.f {
                let a = sub.alpha[(i, j)];
                dx.axpy(-a, &xbar.rows(m.state_offset(s, j), sub.dx), 1.0);
                u.axpy(a, &ubar.rows(m.action_offset(s, j), sub.du), 1.0);
            }
            u.gemv(1.0, theta, &dx, 1.0);
            acts.push(u);
        }
        out.push(acts);
    }
    Ok(out)
}

/// Which second moment of the gauge-transformed noise to return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMoment {
    /// `E[Δw^i (Δw^k)ᵀ]`; `i == k` gives the residual variance.
    Residual { i: usize, k: usize },
    /// `E[w̄^j (w̄^m)ᵀ]`.
    Deep { j: usize, m: usize },
    /// `E[Δw^i (w̄^j)ᵀ]`, identically zero.
    Cross { i: usize, j: usize },
}

/// Exact covariance of the gauge-transformed noise of sub-population `s`.
pub fn noise_covariance(m: &TeamModel, s: usize, moment: NoiseMoment) -> Result<Mat> {
    let sub = m
        .subs
        .get(s)
        .ok_or_else(|| Error::IndexOutOfRange(format!("sub-population {s}")))?;
    let n = sub.n as f64;
    let agent = |i: usize| {
        if i < sub.n {
            Ok(i)
        } else {
            Err(Error::IndexOutOfRange(format!("agent {i} of sub-population {s}")))
        }
    };
    let feature = |j: usize| {
        if j < sub.f {
            Ok(j)
        } else {
            Err(Error::IndexOutOfRange(format!("feature {j} of sub-population {s}")))
        }
    };
    let zero = Mat::zeros(sub.dx, sub.dx);
    Ok(match moment {
        NoiseMoment::Residual { i, k } => {
            let (i, k) = (agent(i)?, agent(k)?);
            let overlap: f64 = (0..sub.f).map(|j| sub.alpha[(i, j)] * sub.alpha[(k, j)]).sum();
            let scale = if i == k { 1.0 - overlap / n } else { -overlap / n };
            &sub.sigma_w * scale
        }
        NoiseMoment::Deep { j, m: jm } => {
            let (j, jm) = (feature(j)?, feature(jm)?);
            if j == jm {
                &sub.sigma_w / n
            } else {
                zero
            }
        }
        NoiseMoment::Cross { i, j } => {
            agent(i)?;
            feature(j)?;
            zero
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn scalar_field(values: &[f64]) -> AgentField {
        vec![values.iter().map(|&v| Vector::from_element(1, v)).collect()]
    }

    fn uniform_model(n: usize, sigma: f64) -> TeamModel {
        let mut m = presets::example2().model;
        m.subs[0].n = n;
        m.subs[0].alpha = Mat::from_element(n, 1, 1.0);
        m.subs[0].sigma_w = Mat::from_element(1, 1, sigma);
        m
    }

    #[test]
    fn constant_field_projects_to_constant() {
        let m = uniform_model(5, 1.0);
        let d = deep_project(&scalar_field(&[2.5; 5]), &m).unwrap();
        assert!((d[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn influence_factors_project_to_one() {
        let m = presets::example1().model;
        let vals: Vec<f64> = m.subs[0].alpha.column(0).iter().copied().collect();
        let d = deep_project(&scalar_field(&vals), &m).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_field_matches_loop_sum() {
        let m = crate::random::random_model(&mut crate::random::rng(3), &crate::random::ModelShape {
            subs: 1,
            max_f: 2,
            max_n: 4,
            max_dx: 2,
            max_du: 2,
            weakly_coupled: false,
        });
        let p = &m.subs[0];
        let field: AgentField = vec![(0..p.n)
            .map(|i| Vector::from_fn(p.dx, |r, _| (i * 7 + r * 3) as f64 * 0.1 - 0.4))
            .collect()];
        let d = deep_project(&field, &m).unwrap();
        for j in 0..p.f {
            for r in 0..p.dx {
                let mut sum = 0.0;
                for i in 0..p.n {
                    sum += p.alpha[(i, j)] * field[0][i][r];
                }
                assert!((d[j * p.dx + r] - sum / p.n as f64).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn residual_of_span_field_vanishes() {
        let m = presets::example1().model;
        let vals: Vec<f64> = m.subs[0].alpha.column(0).iter().map(|a| 3.0 * a).collect();
        let res = gauge_residual(&scalar_field(&vals), &m).unwrap();
        assert!(res[0].iter().all(|v| v[0].abs() < 1e-12));
    }

    #[test]
    fn two_agent_residual() {
        let m = uniform_model(2, 1.0);
        let (a, b) = (1.3, -0.4);
        let res = gauge_residual(&scalar_field(&[a, b]), &m).unwrap();
        assert!((res[0][0][0] - (a - b) / 2.0).abs() < 1e-15);
        assert!((res[0][1][0] - (b - a) / 2.0).abs() < 1e-15);
        let deep = deep_project(&res, &m).unwrap();
        assert!(deep[0].abs() < 1e-15);
    }

    #[test]
    fn zero_policy_gives_zero_actions() {
        let m = presets::example1().model;
        let x = scalar_field(&[1.0, -2.0, 0.5, 0.0, 1.0, 1.0, 2.0, 3.0, -1.0, 0.2]);
        let xbar = deep_project(&x, &m).unwrap();
        let u = expand_policy(&Policy::zeros(&m), &x, &xbar, &m).unwrap();
        assert!(u[0].iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn single_agent_action_uses_deep_gain() {
        let m = uniform_model(1, 1.0);
        let x = scalar_field(&[0.7]);
        let xbar = deep_project(&x, &m).unwrap();
        let p = Policy {
            theta: vec![Mat::from_element(1, 1, 5.0)],
            theta_bar: Mat::from_element(1, 1, -0.3),
        };
        let u = expand_policy(&p, &x, &xbar, &m).unwrap();
        assert!((u[0][0][0] - (-0.3 * 0.7)).abs() < 1e-15);
    }

    #[test]
    fn lemma_covariances() {
        let m = uniform_model(10, 0.1);
        let own = noise_covariance(&m, 0, NoiseMoment::Residual { i: 3, k: 3 }).unwrap();
        assert!((own[(0, 0)] - 0.09).abs() < 1e-15);
        let cross = noise_covariance(&m, 0, NoiseMoment::Residual { i: 3, k: 4 }).unwrap();
        assert!((cross[(0, 0)] + 0.01).abs() < 1e-15);
        let deep = noise_covariance(&m, 0, NoiseMoment::Deep { j: 0, m: 0 }).unwrap();
        assert!((deep[(0, 0)] - 0.01).abs() < 1e-15);

        let single = uniform_model(1, 0.1);
        let r = noise_covariance(&single, 0, NoiseMoment::Residual { i: 0, k: 0 }).unwrap();
        assert_eq!(r[(0, 0)], 0.0);

        assert!(matches!(
            noise_covariance(&m, 0, NoiseMoment::Residual { i: 10, k: 0 }),
            Err(Error::IndexOutOfRange(_))
        ));
        assert!(noise_covariance(&m, 1, NoiseMoment::Deep { j: 0, m: 0 }).is_err());
    }
}
