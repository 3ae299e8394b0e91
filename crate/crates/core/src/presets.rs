//! The two numerical examples: one population of ten agents with a single
//! feature, scalar dynamics and a shared deep-state cost.

use crate::linalg::Mat;
use crate::model::{SubPopulationSpec, TeamModel};
use crate::policy::Policy;
use crate::sim::InitMode;

/// A model together with the experiment settings it ships with.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub model: TeamModel,
    pub eta: f64,
    /// Rollout horizon `T`.
    pub horizon: usize,
    /// Perturbation samples `L`.
    pub samples: usize,
    /// Smoothing radius for model-free runs.
    pub radius: f64,
    pub iters: usize,
    pub init: InitMode,
    /// Initial policy for model-free runs, in the action convention.
    pub init_policy: Option<Policy>,
}

fn s(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

#[allow(clippy::too_many_arguments)]
fn scalar_team(a: f64, b: f64, q: f64, r: f64, qbar: f64, rbar: f64, noise: f64, alpha: &[f64], lambda: f64) -> TeamModel {
    let n = alpha.len();
    TeamModel {
        subs: vec![SubPopulationSpec {
            n,
            f: 1,
            dx: 1,
            du: 1,
            a: s(a),
            b: s(b),
            abar: vec![s(0.0)],
            bbar: vec![s(0.0)],
            q: s(q),
            r: s(r),
            mu: 1.0,
            sigma_x: s(noise),
            sigma_w: s(noise),
            alpha: Mat::from_column_slice(n, 1, alpha),
        }],
        qbar_cross: s(qbar),
        rbar_cross: s(rbar),
        lambda,
    }
}

/// Risk-sensitive example: `A = 0.9`, `B = 0.4`, `Q = R = R̄ = 1`, `Q̄ = 2`,
/// noise and initial variance 0.1, `λ = 0.1`, `η = 5`, `T = 10`, `L = 100`.
pub fn example1() -> Preset {
    let mut alpha = vec![0.5f64.sqrt(); 6];
    alpha.extend([1.5f64.sqrt(), 1.0, 2.0f64.sqrt(), 2.5f64.sqrt()]);
    Preset {
        name: "example1",
        model: scalar_team(0.9, 0.4, 1.0, 1.0, 2.0, 1.0, 0.1, &alpha, 0.1),
        eta: 5.0,
        horizon: 10,
        samples: 100,
        radius: 0.1,
        iters: 200,
        init: InitMode::Gaussian,
        init_policy: None,
    }
}

/// Risk-neutral learning example: `A = B = Q = 1`, `R = 2`, `Q̄ = 2`,
/// `R̄ = 1`, noise variance 0.02, initial states uniform on `[0, 0.1]`,
/// `η = 0.2`, `T = 10`, `L = 100`.
pub fn example2() -> Preset {
    let mut alpha = vec![0.1f64.sqrt(); 9];
    alpha.push(9.1f64.sqrt());
    Preset {
        name: "example2",
        model: scalar_team(1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 0.02, &alpha, 0.0),
        eta: 0.2,
        horizon: 10,
        samples: 100,
        radius: 0.1,
        iters: 500,
        init: InitMode::Uniform { low: 0.0, high: 0.1 },
        init_policy: Some(Policy {
            theta: vec![s(-1.5)],
            theta_bar: s(-1.5),
        }),
    }
}

pub fn by_name(name: &str) -> Option<Preset> {
    match name {
        "example1" => Some(example1()),
        "example2" => Some(example2()),
        _ => None,
    }
}
