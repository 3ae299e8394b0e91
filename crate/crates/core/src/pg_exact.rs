//! Model-based policy evaluation, exact policy gradients and the policy
//! gradient / natural policy gradient loops.
//!
//! All quantities here use feedback gains `K = -θ` (see [`crate::policy`]):
//! the closed loop of a block is `F = A - B K`. For each block the policy
//! value `P_K` solves
//!
//! ```text
//! P = Q + Kᵀ R K + Fᵀ P̃ F,    P̃ = P (I - 2 β W P)⁻¹,
//! ```
//!
//! and with `M = I - 2 β W P`, `G = M⁻¹ F` the state correlation is the
//! fixed point `Σ = c M⁻¹ W + G Σ Gᵀ` (the series starts at the order-zero
//! noise term). The gradient is `∇_K J = 2 E Σ` with
//! `E = (R + Bᵀ P̃ B) K - Bᵀ P̃ A`.
//!
//! The block cost is `-(c / 2β) log det(I - 2 β W P)` (which tends to
//! `c tr(W P)` as `β → 0`). For a residual block `β = λ μ/n`, `W = Σ_w(s)`
//! and `c = (n - f) μ / n`, the number of independent residual copies times
//! their cost weight; for the deep block `β = λ`, `W = 𝚺_w` and `c = 1`.

use crate::error::{Block, Error, Result};
use crate::linalg::{spectral_radius, sqrt_factor, symmetrize, Mat};
use crate::model::{aggregate, AggregatedModel, TeamModel};
use crate::policy::Policy;
use crate::riccati::{self, risk_adjusted};
use crate::trace::{RunTrace, TraceRow};

const EVAL_MAX_ITERS: usize = 1_000_000;
const EVAL_TOL: f64 = 1e-15;
/// Stopping rule of the state-correlation series: `‖term‖ ≤ SIGMA_TOL ‖Σ‖`.
pub const SIGMA_TOL: f64 = 1e-12;
const SIGMA_MAX_TERMS: usize = 1_000_000;
const ARMIJO_C: f64 = 1e-4;
pub const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy)]
struct BlockSystem<'a> {
    a: &'a Mat,
    b: &'a Mat,
    q: &'a Mat,
    r: &'a Mat,
    noise: &'a Mat,
    risk: f64,
    weight: f64,
}

fn systems(agg: &AggregatedModel, lambda: f64) -> (Vec<BlockSystem<'_>>, BlockSystem<'_>) {
    let local = agg
        .residual
        .iter()
        .map(|r| BlockSystem {
            a: &r.a,
            b: &r.b,
            q: &r.q,
            r: &r.r,
            noise: &r.sigma_w,
            risk: lambda * r.risk_weight(),
            weight: r.cost_weight(),
        })
        .collect();
    let deep = BlockSystem {
        a: &agg.a,
        b: &agg.b,
        q: &agg.q,
        r: &agg.r,
        noise: &agg.sigma_w,
        risk: lambda,
        weight: 1.0,
    };
    (local, deep)
}

/// Evaluation of one block under a feedback gain.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockEvaluation {
    pub p: Mat,
    pub p_tilde: Mat,
    /// Weighted state correlation `Σ`.
    pub sigma: Mat,
    /// `E = (R + Bᵀ P̃ B) K - Bᵀ P̃ A`.
    pub e: Mat,
    pub cost: f64,
    /// Closed-loop spectral radius.
    pub radius: f64,
    /// False when the block carries no cost (a residual block with `n = f`).
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    pub local: Vec<BlockEvaluation>,
    pub deep: BlockEvaluation,
    /// `J(θ)`: trace formula at `λ = 0`, log-determinant form otherwise.
    pub cost: f64,
    pub lambda: f64,
}

fn evaluate_block(sys: BlockSystem<'_>, k: &Mat, block: Block) -> Result<BlockEvaluation> {
    let f = sys.a - sys.b * k;
    let radius = spectral_radius(&f);
    if sys.weight == 0.0 {
        // A population with as many features as agents has no residual
        // dynamics, so its local gain never acts.
        let d = f.nrows();
        return Ok(BlockEvaluation {
            p: Mat::zeros(d, d),
            p_tilde: Mat::zeros(d, d),
            sigma: Mat::zeros(d, d),
            e: Mat::zeros(k.nrows(), k.ncols()),
            cost: 0.0,
            radius,
            active: false,
        });
    }
    if !(radius < 1.0) {
        return Err(Error::UnstablePolicy { block, radius });
    }
    let x = symmetrize(&(sys.q + k.transpose() * sys.r * k));
    let ft = f.transpose();
    let mut p = x.clone();
    let mut converged = false;
    let mut diff = f64::INFINITY;
    for it in 0..EVAL_MAX_ITERS {
        let pt = risk_adjusted(&p, sys.noise, sys.risk).ok_or(Error::FeasibilityLost { block, iteration: it })?;
        let next = symmetrize(&(&x + &ft * pt * &f));
        diff = (&next - &p).norm();
        let done = diff <= EVAL_TOL * (1.0 + next.norm()) || (it > 10 && diff == 0.0);
        p = next;
        if !diff.is_finite() {
            break;
        }
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "policy evaluation",
            iterations: EVAL_MAX_ITERS,
            residual: diff,
        });
    }
    let p_tilde = risk_adjusted(&p, sys.noise, sys.risk).ok_or(Error::FeasibilityLost {
        block,
        iteration: EVAL_MAX_ITERS,
    })?;

    let d = p.nrows();
    let m_inv = if sys.risk == 0.0 {
        Mat::identity(d, d)
    } else {
        (Mat::identity(d, d) - sys.noise * &p * (2.0 * sys.risk))
            .try_inverse()
            .ok_or(Error::FeasibilityLost { block, iteration: 0 })?
    };
    let g = &m_inv * &f;
    let base = symmetrize(&(&m_inv * sys.noise * sys.weight));
    let sigma = correlation_series(&g, &base)?;

    let bt_pt = sys.b.transpose() * &p_tilde;
    let e = (sys.r + &bt_pt * sys.b) * k - &bt_pt * sys.a;

    let cost = if sys.risk == 0.0 {
        sys.weight * (sys.noise * &p).trace()
    } else {
        // log det(I - 2βWP) = Σ ln(1 - 2β eig(Lᵀ P L)) with W = L Lᵀ.
        let l = sqrt_factor(sys.noise);
        let eig = symmetrize(&(l.transpose() * &p * &l)).symmetric_eigenvalues();
        let logdet: f64 = eig.iter().map(|v| (-2.0 * sys.risk * v).ln_1p()).sum();
        -sys.weight * logdet / (2.0 * sys.risk)
    };
    Ok(BlockEvaluation {
        p,
        p_tilde,
        sigma,
        e,
        cost,
        radius,
        active: sys.weight > 0.0,
    })
}

/// `Σ = Σ_{t≥0} Gᵗ base (Gᵀ)ᵗ`, summed term by term.
fn correlation_series(g: &Mat, base: &Mat) -> Result<Mat> {
    let mut sigma = base.clone();
    let mut term = base.clone();
    let gt = g.transpose();
    for _ in 0..SIGMA_MAX_TERMS {
        term = g * term * &gt;
        let tn = term.norm();
        sigma += &term;
        if tn <= SIGMA_TOL * sigma.norm() || tn == 0.0 {
            return Ok(symmetrize(&sigma));
        }
    }
    Err(Error::NoConvergence {
        what: "state correlation series",
        iterations: SIGMA_MAX_TERMS,
        residual: term.norm(),
    })
}

/// Evaluate a policy at risk factor `lambda`.
pub fn evaluate(m: &TeamModel, p: &Policy, lambda: f64) -> Result<PolicyEvaluation> {
    let agg = aggregate(m)?;
    evaluate_aggregated(&agg, p, lambda)
}

pub fn evaluate_aggregated(agg: &AggregatedModel, p: &Policy, lambda: f64) -> Result<PolicyEvaluation> {
    if p.theta.len() != agg.residual.len() {
        return Err(Error::DimensionMismatch {
            what: "policy sub-population count".into(),
            expected: agg.residual.len().to_string(),
            found: p.theta.len().to_string(),
        });
    }
    let k = p.feedback();
    let (local_sys, deep_sys) = systems(agg, lambda);
    let local = local_sys
        .into_iter()
        .zip(&k.theta)
        .enumerate()
        .map(|(s, (sys, ks))| evaluate_block(sys, ks, Block::Local(s)))
        .collect::<Result<Vec<_>>>()?;
    let deep = evaluate_block(deep_sys, &k.theta_bar, Block::Deep)?;
    let cost = local.iter().map(|b| b.cost).sum::<f64>() + deep.cost;
    Ok(PolicyEvaluation {
        local,
        deep,
        cost,
        lambda,
    })
}

/// `J(θ)` at risk factor `lambda`.
pub fn cost(m: &TeamModel, p: &Policy, lambda: f64) -> Result<f64> {
    evaluate(m, p, lambda).map(|e| e.cost)
}

/// Exact gradient with respect to the feedback gains `K = -θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub grad_theta: Vec<Mat>,
    pub grad_theta_bar: Mat,
    pub e_theta: Vec<Mat>,
    pub e_bold: Mat,
    pub norm: f64,
}

impl GradientBundle {
    /// Gradient blocks as a policy-shaped value (feedback coordinates).
    pub fn as_policy(&self) -> Policy {
        Policy {
            theta: self.grad_theta.clone(),
            theta_bar: self.grad_theta_bar.clone(),
        }
    }

    /// Gradient with respect to the action-convention gains `θ`.
    pub fn action_gradient(&self) -> Policy {
        self.as_policy().scale(-1.0)
    }
}

pub fn gradient_from(ev: &PolicyEvaluation) -> GradientBundle {
    let grad = |b: &BlockEvaluation| &b.e * &b.sigma * 2.0;
    let grad_theta: Vec<Mat> = ev.local.iter().map(grad).collect();
    let grad_theta_bar = grad(&ev.deep);
    let norm = grad_theta
        .iter()
        .chain(std::iter::once(&grad_theta_bar))
        .map(|g| g.norm_squared())
        .sum::<f64>()
        .sqrt();
    GradientBundle {
        grad_theta,
        grad_theta_bar,
        e_theta: ev.local.iter().map(|b| b.e.clone()).collect(),
        e_bold: ev.deep.e.clone(),
        norm,
    }
}

pub fn gradient(m: &TeamModel, p: &Policy, lambda: f64) -> Result<GradientBundle> {
    evaluate(m, p, lambda).map(|ev| gradient_from(&ev))
}

/// Plain gradient step `K ← K - η ∇J`, returned in the action convention.
pub fn pg_step(p: &Policy, g: &GradientBundle, eta: f64) -> Policy {
    p.add_scaled(eta, &g.as_policy())
}

/// Natural-gradient direction `∇J Σ⁻¹ = 2E` in feedback coordinates.
/// Blocks that carry no cost get a zero direction.
pub fn natural_direction(g: &GradientBundle, ev: &PolicyEvaluation) -> Result<Policy> {
    let dir = |b: &BlockEvaluation, e: &Mat, block: Block| -> Result<Mat> {
        if !b.active {
            return Ok(Mat::zeros(e.nrows(), e.ncols()));
        }
        if b.sigma.clone().cholesky().is_none() {
            return Err(Error::SingularCovariance { block });
        }
        Ok(e * 2.0)
    };
    Ok(Policy {
        theta: ev
            .local
            .iter()
            .zip(&g.e_theta)
            .enumerate()
            .map(|(s, (b, e))| dir(b, e, Block::Local(s)))
            .collect::<Result<_>>()?,
        theta_bar: dir(&ev.deep, &g.e_bold, Block::Deep)?,
    })
}

/// Natural gradient step `K ← K - η ∇J Σ⁻¹`.
pub fn npg_step(p: &Policy, g: &GradientBundle, ev: &PolicyEvaluation, eta: f64) -> Result<Policy> {
    Ok(p.add_scaled(eta, &natural_direction(g, ev)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Pg,
    Npg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub algo: Algorithm,
    pub eta: f64,
    pub max_iters: usize,
    /// Stop once `‖∇J‖_F ≤ tol`.
    pub tol: f64,
    /// Armijo backtracking (step halving) on the exact cost.
    pub backtracking: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIterations,
    /// No step length in the halving schedule decreased the cost.
    LineSearchStalled,
    /// The step at this iteration left the stable/feasible set; the returned
    /// policy is the last stable iterate.
    UnstableIterate { iter: usize },
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub policy: Policy,
    pub trace: RunTrace,
    pub status: RunStatus,
}

/// Reference optimum used for gaps and gain errors in traces.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub policy: Policy,
    pub cost: f64,
}

impl Oracle {
    pub fn new(m: &TeamModel, lambda: f64) -> Result<Oracle> {
        let sol = riccati::solve_with_lambda(m, lambda)?;
        let policy = riccati::optimal_policy(&sol);
        let cost = cost(m, &policy, lambda)?;
        Ok(Oracle { policy, cost })
    }
}

/// Model-based PG / NPG from `p0` at the model's risk factor.
pub fn run(m: &TeamModel, p0: &Policy, cfg: &RunConfig) -> Result<RunOutcome> {
    if !(cfg.eta > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {}", cfg.eta)));
    }
    p0.check_dims(m)?;
    let agg = aggregate(m)?;
    let lambda = m.lambda;
    let oracle = Oracle::new(m, lambda).ok();

    let mut policy = p0.clone();
    let mut ev = evaluate_aggregated(&agg, &policy, lambda)?;
    let mut trace = RunTrace::model_based();
    let mut iter = 0;
    let status = loop {
        let g = gradient_from(&ev);
        trace.push(TraceRow {
            iter,
            cost: ev.cost,
            gap: oracle.as_ref().map(|o| ev.cost - o.cost),
            grad_norm: g.norm,
            gain_err: oracle.as_ref().map(|o| policy.distance(&o.policy)),
            rejected_samples: None,
            estimate_stderr: None,
        });
        if g.norm <= cfg.tol {
            break RunStatus::Converged;
        }
        if iter >= cfg.max_iters {
            break RunStatus::MaxIterations;
        }
        let direction = match cfg.algo {
            Algorithm::Pg => g.as_policy(),
            Algorithm::Npg => natural_direction(&g, &ev)?,
        };
        iter += 1;

        if !cfg.backtracking {
            let candidate = policy.add_scaled(cfg.eta, &direction);
            match evaluate_aggregated(&agg, &candidate, lambda) {
                Ok(next) => {
                    policy = candidate;
                    ev = next;
                    continue;
                }
                Err(e) if e.is_numerical() => break RunStatus::UnstableIterate { iter },
                Err(e) => return Err(e),
            }
        }

        let slope = g.as_policy().dot(&direction);
        let mut eta = cfg.eta;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = policy.add_scaled(eta, &direction);
            if let Ok(next) = evaluate_aggregated(&agg, &candidate, lambda) {
                if next.cost <= ev.cost - ARMIJO_C * eta * slope {
                    accepted = Some((candidate, next));
                    break;
                }
            }
            eta *= 0.5;
        }
        match accepted {
            Some((candidate, next)) => {
                policy = candidate;
                ev = next;
            }
            None => break RunStatus::LineSearchStalled,
        }
    };
    Ok(RunOutcome {
        policy,
        trace,
        status,
    })
}
