//! Deep Riccati equations: one equation per residual subsystem plus one for
//! the deep-state subsystem, in risk-sensitive form.
//!
//! Every equation has the shape
//!
//! ```text
//! P  = Q + Aᵀ P̃ A - Aᵀ P̃ B (R + Bᵀ P̃ B)⁻¹ Bᵀ P̃ A
//! P̃ = P (I - 2 β W P)⁻¹
//! ```
//!
//! with `β = λ μ(s)/n(s)`, `W = Σ_w(s)` for a residual subsystem and
//! `β = λ`, `W = 𝚺_w` for the deep subsystem. Gains are stored positive,
//! `K* = (R + Bᵀ P̃ B)⁻¹ Bᵀ P̃ A`, i.e. for the closed loop `A - B K*`.

use crate::error::{Block, Error, Result};
use crate::linalg::{block_diag, symmetrize, Mat};
use crate::model::{aggregate, is_weakly_coupled, AggregatedModel, ResidualSubsystem, TeamModel};
use crate::policy::Policy;

pub const MAX_ITERATIONS: usize = 100_000;
/// Relative fixed-point tolerance, `‖P_{k+1} - P_k‖_F ≤ TOL (1 + ‖P_k‖_F)`.
pub const TOLERANCE: f64 = 1e-13;

/// One risk-sensitive Riccati equation.
#[derive(Debug, Clone, Copy)]
pub struct RiccatiProblem<'a> {
    pub a: &'a Mat,
    pub b: &'a Mat,
    pub q: &'a Mat,
    pub r: &'a Mat,
    pub noise: &'a Mat,
    /// Effective risk factor `β`.
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSolution {
    pub p: Mat,
    pub p_tilde: Mat,
    /// Positive feedback gain `K*`.
    pub gain: Mat,
    pub iterations: usize,
    pub residual: f64,
}

/// `P̃ = P (I - 2 β W P)⁻¹`, or `None` when `W⁻¹ - 2 β P` is not positive
/// definite (equivalently `I - 2 β W P` has an eigenvalue ≤ 0).
pub fn risk_adjusted(p: &Mat, noise: &Mat, risk: f64) -> Option<Mat> {
    if risk == 0.0 {
        return Some(p.clone());
    }
    let w_inv = noise.clone().try_inverse()?;
    symmetrize(&(w_inv - p * (2.0 * risk))).cholesky()?;
    let d = p.nrows();
    let m = Mat::identity(d, d) - noise * p * (2.0 * risk);
    Some(symmetrize(&(p * m.try_inverse()?)))
}

impl RiccatiProblem<'_> {
    /// One application of the Riccati map. Returns `(P_next, P̃, K)`.
    fn step(&self, p: &Mat) -> Option<(Mat, Mat, Mat)> {
        let pt = risk_adjusted(p, self.noise, self.risk)?;
        let bt_pt = self.b.transpose() * &pt;
        let gram = self.r + &bt_pt * self.b;
        let gain = gram.cholesky()?.solve(&(&bt_pt * self.a));
        let at_pt_a = self.a.transpose() * &pt * self.a;
        let correction = (self.a.transpose() * bt_pt.transpose()) * &gain;
        Some((symmetrize(&(self.q + at_pt_a - correction)), pt, gain))
    }

    /// Value iteration from `P₀ = Q`, checking risk feasibility every step.
    pub fn solve(&self, block: Block) -> Result<BlockSolution> {
        let mut p = symmetrize(self.q);
        let mut residual = f64::INFINITY;
        for it in 1..=MAX_ITERATIONS {
            let (next, _, _) = self.step(&p).ok_or(Error::FeasibilityLost {
                block,
                iteration: it - 1,
            })?;
            residual = (&next - &p).norm();
            let scale = 1.0 + p.norm();
            p = next;
            if !residual.is_finite() {
                break;
            }
            if residual <= TOLERANCE * scale {
                let (_, p_tilde, gain) = self.step(&p).ok_or(Error::FeasibilityLost {
                    block,
                    iteration: it,
                })?;
                return Ok(BlockSolution {
                    p,
                    p_tilde,
                    gain,
                    iterations: it,
                    residual,
                });
            }
        }
        Err(Error::NoConvergence {
            what: "Riccati value iteration",
            iterations: MAX_ITERATIONS,
            residual,
        })
    }

    /// `‖Ric(P) - P‖_F` for a candidate solution.
    pub fn residual(&self, p: &Mat) -> Option<f64> {
        self.step(p).map(|(next, _, _)| (next - p).norm())
    }
}

/// Riccati solution of the whole team.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: Vec<Mat>,
    pub p_tilde: Vec<Mat>,
    pub p_bold: Mat,
    pub p_tilde_bold: Mat,
    /// Positive residual gains `θ*(s)` (closed loop `A - B θ*`).
    pub theta_star: Vec<Mat>,
    /// Positive deep gain `𝛉̄*` (closed loop `𝐀̄ - 𝐁̄ 𝛉̄*`).
    pub theta_bar_star: Mat,
    pub iterations: usize,
    pub residual: f64,
}

pub fn residual_problem(sub: &ResidualSubsystem, lambda: f64) -> RiccatiProblem<'_> {
    RiccatiProblem {
        a: &sub.a,
        b: &sub.b,
        q: &sub.q,
        r: &sub.r,
        noise: &sub.sigma_w,
        risk: lambda * sub.risk_weight(),
    }
}

pub fn deep_problem(agg: &AggregatedModel, lambda: f64) -> RiccatiProblem<'_> {
    RiccatiProblem {
        a: &agg.a,
        b: &agg.b,
        q: &agg.q,
        r: &agg.r,
        noise: &agg.sigma_w,
        risk: lambda,
    }
}

/// Riccati equation of the residual subsystem of sub-population `s`.
pub fn solve_delta_riccati(sub: &ResidualSubsystem, s: usize, lambda: f64) -> Result<BlockSolution> {
    residual_problem(sub, lambda).solve(Block::Local(s))
}

/// Riccati equation of the deep-state subsystem.
pub fn solve_deep_riccati(agg: &AggregatedModel, lambda: f64) -> Result<BlockSolution> {
    deep_problem(agg, lambda).solve(Block::Deep)
}

fn assemble(local: Vec<BlockSolution>, deep: BlockSolution) -> RiccatiSolution {
    let iterations = local.iter().map(|b| b.iterations).chain([deep.iterations]).max().unwrap_or(0);
    let residual = local.iter().map(|b| b.residual).chain([deep.residual]).fold(0.0, f64::max);
    let mut sol = RiccatiSolution {
        p: Vec::new(),
        p_tilde: Vec::new(),
        p_bold: deep.p,
        p_tilde_bold: deep.p_tilde,
        theta_star: Vec::new(),
        theta_bar_star: deep.gain,
        iterations,
        residual,
    };
    for b in local {
        sol.p.push(b.p);
        sol.p_tilde.push(b.p_tilde);
        sol.theta_star.push(b.gain);
    }
    sol
}

/// Solve all `S + 1` deep Riccati equations of a model at risk factor `lambda`.
pub fn solve_with_lambda(m: &TeamModel, lambda: f64) -> Result<RiccatiSolution> {
    let agg = aggregate(m)?;
    let local = agg
        .residual
        .iter()
        .enumerate()
        .map(|(s, sub)| solve_delta_riccati(sub, s, lambda))
        .collect::<Result<Vec<_>>>()?;
    let deep = solve_deep_riccati(&agg, lambda)?;
    Ok(assemble(local, deep))
}

/// Solve the deep Riccati equations at the model's own risk factor.
pub fn solve(m: &TeamModel) -> Result<RiccatiSolution> {
    solve_with_lambda(m, m.lambda)
}

/// Weakly coupled models: the deep equation splits into one small equation
/// per (sub-population, feature) pair, reassembled block-diagonally with
/// weight `μ(s)`.
pub fn solve_weakly_coupled(m: &TeamModel, lambda: f64) -> Result<RiccatiSolution> {
    let agg = aggregate(m)?;
    if !is_weakly_coupled(m) {
        return Err(Error::NotWeaklyCoupled);
    }
    let local = agg
        .residual
        .iter()
        .enumerate()
        .map(|(s, sub)| solve_delta_riccati(sub, s, lambda))
        .collect::<Result<Vec<_>>>()?;

    let mut p_blocks = Vec::new();
    let mut pt_blocks = Vec::new();
    let mut gains = Vec::new();
    let mut iterations = 0;
    let mut residual: f64 = 0.0;
    for (s, sub) in m.subs.iter().enumerate() {
        for j in 0..sub.f {
            let xo = m.state_offset(s, j);
            let uo = m.action_offset(s, j);
            let a = &sub.a + sub.abar[j].columns(xo, sub.dx);
            let b = &sub.b + sub.bbar[j].columns(uo, sub.du);
            let q = &sub.q + m.qbar_cross.view((xo, xo), (sub.dx, sub.dx)) / sub.mu;
            let r = &sub.r + m.rbar_cross.view((uo, uo), (sub.du, sub.du)) / sub.mu;
            let problem = RiccatiProblem {
                a: &a,
                b: &b,
                q: &q,
                r: &r,
                noise: &sub.sigma_w,
                risk: lambda * sub.mu / sub.n as f64,
            };
            let sol = problem.solve(Block::Deep)?;
            iterations = iterations.max(sol.iterations);
            residual = residual.max(sol.residual);
            p_blocks.push(sol.p * sub.mu);
            pt_blocks.push(sol.p_tilde * sub.mu);
            gains.push(sol.gain);
        }
    }
    let deep = BlockSolution {
        p: block_diag(p_blocks.iter()),
        p_tilde: block_diag(pt_blocks.iter()),
        gain: block_diag(gains.iter()),
        iterations,
        residual,
    };
    Ok(assemble(local, deep))
}

/// The optimal team policy in the action convention (`u = θ x`), i.e. the
/// negated Riccati gains.
pub fn optimal_policy(sol: &RiccatiSolution) -> Policy {
    Policy {
        theta: sol.theta_star.iter().map(|k| -k).collect(),
        theta_bar: -&sol.theta_bar_star,
    }
}
