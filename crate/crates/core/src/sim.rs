//! n-agent simulation under a stationary team policy, team-cost evaluation
//! and Monte-Carlo estimates of the risk-neutral and risk-sensitive
//! objectives.
//!
//! Time runs `t = 1..=T`; the stage cost `c̄_t` is charged on the state and
//! action at `t`. Estimators average the whole horizon with no burn-in.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gauge::{deep_project, AgentField, Vector};
use crate::linalg::{sqrt_factor, Mat};
use crate::model::{aggregate, validate_model, TeamModel};
use crate::policy::Policy;
use crate::seed;

/// States larger than this abort the rollout.
pub const OVERFLOW_LIMIT: f64 = 1e12;

/// Initial-state distribution of every agent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InitMode {
    /// `x₁ ~ N(0, Σ_x(s))`.
    #[default]
    Gaussian,
    /// Each component i.i.d. uniform on `[low, high]`.
    Uniform { low: f64, high: f64 },
}

struct SubData {
    n: usize,
    f: usize,
    dx: usize,
    du: usize,
    mu: f64,
    a: Mat,
    b: Mat,
    q: Mat,
    r: Mat,
    alpha: Mat,
    abar: Vec<Mat>,
    bbar: Vec<Mat>,
    noise_factor: Mat,
    init_factor: Mat,
    x_off: usize,
    u_off: usize,
}

/// Model unpacked for fast stepping. Policies are checked against the
/// model once, at construction, and then passed per rollout.
pub(crate) struct Engine {
    subs: Vec<SubData>,
    qbar: Mat,
    rbar: Mat,
    dxt: usize,
    dut: usize,
}

/// Read-only view of one simulated step.
pub struct StepView<'a> {
    pub t: usize,
    /// Per sub-population, agent-major flat states (`n * dx`).
    pub states: &'a [Vec<f64>],
    pub actions: &'a [Vec<f64>],
    /// Gauge residuals `Δx` in the same layout as `states`.
    pub residuals: &'a [Vec<f64>],
    pub deep_state: &'a [f64],
    pub deep_action: &'a [f64],
    pub cost: f64,
}

#[inline]
fn gemv_add(out: &mut [f64], m: &Mat, v: &[f64], scale: f64) {
    let (rows, cols) = m.shape();
    for r in 0..rows {
        let mut acc = 0.0;
        for c in 0..cols {
            acc += m[(r, c)] * v[c];
        }
        out[r] += scale * acc;
    }
}

#[inline]
fn quad(m: &Mat, v: &[f64]) -> f64 {
    let d = v.len();
    let mut acc = 0.0;
    for r in 0..d {
        let mut row = 0.0;
        for c in 0..d {
            row += m[(r, c)] * v[c];
        }
        acc += v[r] * row;
    }
    acc
}

impl Engine {
    pub(crate) fn new(m: &TeamModel, p: &Policy) -> Result<Engine> {
        validate_model(m).into_result()?;
        p.check_dims(m)?;
        let subs = m
            .subs
            .iter()
            .enumerate()
            .map(|(s, sp)| SubData {
                n: sp.n,
                f: sp.f,
                dx: sp.dx,
                du: sp.du,
                mu: sp.mu,
                a: sp.a.clone(),
                b: sp.b.clone(),
                q: sp.q.clone(),
                r: sp.r.clone(),
                alpha: sp.alpha.clone(),
                abar: sp.abar.clone(),
                bbar: sp.bbar.clone(),
                noise_factor: sqrt_factor(&sp.sigma_w),
                init_factor: sqrt_factor(&sp.sigma_x),
                x_off: m.state_offset(s, 0),
                u_off: m.action_offset(s, 0),
            })
            .collect();
        Ok(Engine {
            subs,
            qbar: m.qbar_cross.clone(),
            rbar: m.rbar_cross.clone(),
            dxt: m.deep_state_dim(),
            dut: m.deep_action_dim(),
        })
    }

    /// `p` must have the dimensions of the model the engine was built from.
    pub(crate) fn run(
        &self,
        p: &Policy,
        horizon: usize,
        seed: u64,
        init: InitMode,
        mut observe: impl FnMut(&StepView<'_>),
    ) -> Result<()> {
        let mut rngs: Vec<Vec<ChaCha8Rng>> = self
            .subs
            .iter()
            .enumerate()
            .map(|(s, sd)| (0..sd.n).map(|i| seed::agent_stream(seed, s, i)).collect())
            .collect();
        let mut xs: Vec<Vec<f64>> = self.subs.iter().map(|sd| vec![0.0; sd.n * sd.dx]).collect();
        let mut us: Vec<Vec<f64>> = self.subs.iter().map(|sd| vec![0.0; sd.n * sd.du]).collect();
        let mut dxs = xs.clone();
        let mut xbar = vec![0.0; self.dxt];
        let mut ubar_target = vec![0.0; self.dut];
        let mut ubar = vec![0.0; self.dut];
        let mut coupling: Vec<Vec<f64>> = self.subs.iter().map(|sd| vec![0.0; sd.f * sd.dx]).collect();
        let max_dx = self.subs.iter().map(|sd| sd.dx).max().unwrap_or(0);
        let mut xi = vec![0.0; max_dx];
        let mut next = vec![0.0; max_dx];

        for (sd, (x, rs)) in self.subs.iter().zip(xs.iter_mut().zip(rngs.iter_mut())) {
            for (i, rng) in rs.iter_mut().enumerate() {
                let xi_ = &mut x[i * sd.dx..(i + 1) * sd.dx];
                match init {
                    InitMode::Gaussian => {
                        for v in xi[..sd.dx].iter_mut() {
                            *v = rng.sample(StandardNormal);
                        }
                        gemv_add(xi_, &sd.init_factor, &xi[..sd.dx], 1.0);
                    }
                    InitMode::Uniform { low, high } => {
                        for v in xi_.iter_mut() {
                            *v = low + (high - low) * rng.random::<f64>();
                        }
                    }
                }
            }
        }

        for t in 1..=horizon {
            // Deep states.
            xbar.iter_mut().for_each(|v| *v = 0.0);
            for (sd, x) in self.subs.iter().zip(&xs) {
                let inv_n = 1.0 / sd.n as f64;
                for i in 0..sd.n {
                    let xi_ = &x[i * sd.dx..(i + 1) * sd.dx];
                    for j in 0..sd.f {
                        let w = sd.alpha[(i, j)] * inv_n;
                        let off = sd.x_off + j * sd.dx;
                        for r in 0..sd.dx {
                            xbar[off + r] += w * xi_[r];
                        }
                    }
                }
            }
            ubar_target.iter_mut().for_each(|v| *v = 0.0);
            gemv_add(&mut ubar_target, &p.theta_bar, &xbar, 1.0);

            // Actions.
            let mut cost = 0.0;
            ubar.iter_mut().for_each(|v| *v = 0.0);
            for (((sd, theta), x), (u, dx)) in self
                .subs
                .iter()
                .zip(&p.theta)
                .zip(&xs)
                .zip(us.iter_mut().zip(dxs.iter_mut()))
            {
                let inv_n = 1.0 / sd.n as f64;
                let mut local_cost = 0.0;
                for i in 0..sd.n {
                    let xi_ = &x[i * sd.dx..(i + 1) * sd.dx];
                    let dxi = &mut dx[i * sd.dx..(i + 1) * sd.dx];
                    dxi.copy_from_slice(xi_);
                    let ui = &mut u[i * sd.du..(i + 1) * sd.du];
                    ui.iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..sd.f {
                        let a = sd.alpha[(i, j)];
                        let xo = sd.x_off + j * sd.dx;
                        for r in 0..sd.dx {
                            dxi[r] -= a * xbar[xo + r];
                        }
                        let uo = sd.u_off + j * sd.du;
                        for r in 0..sd.du {
                            ui[r] += a * ubar_target[uo + r];
                        }
                    }
                    gemv_add(ui, theta, dxi, 1.0);
                    local_cost += quad(&sd.q, xi_) + quad(&sd.r, ui);
                    for j in 0..sd.f {
                        let w = sd.alpha[(i, j)] * inv_n;
                        let uo = sd.u_off + j * sd.du;
                        for r in 0..sd.du {
                            ubar[uo + r] += w * ui[r];
                        }
                    }
                }
                cost += sd.mu * inv_n * local_cost;
            }
            cost += quad(&self.qbar, &xbar) + quad(&self.rbar, &ubar);

            observe(&StepView {
                t,
                states: &xs,
                actions: &us,
                residuals: &dxs,
                deep_state: &xbar,
                deep_action: &ubar,
                cost,
            });
            if t == horizon {
                break;
            }

            // Transition.
            for (sd, c) in self.subs.iter().zip(coupling.iter_mut()) {
                c.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..sd.f {
                    let cj = &mut c[j * sd.dx..(j + 1) * sd.dx];
                    gemv_add(cj, &sd.abar[j], &xbar, 1.0);
                    gemv_add(cj, &sd.bbar[j], &ubar, 1.0);
                }
            }
            for (((sd, x), u), (c, rs)) in self
                .subs
                .iter()
                .zip(xs.iter_mut())
                .zip(&us)
                .zip(coupling.iter().zip(rngs.iter_mut()))
            {
                for (i, rng) in rs.iter_mut().enumerate() {
                    let xi_ = &mut x[i * sd.dx..(i + 1) * sd.dx];
                    let ui = &u[i * sd.du..(i + 1) * sd.du];
                    let nx = &mut next[..sd.dx];
                    nx.iter_mut().for_each(|v| *v = 0.0);
                    gemv_add(nx, &sd.a, xi_, 1.0);
                    gemv_add(nx, &sd.b, ui, 1.0);
                    for j in 0..sd.f {
                        let a = sd.alpha[(i, j)];
                        for r in 0..sd.dx {
                            nx[r] += a * c[j * sd.dx + r];
                        }
                    }
                    for v in xi[..sd.dx].iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    gemv_add(nx, &sd.noise_factor, &xi[..sd.dx], 1.0);
                    for v in nx.iter() {
                        if !(v.abs() <= OVERFLOW_LIMIT) {
                            return Err(Error::NumericOverflow { step: t + 1 });
                        }
                    }
                    xi_.copy_from_slice(nx);
                }
            }
        }
        Ok(())
    }
}

/// Run `horizon` steps, handing every step to `observe`. This is the
/// allocation-light path used by the learners.
pub fn simulate(
    m: &TeamModel,
    p: &Policy,
    horizon: usize,
    seed: u64,
    init: InitMode,
    observe: impl FnMut(&StepView<'_>),
) -> Result<()> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    Engine::new(m, p)?.run(p, horizon, seed, init, observe)
}

/// `Σ_{t=1}^T c̄_t` of one rollout.
pub fn rollout_cost(m: &TeamModel, p: &Policy, horizon: usize, seed: u64, init: InitMode) -> Result<f64> {
    let mut total = 0.0;
    simulate(m, p, horizon, seed, init, |v| total += v.cost)?;
    Ok(total)
}

/// A recorded rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub horizon: usize,
    pub seed: u64,
    /// `states[t-1]` holds the agent states at time `t`.
    pub states: Vec<AgentField>,
    pub actions: Vec<AgentField>,
    pub costs: Vec<f64>,
}

fn to_field(flat: &[Vec<f64>], dims: impl Iterator<Item = usize>) -> AgentField {
    flat.iter()
        .zip(dims)
        .map(|(v, d)| v.chunks(d).map(Vector::from_column_slice).collect())
        .collect()
}

pub fn rollout(m: &TeamModel, p: &Policy, horizon: usize, seed: u64, init: InitMode) -> Result<Trajectory> {
    let mut tr = Trajectory {
        horizon,
        seed,
        states: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        costs: Vec::with_capacity(horizon),
    };
    simulate(m, p, horizon, seed, init, |v| {
        tr.states.push(to_field(v.states, m.subs.iter().map(|s| s.dx)));
        tr.actions.push(to_field(v.actions, m.subs.iter().map(|s| s.du)));
        tr.costs.push(v.cost);
    })?;
    Ok(tr)
}

/// Team cost of one step computed from the per-agent costs.
pub fn team_cost(m: &TeamModel, x: &AgentField, u: &AgentField) -> Result<f64> {
    let xbar = deep_project(x, m)?;
    let ubar = deep_project(u, m)?;
    let mut total = 0.0;
    for (s, sub) in m.subs.iter().enumerate() {
        let mut sum = 0.0;
        for (xi, ui) in x[s].iter().zip(&u[s]) {
            sum += xi.dot(&(&sub.q * xi)) + ui.dot(&(&sub.r * ui));
        }
        total += sub.mu / sub.n as f64 * sum;
    }
    Ok(total + xbar.dot(&(&m.qbar_cross * &xbar)) + ubar.dot(&(&m.rbar_cross * &ubar)))
}

impl Trajectory {
    /// CSV with one row per (t, sub, agent).
    pub fn write_csv<W: Write>(&self, m: &TeamModel, out: W) -> Result<()> {
        let max_dx = m.subs.iter().map(|s| s.dx).max().unwrap_or(0);
        let max_du = m.subs.iter().map(|s| s.du).max().unwrap_or(0);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "sub".into(), "agent".into()];
        header.extend((0..max_dx).map(|k| format!("x{k}")));
        header.extend((0..max_du).map(|k| format!("u{k}")));
        header.push("cbar".into());
        w.write_record(&header)?;
        for (t, ((xs, us), c)) in self.states.iter().zip(&self.actions).zip(&self.costs).enumerate() {
            for (s, (xa, ua)) in xs.iter().zip(us).enumerate() {
                for (i, (xi, ui)) in xa.iter().zip(ua).enumerate() {
                    let mut rec = vec![(t + 1).to_string(), s.to_string(), i.to_string()];
                    rec.extend((0..max_dx).map(|k| xi.get(k).map(|v| v.to_string()).unwrap_or_default()));
                    rec.extend((0..max_du).map(|k| ui.get(k).map(|v| v.to_string()).unwrap_or_default()));
                    rec.push(c.to_string());
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMode {
    /// Time-averaged expected cost.
    RiskNeutral,
    /// `(1/λT) log E exp(λ Σ_t c̄_t)`.
    RiskSensitive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEstimate {
    pub value: f64,
    pub std_error: f64,
    pub mode: EstimateMode,
    pub horizon: usize,
    pub seeds: usize,
}

fn rollout_totals(m: &TeamModel, p: &Policy, horizon: usize, seeds: &[u64], init: InitMode) -> Result<Vec<f64>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let engine = Engine::new(m, p)?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    seeds
        .par_iter()
        .map(|&s| {
            let mut total = 0.0;
            engine.run(p, horizon, s, init, |v| total += v.cost)?;
            Ok(total)
        })
        .collect()
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean over seeds of `(1/T) Σ_t c̄_t`.
pub fn estimate_risk_neutral(
    m: &TeamModel,
    p: &Policy,
    horizon: usize,
    seeds: &[u64],
    init: InitMode,
) -> Result<ObjectiveEstimate> {
    let totals = rollout_totals(m, p, horizon, seeds, init)?;
    let averages: Vec<f64> = totals.iter().map(|s| s / horizon as f64).collect();
    let (value, std_error) = mean_and_stderr(&averages);
    Ok(ObjectiveEstimate {
        value,
        std_error,
        mode: EstimateMode::RiskNeutral,
        horizon,
        seeds: seeds.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskSensitiveEstimate {
    pub estimate: ObjectiveEstimate,
    /// Second-order cumulant approximation `E[S]/T + (λ/2T) Var(S)` with
    /// `S = Σ_t c̄_t`.
    pub mean_variance: f64,
}

/// `(1/λT) log` of the empirical mean of `exp(λ Σ_t c̄_t)` across seeds.
pub fn estimate_risk_sensitive(
    m: &TeamModel,
    p: &Policy,
    horizon: usize,
    seeds: &[u64],
    lambda: f64,
    init: InitMode,
) -> Result<RiskSensitiveEstimate> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("risk factor must be positive, got {lambda}")));
    }
    let totals = rollout_totals(m, p, horizon, seeds, init)?;
    let exponents: Vec<f64> = totals.iter().map(|s| lambda * s).collect();
    let limit = f64::MAX.ln();
    if let Some(&bad) = exponents.iter().find(|z| !(z.abs() <= limit)) {
        return Err(Error::MgfOverflow { exponent: bad });
    }
    let zmax = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = exponents.iter().map(|z| (z - zmax).exp()).collect();
    let (mean_shifted, se_shifted) = mean_and_stderr(&shifted);
    let scale = lambda * horizon as f64;
    let value = (zmax + mean_shifted.ln()) / scale;
    let std_error = se_shifted / mean_shifted / scale;
    let (mean_total, _) = mean_and_stderr(&totals);
    let var_total = if totals.len() > 1 {
        totals.iter().map(|v| (v - mean_total).powi(2)).sum::<f64>() / (totals.len() as f64 - 1.0)
    } else {
        0.0
    };
    Ok(RiskSensitiveEstimate {
        estimate: ObjectiveEstimate {
            value,
            std_error,
            mode: EstimateMode::RiskSensitive,
            horizon,
            seeds: seeds.len(),
        },
        mean_variance: mean_total / horizon as f64 + lambda / (2.0 * horizon as f64) * var_total,
    })
}

/// Exact `E[c̄_t]` for `t = 1..=T` from second-moment propagation of the
/// residual and deep subsystems.
pub fn expected_stage_costs(m: &TeamModel, p: &Policy, horizon: usize, init: InitMode) -> Result<Vec<f64>> {
    let agg = aggregate(m)?;
    p.check_dims(m)?;
    let k = p.feedback();
    let dxt = m.deep_state_dim();

    struct Local {
        f: Mat,
        cost: Mat,
        weight: f64,
        noise: Mat,
        second: Mat,
    }
    let mut deep_mean = DVector::zeros(dxt);
    let mut deep_cov = Mat::zeros(dxt, dxt);
    let mut locals = Vec::new();
    for (s, sub) in m.subs.iter().enumerate() {
        let (mean, cov) = match init {
            InitMode::Gaussian => (DVector::zeros(sub.dx), sub.sigma_x.clone()),
            InitMode::Uniform { low, high } => (
                DVector::from_element(sub.dx, 0.5 * (low + high)),
                Mat::identity(sub.dx, sub.dx) * ((high - low).powi(2) / 12.0),
            ),
        };
        let n = sub.n as f64;
        let mut mean_weight = 0.0;
        for j in 0..sub.f {
            let abar = sub.alpha.column(j).sum() / n;
            mean_weight += abar * abar;
            let off = m.state_offset(s, j);
            deep_mean.rows_mut(off, sub.dx).copy_from(&(&mean * abar));
            deep_cov.view_mut((off, off), (sub.dx, sub.dx)).copy_from(&(&cov / n));
        }
        let mm = &mean * mean.transpose();
        let ks = &k.theta[s];
        locals.push(Local {
            f: &sub.a - &sub.b * ks,
            cost: &sub.q + ks.transpose() * &sub.r * ks,
            weight: sub.mu / n,
            noise: &sub.sigma_w * (sub.n - sub.f) as f64,
            second: &cov * (sub.n - sub.f) as f64 + mm * (n - n * mean_weight),
        });
    }
    let fd = &agg.a - &agg.b * &k.theta_bar;
    let deep_cost = &agg.q + k.theta_bar.transpose() * &agg.r * &k.theta_bar;

    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut c = (&deep_cost * (&deep_cov + &deep_mean * deep_mean.transpose())).trace();
        for l in &locals {
            c += l.weight * (&l.cost * &l.second).trace();
        }
        out.push(c);
        for l in locals.iter_mut() {
            l.second = &l.f * &l.second * l.f.transpose() + &l.noise;
        }
        deep_mean = &fd * deep_mean;
        deep_cov = &fd * deep_cov * fd.transpose() + &agg.sigma_w;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn scalar_model(a: f64, b: f64, n: usize, sigma_w: f64) -> TeamModel {
        let mut m = presets::example2().model;
        let sub = &mut m.subs[0];
        sub.n = n;
        sub.alpha = Mat::from_element(n, 1, 1.0);
        sub.a = Mat::from_element(1, 1, a);
        sub.b = Mat::from_element(1, 1, b);
        sub.sigma_w = Mat::from_element(1, 1, sigma_w);
        m
    }

    fn zero_policy() -> Policy {
        Policy {
            theta: vec![Mat::zeros(1, 1)],
            theta_bar: Mat::zeros(1, 1),
        }
    }

    #[test]
    fn zero_noise_zero_state_stays_zero() {
        let m = scalar_model(1.0, 1.0, 3, 1e-300);
        let tr = rollout(&m, &zero_policy(), 20, 1, InitMode::Uniform { low: 0.0, high: 0.0 }).unwrap();
        // Noise covariances must be positive definite, so "zero" noise is a
        // standard deviation of 1e-150.
        assert!(tr.costs.iter().all(|&c| c < 1e-290));
        assert!(tr.states.iter().flatten().flatten().all(|v| v[0].abs() < 1e-140));
    }

    #[test]
    fn scalar_geometric_decay() {
        let m = scalar_model(0.9, 0.0, 1, 1e-300);
        let tr = rollout(&m, &zero_policy(), 15, 4, InitMode::Uniform { low: 1.0, high: 1.0 }).unwrap();
        for (t, x) in tr.states.iter().enumerate() {
            assert!((x[0][0][0] - 0.9f64.powi(t as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn rollouts_are_reproducible() {
        let m = presets::example1().model;
        let p = crate::riccati::optimal_policy(&crate::riccati::solve(&m).unwrap());
        let a = rollout(&m, &p, 30, 9, InitMode::Gaussian).unwrap();
        let b = rollout(&m, &p, 30, 9, InitMode::Gaussian).unwrap();
        assert_eq!(a, b);
        let c = rollout(&m, &p, 30, 10, InitMode::Gaussian).unwrap();
        assert_ne!(a.costs, c.costs);
    }

    #[test]
    fn recorded_costs_match_team_cost() {
        let m = presets::example1().model;
        let p = crate::riccati::optimal_policy(&crate::riccati::solve(&m).unwrap());
        let tr = rollout(&m, &p, 25, 2, InitMode::Gaussian).unwrap();
        for ((x, u), c) in tr.states.iter().zip(&tr.actions).zip(&tr.costs) {
            let reference = team_cost(&m, x, u).unwrap();
            assert!((reference - c).abs() <= 1e-10 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn unstable_policy_overflows() {
        let m = scalar_model(1.5, 1.0, 2, 0.1);
        let err = rollout(&m, &zero_policy(), 200, 0, InitMode::Gaussian).unwrap_err();
        assert!(matches!(err, Error::NumericOverflow { .. }));
    }

    #[test]
    fn noise_free_cost_vanishes_with_horizon() {
        let m = scalar_model(0.5, 1.0, 3, 1e-300);
        let short = estimate_risk_neutral(&m, &zero_policy(), 10, &[1, 2], InitMode::Gaussian).unwrap();
        let long = estimate_risk_neutral(&m, &zero_policy(), 1000, &[1, 2], InitMode::Gaussian).unwrap();
        assert!(long.value < short.value / 50.0);
    }

    #[test]
    fn deterministic_costs_make_risk_sensitive_estimate_exact() {
        let m = scalar_model(0.5, 1.0, 3, 1e-300);
        let init = InitMode::Uniform { low: 0.3, high: 0.3 };
        let rn = estimate_risk_neutral(&m, &zero_policy(), 12, &[5, 6, 7], init).unwrap();
        for lambda in [0.01, 1.0, 30.0] {
            let rs = estimate_risk_sensitive(&m, &zero_policy(), 12, &[5, 6, 7], lambda, init).unwrap();
            assert!((rs.estimate.value - rn.value).abs() < 1e-12 * rn.value.max(1e-300));
        }
    }

    #[test]
    fn small_risk_matches_risk_neutral() {
        let m = presets::example1().model;
        let p = crate::riccati::optimal_policy(&crate::riccati::solve(&m).unwrap());
        let seeds: Vec<u64> = (0..16).collect();
        let rn = estimate_risk_neutral(&m, &p, 200, &seeds, InitMode::Gaussian).unwrap();
        let rs = estimate_risk_sensitive(&m, &p, 200, &seeds, 1e-7, InitMode::Gaussian).unwrap();
        assert!(((rs.estimate.value - rn.value) / rn.value).abs() < 1e-3);
        assert!(((rs.mean_variance - rn.value) / rn.value).abs() < 1e-3);
    }

    #[test]
    fn mgf_overflow_is_reported() {
        let m = presets::example1().model;
        let p = crate::riccati::optimal_policy(&crate::riccati::solve(&m).unwrap());
        let err = estimate_risk_sensitive(&m, &p, 100, &[1, 2], 1e6, InitMode::Gaussian).unwrap_err();
        assert!(matches!(err, Error::MgfOverflow { .. }));
    }

    #[test]
    fn expected_costs_converge_to_trace_formula() {
        let m = presets::example2().model;
        let p = crate::riccati::optimal_policy(&crate::riccati::solve(&m).unwrap());
        let j = crate::pg_exact::cost(&m, &p, 0.0).unwrap();
        let costs = expected_stage_costs(&m, &p, 200, InitMode::Uniform { low: 0.0, high: 0.1 }).unwrap();
        assert!((costs.last().unwrap() - j).abs() < 1e-12);
    }

    #[test]
    fn trajectory_csv_layout() {
        let m = scalar_model(0.5, 1.0, 2, 0.1);
        let tr = rollout(&m, &zero_policy(), 2, 0, InitMode::Gaussian).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,sub,agent,x0,u0,cbar");
        assert_eq!(lines.len(), 1 + 2 * 2);
        assert!(lines[3].starts_with("2,0,0,"));
    }
}
