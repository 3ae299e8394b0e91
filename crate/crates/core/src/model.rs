//! Team model definition, validation and aggregation into the decoupled
//! residual and deep-state subsystems.
//!
//! Deep-state vectors are ordered by sub-population in declaration order and
//! by feature index inside each sub-population.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{block_diag, is_positive_definite, is_positive_semidefinite, is_symmetric, Mat};

/// Orthonormality tolerance on the influence factors.
pub const ORTHOGONALITY_TOL: f64 = 1e-9;
const SYMMETRY_TOL: f64 = 1e-12;

/// One homogeneous sub-population of agents.
#[derive(Debug, Clone, PartialEq)]
pub struct SubPopulationSpec {
    pub n: usize,
    pub f: usize,
    pub dx: usize,
    pub du: usize,
    pub a: Mat,
    pub b: Mat,
    /// Coupling of each feature to the full deep state (dx × Dx each).
    pub abar: Vec<Mat>,
    /// Coupling of each feature to the full deep action (dx × Du each).
    pub bbar: Vec<Mat>,
    pub q: Mat,
    pub r: Mat,
    pub mu: f64,
    pub sigma_x: Mat,
    pub sigma_w: Mat,
    /// n × f influence factors.
    pub alpha: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeamModel {
    pub subs: Vec<SubPopulationSpec>,
    /// Deep-state cost coupling, already summed over sub-populations and
    /// weighted by each sub-population's `mu`.
    pub qbar_cross: Mat,
    pub rbar_cross: Mat,
    /// Risk factor; zero is the risk-neutral problem.
    pub lambda: f64,
}

impl TeamModel {
    pub fn num_subs(&self) -> usize {
        self.subs.len()
    }

    /// Dimension of the stacked deep state.
    pub fn deep_state_dim(&self) -> usize {
        self.subs.iter().map(|s| s.f * s.dx).sum()
    }

    /// Dimension of the stacked deep action.
    pub fn deep_action_dim(&self) -> usize {
        self.subs.iter().map(|s| s.f * s.du).sum()
    }

    /// Row offset of feature `j` of sub-population `s` in the deep state.
    pub fn state_offset(&self, s: usize, j: usize) -> usize {
        self.subs[..s].iter().map(|p| p.f * p.dx).sum::<usize>() + j * self.subs[s].dx
    }

    /// Row offset of feature `j` of sub-population `s` in the deep action.
    pub fn action_offset(&self, s: usize, j: usize) -> usize {
        self.subs[..s].iter().map(|p| p.f * p.du).sum::<usize>() + j * self.subs[s].du
    }

    pub fn total_agents(&self) -> usize {
        self.subs.iter().map(|s| s.n).sum()
    }

    /// Same model with a different risk factor.
    pub fn with_lambda(&self, lambda: f64) -> TeamModel {
        TeamModel {
            lambda,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Issue {
    Dimension {
        what: String,
        expected: String,
        found: String,
    },
    Orthogonality {
        sub: usize,
        j: usize,
        jp: usize,
        residual: f64,
    },
    NotSymmetric(String),
    NotPositiveSemidefinite(String),
    NotPositiveDefinite(String),
    NonPositive(String),
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::Dimension {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected {expected}, found {found}"),
            Issue::Orthogonality {
                sub,
                j,
                jp,
                residual,
            } => write!(
                f,
                "sub-population {sub}: influence factors of features ({j},{jp}) violate orthonormality by {residual:e}"
            ),
            Issue::NotSymmetric(w) => write!(f, "{w} is not symmetric"),
            Issue::NotPositiveSemidefinite(w) => write!(f, "{w} is not positive semidefinite"),
            Issue::NotPositiveDefinite(w) => write!(f, "{w} is not positive definite"),
            Issue::NonPositive(w) => write!(f, "{w} must be positive"),
        }
    }
}

/// Every violated model invariant. Empty iff the model is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    /// Largest orthonormality residual found, if any was reported.
    pub fn max_orthogonality_residual(&self) -> f64 {
        self.issues
            .iter()
            .filter_map(|i| match i {
                Issue::Orthogonality { residual, .. } => Some(*residual),
                _ => None,
            })
            .fold(0.0, f64::max)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidModel(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "  - {issue}")?;
        }
        Ok(())
    }
}

fn check_shape(issues: &mut Vec<Issue>, what: impl Into<String>, m: &Mat, rows: usize, cols: usize) -> bool {
    if m.shape() != (rows, cols) {
        issues.push(Issue::Dimension {
            what: what.into(),
            expected: format!("{rows}x{cols}"),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
        false
    } else {
        true
    }
}

/// Largest deviation of `(1/n) αᵀα` from the identity.
pub fn orthogonality_residuals(alpha: &Mat) -> Vec<(usize, usize, f64)> {
    let n = alpha.nrows() as f64;
    let gram = alpha.transpose() * alpha / n;
    let mut out = Vec::new();
    for j in 0..gram.nrows() {
        for jp in j..gram.ncols() {
            let target = if j == jp { 1.0 } else { 0.0 };
            out.push((j, jp, (gram[(j, jp)] - target).abs()));
        }
    }
    out
}

/// Diagnose every invariant of a team model.
pub fn validate_model(m: &TeamModel) -> ValidationReport {
    let mut issues = Vec::new();
    if m.subs.is_empty() {
        issues.push(Issue::NonPositive("number of sub-populations".into()));
    }
    if !(m.lambda >= 0.0 && m.lambda.is_finite()) {
        issues.push(Issue::NonPositive("lambda (must be finite and >= 0)".into()));
    }
    let dxt = m.deep_state_dim();
    let dut = m.deep_action_dim();

    for (s, p) in m.subs.iter().enumerate() {
        let name = |w: &str| format!("sub-population {s}: {w}");
        if p.n == 0 {
            issues.push(Issue::NonPositive(name("n")));
        }
        if p.f == 0 {
            issues.push(Issue::NonPositive(name("f")));
        }
        if p.dx == 0 || p.du == 0 {
            issues.push(Issue::NonPositive(name("dx and du")));
        }
        if !(p.mu > 0.0 && p.mu.is_finite()) {
            issues.push(Issue::NonPositive(name("mu")));
        }
        check_shape(&mut issues, name("A"), &p.a, p.dx, p.dx);
        check_shape(&mut issues, name("B"), &p.b, p.dx, p.du);
        if p.abar.len() != p.f {
            issues.push(Issue::Dimension {
                what: name("number of Abar blocks"),
                expected: p.f.to_string(),
                found: p.abar.len().to_string(),
            });
        }
        if p.bbar.len() != p.f {
            issues.push(Issue::Dimension {
                what: name("number of Bbar blocks"),
                expected: p.f.to_string(),
                found: p.bbar.len().to_string(),
            });
        }
        for (j, ab) in p.abar.iter().enumerate() {
            check_shape(&mut issues, name(&format!("Abar[{j}]")), ab, p.dx, dxt);
        }
        for (j, bb) in p.bbar.iter().enumerate() {
            check_shape(&mut issues, name(&format!("Bbar[{j}]")), bb, p.dx, dut);
        }
        if check_shape(&mut issues, name("Q"), &p.q, p.dx, p.dx) {
            if !is_symmetric(&p.q, SYMMETRY_TOL) {
                issues.push(Issue::NotSymmetric(name("Q")));
            } else if !is_positive_semidefinite(&p.q, 1e-12) {
                issues.push(Issue::NotPositiveSemidefinite(name("Q")));
            }
        }
        for (label, mat, rows) in [
            ("R", &p.r, p.du),
            ("SigmaX", &p.sigma_x, p.dx),
            ("SigmaW", &p.sigma_w, p.dx),
        ] {
            if check_shape(&mut issues, name(label), mat, rows, rows) {
                if !is_symmetric(mat, SYMMETRY_TOL) {
                    issues.push(Issue::NotSymmetric(name(label)));
                } else if !is_positive_definite(mat) {
                    issues.push(Issue::NotPositiveDefinite(name(label)));
                }
            }
        }
        if check_shape(&mut issues, name("alpha"), &p.alpha, p.n, p.f) {
            for (j, jp, residual) in orthogonality_residuals(&p.alpha) {
                if !(residual <= ORTHOGONALITY_TOL) {
                    issues.push(Issue::Orthogonality {
                        sub: s,
                        j,
                        jp,
                        residual,
                    });
                }
            }
        }
    }

    if check_shape(&mut issues, "Qbar_cross", &m.qbar_cross, dxt, dxt)
        && !is_symmetric(&m.qbar_cross, SYMMETRY_TOL)
    {
        issues.push(Issue::NotSymmetric("Qbar_cross".into()));
    }
    if check_shape(&mut issues, "Rbar_cross", &m.rbar_cross, dut, dut)
        && !is_symmetric(&m.rbar_cross, SYMMETRY_TOL)
    {
        issues.push(Issue::NotSymmetric("Rbar_cross".into()));
    }

    // Aggregate convexity only makes sense once every block has the right shape.
    if issues.is_empty() {
        let agg = assemble(m);
        if !is_positive_semidefinite(&agg.q, 1e-12) {
            issues.push(Issue::NotPositiveSemidefinite("aggregated Qbold".into()));
        }
        if !is_positive_definite(&agg.r) {
            issues.push(Issue::NotPositiveDefinite("aggregated Rbold".into()));
        }
    }
    ValidationReport { issues }
}

/// Residual (gauge-transformed) subsystem of one sub-population.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSubsystem {
    pub a: Mat,
    pub b: Mat,
    pub q: Mat,
    pub r: Mat,
    pub sigma_w: Mat,
    pub mu: f64,
    pub n: usize,
    pub f: usize,
}

impl ResidualSubsystem {
    /// Scale `mu/n` applied to the risk factor in this subsystem's Riccati equation.
    pub fn risk_weight(&self) -> f64 {
        self.mu / self.n as f64
    }

    /// Number of independent residual copies, `n - f`, times `mu/n`: the
    /// weight of one copy's stage cost in the team cost.
    pub fn cost_weight(&self) -> f64 {
        (self.n - self.f) as f64 * self.mu / self.n as f64
    }
}

/// Block matrices of the deep-state subsystem plus the residual subsystems.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedModel {
    pub a: Mat,
    pub b: Mat,
    pub q: Mat,
    pub r: Mat,
    pub sigma_w: Mat,
    pub residual: Vec<ResidualSubsystem>,
}

fn assemble(m: &TeamModel) -> AggregatedModel {
    let dxt = m.deep_state_dim();
    let dut = m.deep_action_dim();
    let mut a = Mat::zeros(dxt, dxt);
    let mut b = Mat::zeros(dxt, dut);
    let mut q_blocks = Vec::new();
    let mut r_blocks = Vec::new();
    let mut w_blocks = Vec::new();
    for (s, p) in m.subs.iter().enumerate() {
        for j in 0..p.f {
            let xo = m.state_offset(s, j);
            let uo = m.action_offset(s, j);
            let mut a_rows = a.view_mut((xo, 0), (p.dx, dxt));
            a_rows += &p.abar[j];
            let mut a_diag = a.view_mut((xo, xo), (p.dx, p.dx));
            a_diag += &p.a;
            let mut b_rows = b.view_mut((xo, 0), (p.dx, dut));
            b_rows += &p.bbar[j];
            let mut b_diag = b.view_mut((xo, uo), (p.dx, p.du));
            b_diag += &p.b;
            q_blocks.push(&p.q * p.mu);
            r_blocks.push(&p.r * p.mu);
            w_blocks.push(&p.sigma_w / p.n as f64);
        }
    }
    let q = block_diag(q_blocks.iter()) + &m.qbar_cross;
    let r = block_diag(r_blocks.iter()) + &m.rbar_cross;
    let sigma_w = block_diag(w_blocks.iter());
    let residual = m
        .subs
        .iter()
        .map(|p| ResidualSubsystem {
            a: p.a.clone(),
            b: p.b.clone(),
            q: p.q.clone(),
            r: p.r.clone(),
            sigma_w: p.sigma_w.clone(),
            mu: p.mu,
            n: p.n,
            f: p.f,
        })
        .collect();
    AggregatedModel {
        a,
        b,
        q,
        r,
        sigma_w,
        residual,
    }
}

/// Assemble the deep-state and residual subsystems of a model.
pub fn aggregate(m: &TeamModel) -> Result<AggregatedModel> {
    let report = validate_model(m);
    if let Some(Issue::Dimension {
        what,
        expected,
        found,
    }) = report
        .issues
        .iter()
        .find(|i| matches!(i, Issue::Dimension { .. }))
        .cloned()
    {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    report.into_result()?;
    Ok(assemble(m))
}

fn is_zero_outside(m: &Mat, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> bool {
    let tol = 1e-14 * (1.0 + m.amax());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if !(rows.contains(&r) && cols.contains(&c)) && m[(r, c)].abs() > tol {
                return false;
            }
        }
    }
    true
}

/// True when every coupling acts feature by feature, so that the deep
/// Riccati equation splits into one small equation per feature.
pub fn is_weakly_coupled(m: &TeamModel) -> bool {
    let mut x_ranges = Vec::new();
    let mut u_ranges = Vec::new();
    for (s, p) in m.subs.iter().enumerate() {
        for j in 0..p.f {
            let xo = m.state_offset(s, j);
            let uo = m.action_offset(s, j);
            let xr = xo..xo + p.dx;
            let ur = uo..uo + p.du;
            if !is_zero_outside(&p.abar[j], 0..p.dx, xr.clone())
                || !is_zero_outside(&p.bbar[j], 0..p.dx, ur.clone())
            {
                return false;
            }
            x_ranges.push(xr);
            u_ranges.push(ur);
        }
    }
    let block_diagonal = |mat: &Mat, ranges: &[std::ops::Range<usize>]| {
        let tol = 1e-14 * (1.0 + mat.amax());
        (0..mat.nrows()).all(|r| {
            (0..mat.ncols()).all(|c| {
                mat[(r, c)].abs() <= tol
                    || ranges.iter().any(|rg| rg.contains(&r) && rg.contains(&c))
            })
        })
    };
    block_diagonal(&m.qbar_cross, &x_ranges) && block_diagonal(&m.rbar_cross, &u_ranges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn single_agent(a: f64, abar: f64) -> TeamModel {
        TeamModel {
            subs: vec![SubPopulationSpec {
                n: 1,
                f: 1,
                dx: 1,
                du: 1,
                a: scalar(a),
                b: scalar(1.0),
                abar: vec![scalar(abar)],
                bbar: vec![scalar(0.0)],
                q: scalar(1.0),
                r: scalar(1.0),
                mu: 1.0,
                sigma_x: scalar(1.0),
                sigma_w: scalar(1.0),
                alpha: scalar(1.0),
            }],
            qbar_cross: scalar(0.5),
            rbar_cross: scalar(0.0),
            lambda: 0.0,
        }
    }

    #[test]
    fn example_factors_are_orthonormal() {
        for m in [presets::example1().model, presets::example2().model] {
            let report = validate_model(&m);
            assert!(report.is_valid(), "{report}");
            let res = orthogonality_residuals(&m.subs[0].alpha);
            assert!(res.iter().all(|r| r.2 <= 1e-12));
        }
        assert!(validate_model(&single_agent(1.0, 0.0)).is_valid());
    }

    #[test]
    fn non_orthogonal_factors_are_reported() {
        let mut m = presets::example2().model;
        m.subs[0].alpha[(9, 0)] = 3.0;
        let report = validate_model(&m);
        assert!(!report.is_valid());
        assert!(report.max_orthogonality_residual() > 0.01);
        assert!(matches!(aggregate(&m), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn bad_matrices_are_reported() {
        let mut m = single_agent(1.0, 0.0);
        m.subs[0].r = scalar(-1.0);
        m.subs[0].sigma_w = scalar(0.0);
        let report = validate_model(&m);
        assert!(report
            .issues
            .contains(&Issue::NotPositiveDefinite("sub-population 0: R".into())));
        assert!(report
            .issues
            .contains(&Issue::NotPositiveDefinite("sub-population 0: SigmaW".into())));
    }

    #[test]
    fn dimension_mismatch_names_block() {
        let mut m = single_agent(1.0, 0.0);
        m.subs[0].abar[0] = Mat::zeros(1, 2);
        match aggregate(&m) {
            Err(Error::DimensionMismatch { what, .. }) => assert!(what.contains("Abar[0]")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_coupling_aggregate() {
        let agg = aggregate(&single_agent(1.0, 0.0)).unwrap();
        assert_eq!(agg.a, scalar(1.0));
    }

    #[test]
    fn single_agent_reduces_to_classical_system() {
        let m = single_agent(0.7, 0.2);
        let agg = aggregate(&m).unwrap();
        assert!((agg.a[(0, 0)] - 0.9).abs() < 1e-15);
        assert!((agg.q[(0, 0)] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn example2_cost_blocks() {
        let agg = aggregate(&presets::example2().model).unwrap();
        assert_eq!(agg.q, scalar(3.0));
        assert_eq!(agg.r, scalar(3.0));
    }

    #[test]
    fn two_subpopulation_layout() {
        // S=2, f=(1,2), dx=du=1. Abold rows: [a1 + c1, ...], feature rows of
        // sub-population 2 each carry a2 on their own diagonal entry.
        let alpha2 = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]);
        let sub = |n, f, a: f64, abar: Vec<Mat>, alpha: Mat| SubPopulationSpec {
            n,
            f,
            dx: 1,
            du: 1,
            a: scalar(a),
            b: scalar(1.0),
            bbar: vec![Mat::zeros(1, 3); f],
            abar,
            q: scalar(1.0),
            r: scalar(1.0),
            mu: 1.0,
            sigma_x: scalar(1.0),
            sigma_w: scalar(1.0),
            alpha,
        };
        let m = TeamModel {
            subs: vec![
                sub(1, 1, 0.5, vec![Mat::from_row_slice(1, 3, &[0.1, 0.2, 0.3])], scalar(1.0)),
                sub(
                    2,
                    2,
                    0.8,
                    vec![
                        Mat::from_row_slice(1, 3, &[0.4, 0.0, 0.0]),
                        Mat::from_row_slice(1, 3, &[0.0, 0.0, 0.6]),
                    ],
                    alpha2,
                ),
            ],
            qbar_cross: Mat::zeros(3, 3),
            rbar_cross: Mat::zeros(3, 3),
            lambda: 0.0,
        };
        let agg = aggregate(&m).unwrap();
        let expected = Mat::from_row_slice(3, 3, &[0.6, 0.2, 0.3, 0.4, 0.8, 0.0, 0.0, 0.0, 1.4]);
        assert!((agg.a - expected).amax() < 1e-15);
        assert_eq!(agg.b, Mat::identity(3, 3));
        let w = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.5, 0.5]));
        assert_eq!(agg.sigma_w, w);
        assert!(!is_weakly_coupled(&m));
    }

    #[test]
    fn aggregate_is_deterministic() {
        let m = presets::example1().model;
        assert_eq!(aggregate(&m).unwrap(), aggregate(&m).unwrap());
    }

    #[test]
    fn weak_coupling_detection() {
        assert!(is_weakly_coupled(&single_agent(1.0, 0.0)));
        assert!(is_weakly_coupled(&presets::example2().model));

        let alpha = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]);
        let mut m = TeamModel {
            subs: vec![SubPopulationSpec {
                n: 2,
                f: 2,
                dx: 1,
                du: 1,
                a: scalar(0.5),
                b: scalar(1.0),
                abar: vec![Mat::zeros(1, 2), Mat::zeros(1, 2)],
                bbar: vec![Mat::zeros(1, 2), Mat::zeros(1, 2)],
                q: scalar(1.0),
                r: scalar(1.0),
                mu: 1.0,
                sigma_x: scalar(1.0),
                sigma_w: scalar(1.0),
                alpha,
            }],
            qbar_cross: Mat::identity(2, 2),
            rbar_cross: Mat::zeros(2, 2),
            lambda: 0.0,
        };
        assert!(is_weakly_coupled(&m));
        m.subs[0].abar[0][(0, 1)] = 0.3;
        assert!(!is_weakly_coupled(&m));
        m.subs[0].abar[0][(0, 1)] = 0.0;
        m.qbar_cross[(0, 1)] = 0.1;
        m.qbar_cross[(1, 0)] = 0.1;
        assert!(!is_weakly_coupled(&m));
    }
}
