//! TOML model and policy files.
//!
//! Matrices are arrays of rows. A model file looks like
//!
//! ```toml
//! lambda = 0.0
//! qbar_cross = [[2.0]]
//! rbar_cross = [[1.0]]
//!
//! [[subs]]
//! n = 2
//! f = 1
//! dx = 1
//! du = 1
//! a = [[1.0]]
//! b = [[1.0]]
//! abar = [[[0.0]]]
//! bbar = [[[0.0]]]
//! q = [[1.0]]
//! r = [[2.0]]
//! mu = 1.0
//! sigma_x = [[0.1]]
//! sigma_w = [[0.02]]
//! alpha = [[1.0], [1.0]]
//! ```
//!
//! `mu` defaults to 1 and `lambda` to 0; every other key is required and
//! unknown keys are rejected.

use std::path::Path;

use lqdst::{Mat, Policy, SubPopulationSpec, TeamModel};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

type Rows = Vec<Vec<f64>>;

fn default_mu() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubFile {
    n: usize,
    f: usize,
    dx: usize,
    du: usize,
    a: Rows,
    b: Rows,
    abar: Vec<Rows>,
    bbar: Vec<Rows>,
    q: Rows,
    r: Rows,
    #[serde(default = "default_mu")]
    mu: f64,
    sigma_x: Rows,
    sigma_w: Rows,
    alpha: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(default)]
    lambda: f64,
    qbar_cross: Rows,
    rbar_cross: Rows,
    subs: Vec<SubFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    theta: Vec<Rows>,
    theta_bar: Rows,
}

fn to_rows(m: &Mat) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn to_mat(rows: &Rows, shape: (usize, usize), field: &str) -> Result<Mat, CliError> {
    let (nr, nc) = shape;
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        let found = match rows.first() {
            Some(first) if rows.iter().all(|r| r.len() == first.len()) => format!("{}x{}", rows.len(), first.len()),
            Some(_) => "ragged rows".to_string(),
            None => "0 rows".to_string(),
        };
        return Err(CliError::Config(format!("{field}: expected {nr}x{nc} matrix, found {found}")));
    }
    Ok(Mat::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Parse a model from TOML text. Shapes are checked per field, then the model
/// is validated as a whole.
pub fn parse_model_str(text: &str) -> Result<TeamModel, CliError> {
    let file: ModelFile = toml::from_str(text).map_err(|e| CliError::Config(format!("model file: {e}")))?;
    let dxt: usize = file.subs.iter().map(|s| s.f * s.dx).sum();
    let dut: usize = file.subs.iter().map(|s| s.f * s.du).sum();
    let mut subs = Vec::with_capacity(file.subs.len());
    for (k, s) in file.subs.iter().enumerate() {
        let field = |name: &str| format!("subs[{k}].{name}");
        let per_feature = |mats: &Vec<Rows>, name: &str, cols: usize| -> Result<Vec<Mat>, CliError> {
            if mats.len() != s.f {
                return Err(CliError::Config(format!(
                    "{}: expected {} matrices (one per feature), found {}",
                    field(name),
                    s.f,
                    mats.len()
                )));
            }
            mats.iter()
                .enumerate()
                .map(|(j, m)| to_mat(m, (s.dx, cols), &format!("{}[{j}]", field(name))))
                .collect()
        };
        subs.push(SubPopulationSpec {
            n: s.n,
            f: s.f,
            dx: s.dx,
            du: s.du,
            a: to_mat(&s.a, (s.dx, s.dx), &field("a"))?,
            b: to_mat(&s.b, (s.dx, s.du), &field("b"))?,
            abar: per_feature(&s.abar, "abar", dxt)?,
            bbar: per_feature(&s.bbar, "bbar", dut)?,
            q: to_mat(&s.q, (s.dx, s.dx), &field("q"))?,
            r: to_mat(&s.r, (s.du, s.du), &field("r"))?,
            mu: s.mu,
            sigma_x: to_mat(&s.sigma_x, (s.dx, s.dx), &field("sigma_x"))?,
            sigma_w: to_mat(&s.sigma_w, (s.dx, s.dx), &field("sigma_w"))?,
            alpha: to_mat(&s.alpha, (s.n, s.f), &field("alpha"))?,
        });
    }
    let model = TeamModel {
        subs,
        qbar_cross: to_mat(&file.qbar_cross, (dxt, dxt), "qbar_cross")?,
        rbar_cross: to_mat(&file.rbar_cross, (dut, dut), "rbar_cross")?,
        lambda: file.lambda,
    };
    let report = lqdst::validate_model(&model);
    if !report.is_valid() {
        return Err(CliError::Config(format!("invalid model: {report}")));
    }
    Ok(model)
}

pub fn parse_model(path: &Path) -> Result<TeamModel, CliError> {
    parse_model_str(&read(path)?).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn serialize_model(m: &TeamModel) -> String {
    let file = ModelFile {
        lambda: m.lambda,
        qbar_cross: to_rows(&m.qbar_cross),
        rbar_cross: to_rows(&m.rbar_cross),
        subs: m
            .subs
            .iter()
            .map(|s| SubFile {
                n: s.n,
                f: s.f,
                dx: s.dx,
                du: s.du,
                a: to_rows(&s.a),
                b: to_rows(&s.b),
                abar: s.abar.iter().map(to_rows).collect(),
                bbar: s.bbar.iter().map(to_rows).collect(),
                q: to_rows(&s.q),
                r: to_rows(&s.r),
                mu: s.mu,
                sigma_x: to_rows(&s.sigma_x),
                sigma_w: to_rows(&s.sigma_w),
                alpha: to_rows(&s.alpha),
            })
            .collect(),
    };
    toml::to_string(&file).expect("model serializes to TOML")
}

/// Parse gains in the action convention `u = θ x` and check them against
/// the model.
pub fn parse_policy_str(text: &str, m: &TeamModel) -> Result<Policy, CliError> {
    let file: PolicyFile = toml::from_str(text).map_err(|e| CliError::Config(format!("policy file: {e}")))?;
    if file.theta.len() != m.num_subs() {
        return Err(CliError::Config(format!(
            "theta: expected {} blocks, found {}",
            m.num_subs(),
            file.theta.len()
        )));
    }
    let theta = file
        .theta
        .iter()
        .zip(&m.subs)
        .enumerate()
        .map(|(s, (rows, sub))| to_mat(rows, (sub.du, sub.dx), &format!("theta[{s}]")))
        .collect::<Result<_, _>>()?;
    let theta_bar = to_mat(&file.theta_bar, (m.deep_action_dim(), m.deep_state_dim()), "theta_bar")?;
    Ok(Policy { theta, theta_bar })
}

pub fn parse_policy(path: &Path, m: &TeamModel) -> Result<Policy, CliError> {
    parse_policy_str(&read(path)?, m)
}

pub fn serialize_policy(p: &Policy) -> String {
    let file = PolicyFile {
        theta: p.theta.iter().map(to_rows).collect(),
        theta_bar: to_rows(&p.theta_bar),
    };
    toml::to_string(&file).expect("policy serializes to TOML")
}
