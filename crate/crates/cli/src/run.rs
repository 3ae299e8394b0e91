use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use lqdst::pg_exact::{self, Algorithm, RunConfig, RunStatus};
use lqdst::pg_zeroth::{self, EstimatorConfig, LearnConfig};
use lqdst::random::{random_stable_policy, rng};
use lqdst::{riccati, sim, Policy, RunTrace, TeamModel};

use crate::config::{ExperimentConfig, InitPolicyKind, Mode};
use crate::error::{CliError, EXIT_NUMERICAL, EXIT_OK};
use crate::files::parse_policy;

/// Result of one seed.
#[derive(Debug, Clone)]
pub struct SeedReport {
    pub seed: u64,
    /// Exact objective of the returned policy, when it is stable.
    pub final_cost: Option<f64>,
    pub gain_error: Option<f64>,
    pub status: String,
    /// The iterate left the stable set; the reported policy is the last stable one.
    pub diverged: bool,
    pub iterations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub mode: Mode,
    pub source: String,
    pub lambda: f64,
    pub optimal_cost: Option<f64>,
    pub oracle: Option<Policy>,
    pub runs: Vec<SeedReport>,
    pub seconds: f64,
}

impl Summary {
    pub fn exit_code(&self) -> i32 {
        if self.runs.iter().any(|r| r.diverged) {
            EXIT_NUMERICAL
        } else {
            EXIT_OK
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.12e}"));
        writeln!(s, "source: {}", self.source).unwrap();
        writeln!(s, "mode: {:?}", self.mode).unwrap();
        writeln!(s, "lambda: {}", self.lambda).unwrap();
        writeln!(s, "optimal_J: {}", opt(self.optimal_cost)).unwrap();
        for r in &self.runs {
            writeln!(
                s,
                "seed {}: final_J={} gain_error={} status={} iterations={} wall_time_s={:.3}",
                r.seed,
                opt(r.final_cost),
                opt(r.gain_error),
                r.status,
                r.iterations,
                r.seconds
            )
            .unwrap();
        }
        writeln!(s, "total_wall_time_s: {:.3}", self.seconds).unwrap();
        s
    }
}

fn status_label(s: RunStatus) -> String {
    match s {
        RunStatus::Converged => "converged".into(),
        RunStatus::MaxIterations => "max_iterations".into(),
        RunStatus::LineSearchStalled => "line_search_stalled".into(),
        RunStatus::UnstableIterate { iter } => format!("unstable_iterate@{iter}"),
    }
}

fn block_names(m: &TeamModel) -> Vec<String> {
    let mut names: Vec<String> = (0..m.num_subs()).map(|s| format!("residual{s}")).collect();
    names.push("deep".into());
    names
}

/// Gains as `block,row,col,value` in the action convention `u = θ x`.
pub fn write_gains<W: Write>(m: &TeamModel, p: &Policy, out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let to_io = |e: csv::Error| CliError::Io(e.into());
    w.write_record(["block", "row", "col", "value"]).map_err(to_io)?;
    for (name, g) in block_names(m).iter().zip(p.blocks()) {
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                w.write_record([name.clone(), i.to_string(), j.to_string(), format!("{:.17e}", g[(i, j)])])
                    .map_err(to_io)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn format_matrix(g: &lqdst::Mat) -> String {
    let rows: Vec<String> = g
        .row_iter()
        .map(|r| {
            let v: Vec<String> = r.iter().map(|x| format!("{x:.12}")).collect();
            format!("[{}]", v.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_trace(dir: &Path, seed: u64, trace: &RunTrace) -> Result<(), CliError> {
    trace.write_csv(create(&dir.join(format!("trace_{seed}.csv")))?)?;
    Ok(())
}

fn initial_policy(cfg: &ExperimentConfig, m: &TeamModel, seed: u64) -> Result<Policy, CliError> {
    let p = match cfg.init_policy {
        InitPolicyKind::Zero => Policy::zeros(m),
        InitPolicyKind::Random => random_stable_policy(&mut rng(seed), m, 0.95, 1.0),
        InitPolicyKind::File => parse_policy(cfg.policy_file.as_deref().expect("checked in config"), m)?,
        InitPolicyKind::Preset => cfg
            .preset
            .as_ref()
            .and_then(|p| p.init_policy.clone())
            .expect("checked in config"),
    };
    Ok(p)
}

fn finish(m: &TeamModel, lambda: f64, oracle: Option<&Policy>, p: &Policy) -> (Option<f64>, Option<f64>) {
    (
        pg_exact::cost(m, p, lambda).ok(),
        oracle.map(|o| p.distance(o)),
    )
}

/// Run every seed of the experiment and write traces, gains and the summary
/// into `cfg.out`. Progress lines go to `log`.
pub fn run_experiment<W: Write>(cfg: &ExperimentConfig, mut log: W) -> Result<Summary, CliError> {
    let start = Instant::now();
    let m = cfg.model.with_lambda(cfg.lambda);
    fs::create_dir_all(&cfg.out)?;

    let solved = match riccati::solve_with_lambda(&m, cfg.lambda) {
        Err(e) if cfg.mode == Mode::Riccati => return Err(e.into()),
        other => other,
    };
    let (oracle, optimal_cost) = match &solved {
        Ok(sol) => {
            let p = riccati::optimal_policy(sol);
            let j = pg_exact::cost(&m, &p, cfg.lambda)?;
            write_gains(&m, &p, create(&cfg.out.join("oracle_gains.csv"))?)?;
            (Some(p), Some(j))
        }
        Err(e) => {
            writeln!(log, "warning: no Riccati oracle ({e}); gaps and gain errors are omitted")?;
            (None, None)
        }
    };

    let mut runs = Vec::new();
    if cfg.mode == Mode::Riccati {
        let sol = solved.as_ref().expect("oracle solved above");
        let p = oracle.as_ref().expect("oracle solved above");
        for (name, g) in block_names(&m).iter().zip(p.blocks()) {
            writeln!(log, "{name}: {}", format_matrix(g))?;
        }
        writeln!(log, "J* = {:.12e}", optimal_cost.unwrap())?;
        runs.push(SeedReport {
            seed: cfg.seeds[0],
            final_cost: optimal_cost,
            gain_error: Some(0.0),
            status: "solved".into(),
            diverged: false,
            iterations: sol.iterations,
            seconds: start.elapsed().as_secs_f64(),
        });
    } else {
        for &seed in &cfg.seeds {
            let t0 = Instant::now();
            let p0 = initial_policy(cfg, &m, seed)?;
            let report = match cfg.mode {
                Mode::Pg | Mode::Npg => {
                    let run_cfg = RunConfig {
                        algo: if cfg.mode == Mode::Pg { Algorithm::Pg } else { Algorithm::Npg },
                        eta: cfg.eta.unwrap(),
                        max_iters: cfg.iters.unwrap(),
                        tol: cfg.tol,
                        backtracking: cfg.backtracking,
                    };
                    let out = pg_exact::run(&m, &p0, &run_cfg)?;
                    write_trace(&cfg.out, seed, &out.trace)?;
                    let (final_cost, gain_error) = finish(&m, cfg.lambda, oracle.as_ref(), &out.policy);
                    SeedReport {
                        seed,
                        final_cost,
                        gain_error,
                        status: status_label(out.status),
                        diverged: matches!(out.status, RunStatus::UnstableIterate { .. }),
                        iterations: out.trace.rows.len() - 1,
                        seconds: t0.elapsed().as_secs_f64(),
                    }
                }
                Mode::ZoPg | Mode::ZoNpg => {
                    let learn_cfg = LearnConfig {
                        algo: if cfg.mode == Mode::ZoPg { Algorithm::Pg } else { Algorithm::Npg },
                        eta: cfg.eta.unwrap(),
                        iters: cfg.iters.unwrap(),
                        estimator: EstimatorConfig {
                            samples: cfg.samples.unwrap(),
                            horizon: cfg.horizon.unwrap(),
                            radius: cfg.radius.unwrap(),
                            antithetic: cfg.antithetic,
                            init: cfg.init_state,
                        },
                        seed,
                    };
                    let out = pg_zeroth::learn(&m, &p0, &learn_cfg)?;
                    write_trace(&cfg.out, seed, &out.trace)?;
                    let (final_cost, gain_error) = finish(&m, cfg.lambda, oracle.as_ref(), &out.policy);
                    SeedReport {
                        seed,
                        final_cost,
                        gain_error,
                        status: status_label(out.status),
                        diverged: matches!(out.status, RunStatus::UnstableIterate { .. }),
                        iterations: out.trace.rows.len() - 1,
                        seconds: t0.elapsed().as_secs_f64(),
                    }
                }
                Mode::Simulate => simulate_seed(cfg, &m, &p0, seed, oracle.as_ref(), &mut log, t0)?,
                Mode::Riccati => unreachable!(),
            };
            writeln!(
                log,
                "seed {seed}: {} final_J={:?} gain_error={:?}",
                report.status, report.final_cost, report.gain_error
            )?;
            runs.push(report);
        }
    }

    let summary = Summary {
        mode: cfg.mode,
        source: cfg.source.clone(),
        lambda: cfg.lambda,
        optimal_cost,
        oracle,
        runs,
        seconds: start.elapsed().as_secs_f64(),
    };
    fs::write(cfg.out.join("summary.txt"), summary.render())?;
    Ok(summary)
}

fn simulate_seed<W: Write>(
    cfg: &ExperimentConfig,
    m: &TeamModel,
    p: &Policy,
    seed: u64,
    oracle: Option<&Policy>,
    log: &mut W,
    t0: Instant,
) -> Result<SeedReport, CliError> {
    let horizon = cfg.horizon.unwrap();
    let traj = sim::rollout(m, p, horizon, seed, cfg.init_state)?;
    let average = traj.costs.iter().sum::<f64>() / horizon as f64;
    writeln!(log, "seed {seed}: average stage cost over {horizon} steps = {average:.12e}")?;
    if seed == cfg.seeds[0] {
        if let Some(path) = &cfg.export_trajectory {
            traj.write_csv(m, create(path)?)?;
        }
    }
    let mut trace = RunTrace::model_free();
    trace.push(lqdst::TraceRow {
        iter: 0,
        cost: average,
        gap: None,
        grad_norm: 0.0,
        gain_err: oracle.map(|o| p.distance(o)),
        rejected_samples: Some(0),
        estimate_stderr: None,
    });
    write_trace(&cfg.out, seed, &trace)?;
    let (final_cost, gain_error) = finish(m, cfg.lambda, oracle, p);
    Ok(SeedReport {
        seed,
        final_cost,
        gain_error,
        status: "simulated".into(),
        diverged: false,
        iterations: 0,
        seconds: t0.elapsed().as_secs_f64(),
    })
}
