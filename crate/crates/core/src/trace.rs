use std::io::Write;

use crate::error::Result;

/// One optimizer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    /// Exact cost for model-based runs, rollout estimate for model-free runs.
    pub cost: f64,
    /// Exact `J(θ_k) - J(θ*)` when the Riccati oracle is available.
    pub gap: Option<f64>,
    pub grad_norm: f64,
    /// `‖θ_k - θ*‖_F` against the Riccati oracle.
    pub gain_err: Option<f64>,
    pub rejected_samples: Option<usize>,
    pub estimate_stderr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// Adds the `rejected_samples,estimate_stderr` columns.
    pub zeroth_order: bool,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunTrace {
    pub fn model_based() -> Self {
        RunTrace {
            rows: Vec::new(),
            zeroth_order: false,
        }
    }

    pub fn model_free() -> Self {
        RunTrace {
            rows: Vec::new(),
            zeroth_order: true,
        }
    }

    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn header(&self) -> Vec<&'static str> {
        let mut h = vec!["iter", "J", "gap", "grad_norm", "gain_err"];
        if self.zeroth_order {
            h.extend(["rejected_samples", "estimate_stderr"]);
        }
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![
                r.iter.to_string(),
                r.cost.to_string(),
                opt(r.gap),
                r.grad_norm.to_string(),
                opt(r.gain_err),
            ];
            if self.zeroth_order {
                rec.push(opt(r.rejected_samples));
                rec.push(opt(r.estimate_stderr));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_headers() {
        let mut t = RunTrace::model_based();
        t.push(TraceRow {
            iter: 0,
            cost: 1.5,
            gap: Some(0.25),
            grad_norm: 2.0,
            gain_err: None,
            rejected_samples: None,
            estimate_stderr: None,
        });
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "iter,J,gap,grad_norm,gain_err\n0,1.5,0.25,2,\n");

        let z = RunTrace::model_free();
        let mut buf = Vec::new();
        z.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iter,J,gap,grad_norm,gain_err,rejected_samples,estimate_stderr\n"
        );
    }
}
