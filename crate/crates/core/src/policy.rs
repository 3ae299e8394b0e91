//! Stationary linear team policies.
//!
//! A [`Policy`] stores gains in the *action* convention: residual actions are
//! `Δu = θ(s) Δx` and deep actions are `ū = θ̄ x̄`. The gradient methods work
//! with *feedback* gains `K = -θ`, for which the closed loops read `A - B K`;
//! [`Policy::feedback`] and [`Policy::from_feedback`] convert between the two.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::TeamModel;

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    /// du(s) × dx(s) residual gain per sub-population.
    pub theta: Vec<Mat>,
    /// Du × Dx deep gain.
    pub theta_bar: Mat,
}

impl Policy {
    pub fn zeros(m: &TeamModel) -> Policy {
        Policy {
            theta: m.subs.iter().map(|p| Mat::zeros(p.du, p.dx)).collect(),
            theta_bar: Mat::zeros(m.deep_action_dim(), m.deep_state_dim()),
        }
    }

    /// Check that every gain has the dimensions the model requires.
    pub fn check_dims(&self, m: &TeamModel) -> Result<()> {
        if self.theta.len() != m.num_subs() {
            return Err(Error::DimensionMismatch {
                what: "policy sub-population count".into(),
                expected: m.num_subs().to_string(),
                found: self.theta.len().to_string(),
            });
        }
        for (s, (t, p)) in self.theta.iter().zip(&m.subs).enumerate() {
            if t.shape() != (p.du, p.dx) {
                return Err(Error::DimensionMismatch {
                    what: format!("theta[{s}]"),
                    expected: format!("{}x{}", p.du, p.dx),
                    found: format!("{}x{}", t.nrows(), t.ncols()),
                });
            }
        }
        let want = (m.deep_action_dim(), m.deep_state_dim());
        if self.theta_bar.shape() != want {
            return Err(Error::DimensionMismatch {
                what: "theta_bar".into(),
                expected: format!("{}x{}", want.0, want.1),
                found: format!("{}x{}", self.theta_bar.nrows(), self.theta_bar.ncols()),
            });
        }
        Ok(())
    }

    /// All blocks, residual gains first, deep gain last.
    pub fn blocks(&self) -> impl Iterator<Item = &Mat> {
        self.theta.iter().chain(std::iter::once(&self.theta_bar))
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Mat> {
        self.theta
            .iter_mut()
            .chain(std::iter::once(&mut self.theta_bar))
    }

    pub fn map(&self, mut f: impl FnMut(&Mat) -> Mat) -> Policy {
        Policy {
            theta: self.theta.iter().map(&mut f).collect(),
            theta_bar: f(&self.theta_bar),
        }
    }

    /// `self + scale * other`, block by block.
    pub fn add_scaled(&self, scale: f64, other: &Policy) -> Policy {
        Policy {
            theta: self
                .theta
                .iter()
                .zip(&other.theta)
                .map(|(a, b)| a + b * scale)
                .collect(),
            theta_bar: &self.theta_bar + &other.theta_bar * scale,
        }
    }

    pub fn scale(&self, k: f64) -> Policy {
        self.map(|m| m * k)
    }

    /// Frobenius inner product over all blocks.
    pub fn dot(&self, other: &Policy) -> f64 {
        self.blocks().zip(other.blocks()).map(|(a, b)| a.dot(b)).sum()
    }

    /// Frobenius norm over all blocks.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &Policy) -> f64 {
        self.add_scaled(-1.0, other).norm()
    }

    /// Feedback gains `K = -θ` (closed loop `A - B K`).
    pub fn feedback(&self) -> Policy {
        self.scale(-1.0)
    }

    pub fn from_feedback(k: &Policy) -> Policy {
        k.scale(-1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().all(|m| m.iter().all(|v| v.is_finite()))
    }
}
