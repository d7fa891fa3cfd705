//! What to transfer, with which weights, plus the task supervision.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_ALPHA_INIT: f64 = 100.0;
pub const DEFAULT_GAMMA: f64 = 0.7;
pub const DEFAULT_MARGIN: f64 = 1.0;
pub const DEFAULT_CONTRASTIVE_WEIGHT: f64 = 0.1;
pub const DEFAULT_TEMPERATURE: f64 = 2.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Probability matching on every pair with the decaying weights.
    #[default]
    Proposed,
    /// Probability matching on the last pair only, weight 1.
    PktSingle,
    /// Probability matching on every pair, weight 1.
    PktMulti,
    /// Regression of (linearly projected) student representations.
    Hint,
    /// Temperature-softened logit matching.
    Softlabel,
    None,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Proposed, Method::PktSingle, Method::PktMulti, Method::Hint, Method::Softlabel, Method::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::PktSingle => "pkt_single",
            Method::PktMulti => "pkt_multi",
            Method::Hint => "hint",
            Method::Softlabel => "softlabel",
            Method::None => "none",
        }
    }

    /// Whether the method consumes teacher representations at the plan's pairs.
    pub fn uses_pairs(self) -> bool {
        matches!(self, Method::Proposed | Method::PktSingle | Method::PktMulti | Method::Hint)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Supervision {
    #[default]
    None,
    /// Within-batch pairs on the student's final representation.
    Contrastive { margin: f64, weight: f64 },
    /// Needs a classification head on the student.
    Crossentropy,
}

impl Supervision {
    pub fn contrastive() -> Self {
        Supervision::Contrastive { margin: DEFAULT_MARGIN, weight: DEFAULT_CONTRASTIVE_WEIGHT }
    }

    pub fn needs_labels(&self) -> bool {
        !matches!(self, Supervision::None)
    }
}

/// `pairs[i] = (teacher transfer point, student transfer point)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillPlan {
    pub pairs: Vec<(usize, usize)>,
    #[serde(default = "alpha_init")]
    pub alpha_init: f64,
    #[serde(default = "gamma")]
    pub gamma: f64,
    /// Fixed per-pair weights replacing the schedule.
    #[serde(default)]
    pub alpha_override: Option<Vec<f64>>,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub supervision: Supervision,
    /// T-student kernel degree.
    #[serde(default = "degree")]
    pub degree: u32,
    /// Soft-label temperature.
    #[serde(default = "temperature")]
    pub temperature: f64,
}

fn alpha_init() -> f64 {
    DEFAULT_ALPHA_INIT
}
fn gamma() -> f64 {
    DEFAULT_GAMMA
}
fn degree() -> u32 {
    1
}
fn temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

impl DistillPlan {
    pub fn new(method: Method, pairs: Vec<(usize, usize)>) -> Self {
        Self {
            pairs,
            alpha_init: DEFAULT_ALPHA_INIT,
            gamma: DEFAULT_GAMMA,
            alpha_override: None,
            method,
            supervision: Supervision::None,
            degree: 1,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    /// Pairs transfer point `i` with transfer point `i` for `i < n`.
    pub fn one_to_one(method: Method, n: usize) -> Self {
        Self::new(method, (0..n).map(|i| (i, i)).collect())
    }

    /// Pairs student layer `i` with teacher layer `kappa[i]`.
    pub fn from_matching(method: Method, kappa: &[usize]) -> Self {
        Self::new(method, kappa.iter().enumerate().map(|(s, &t)| (t, s)).collect())
    }

    pub fn with_supervision(mut self, supervision: Supervision) -> Self {
        self.supervision = supervision;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return invalid(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.alpha_init > 0.0 && self.alpha_init.is_finite()) {
            return invalid(format!("alpha_init must be positive, got {}", self.alpha_init));
        }
        if self.degree < 1 {
            return invalid("kernel degree must be at least 1");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return invalid(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.method.uses_pairs() && self.pairs.is_empty() {
            return invalid(format!("method {} needs at least one layer pair", self.method));
        }
        if self.pairs.windows(2).any(|w| w[1].1 <= w[0].1) {
            return invalid("student transfer points in the plan must be strictly increasing");
        }
        if let Some(o) = &self.alpha_override {
            if o.len() != self.pairs.len() {
                return invalid(format!("{} alpha overrides for {} pairs", o.len(), self.pairs.len()));
            }
            if o.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                return invalid("alpha overrides must be finite and non-negative");
            }
        }
        match self.supervision {
            Supervision::Contrastive { margin, weight } if !(margin > 0.0 && weight >= 0.0 && weight.is_finite()) => {
                invalid(format!("contrastive margin must be positive and weight non-negative, got ({margin}, {weight})"))
            }
            _ => Ok(()),
        }
    }

    /// Indices into `pairs` that contribute a transfer term.
    pub fn active_pairs(&self) -> Vec<usize> {
        match self.method {
            Method::Proposed | Method::PktMulti | Method::Hint => (0..self.pairs.len()).collect(),
            Method::PktSingle => self.pairs.len().checked_sub(1).into_iter().collect(),
            Method::Softlabel | Method::None => Vec::new(),
        }
    }

    /// Weight of pair `i` at epoch `k`.
    pub fn alpha(&self, i: usize, k: usize) -> f64 {
        match self.method {
            Method::Proposed => match &self.alpha_override {
                Some(o) => o[i],
                None => alpha_schedule(self.alpha_init, self.gamma, i, k, self.pairs.len()),
            },
            _ => 1.0,
        }
    }
}

/// `1` for the last of `n_layers` transfer points, `α_init·γ^k` otherwise.
pub fn alpha_schedule(alpha_init: f64, gamma: f64, i: usize, k: usize, n_layers: usize) -> f64 {
    if i + 1 == n_layers {
        1.0
    } else {
        alpha_init * gamma.powi(k as i32)
    }
}
