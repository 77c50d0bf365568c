//! Nodal injection envelopes and the reactive-power coupling cases.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CapabilityError {
    #[error("power factor must lie in (0, 1], got {0}")]
    InvalidPowerFactor(f64),
    #[error("node {node}: {reason}")]
    Malformed { node: usize, reason: &'static str },
    #[error("capability covers {got} nodes, network has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// How reactive injection is tied to real injection at one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum ReactiveCase {
    /// `q = gamma p`.
    ConstantPf { gamma: f64 },
    /// `q_min <= q <= q_max`.
    Box { q_min: f64, q_max: f64 },
    /// `p^2 + q^2 <= s_max^2`.
    Quadratic { s_max: f64 },
}

impl ReactiveCase {
    pub fn unity() -> Self {
        ReactiveCase::ConstantPf { gamma: 0.0 }
    }

    pub fn from_power_factor(pf: f64) -> Result<Self, CapabilityError> {
        Ok(ReactiveCase::ConstantPf { gamma: gamma_from_pf(pf)? })
    }

    pub fn validate(&self, node: usize) -> Result<(), CapabilityError> {
        match *self {
            ReactiveCase::ConstantPf { gamma } if !(gamma >= 0.0 && gamma.is_finite()) => {
                Err(CapabilityError::Malformed { node, reason: "gamma must be finite and non-negative" })
            }
            ReactiveCase::Box { q_min, q_max } if !(q_min <= q_max) => {
                Err(CapabilityError::Malformed { node, reason: "box requires q_min <= q_max" })
            }
            ReactiveCase::Quadratic { s_max } if !(s_max > 0.0) => {
                Err(CapabilityError::Malformed { node, reason: "apparent power limit must be positive" })
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReactiveCase::ConstantPf { .. } => "constant_pf",
            ReactiveCase::Box { .. } => "box",
            ReactiveCase::Quadratic { .. } => "quadratic",
        }
    }
}

/// `gamma = sqrt((1 - pf^2) / pf^2)`.
pub fn gamma_from_pf(pf: f64) -> Result<f64, CapabilityError> {
    if !(pf > 0.0 && pf <= 1.0) {
        return Err(CapabilityError::InvalidPowerFactor(pf));
    }
    Ok(((1.0 - pf * pf) / (pf * pf)).sqrt())
}

/// Envelope of one node, pu. `p` is net injection (generation positive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeCapability {
    pub case: ReactiveCase,
    pub p_min: f64,
    pub p_max: f64,
    #[serde(default)]
    pub demand: f64,
    #[serde(default)]
    pub solar: f64,
}

impl NodeCapability {
    pub fn idle() -> Self {
        NodeCapability { case: ReactiveCase::unity(), p_min: 0.0, p_max: 0.0, demand: 0.0, solar: 0.0 }
    }

    /// True when the node can move both above and below zero net injection.
    pub fn is_dispatchable(&self) -> bool {
        self.p_min < 0.0 && self.p_max > 0.0
    }

    /// Reactive range available at real injection `p`, if any.
    pub fn q_range(&self, p: f64) -> Option<(f64, f64)> {
        match self.case {
            ReactiveCase::ConstantPf { gamma } => Some((gamma * p, gamma * p)),
            ReactiveCase::Box { q_min, q_max } => Some((q_min, q_max)),
            ReactiveCase::Quadratic { s_max } => {
                let rem = s_max * s_max - p * p;
                (rem >= 0.0).then(|| (-rem.sqrt(), rem.sqrt()))
            }
        }
    }

    /// Real-power range intersected with what the reactive case allows.
    pub fn effective_p_range(&self) -> (f64, f64) {
        match self.case {
            ReactiveCase::Quadratic { s_max } => (self.p_min.max(-s_max), self.p_max.min(s_max)),
            _ => (self.p_min, self.p_max),
        }
    }
}

/// Per-node envelopes in the network's internal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilitySpec {
    pub nodes: Vec<NodeCapability>,
}

impl CapabilitySpec {
    pub fn new(nodes: Vec<NodeCapability>) -> Result<Self, CapabilityError> {
        for (i, c) in nodes.iter().enumerate() {
            c.case.validate(i)?;
            if !(c.p_min <= c.p_max) || !c.p_min.is_finite() || !c.p_max.is_finite() {
                return Err(CapabilityError::Malformed { node: i, reason: "requires finite p_min <= p_max" });
            }
        }
        Ok(CapabilitySpec { nodes })
    }

    /// Same envelope at every one of `n` nodes.
    pub fn uniform(n: usize, cap: NodeCapability) -> Result<Self, CapabilityError> {
        Self::new(vec![cap; n])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn check_len(&self, n: usize) -> Result<(), CapabilityError> {
        if self.nodes.len() != n {
            return Err(CapabilityError::DimensionMismatch { expected: n, got: self.nodes.len() });
        }
        Ok(())
    }

    /// Replace every node's reactive case, keeping real-power bounds and forecasts.
    pub fn with_case(&self, f: impl Fn(&NodeCapability) -> ReactiveCase) -> Result<Self, CapabilityError> {
        Self::new(self.nodes.iter().map(|c| NodeCapability { case: f(c), ..*c }).collect())
    }

    pub fn dispatchable_count(&self) -> usize {
        self.nodes.iter().filter(|c| c.is_dispatchable()).count()
    }
}

/// Result of evaluating one reactive constraint at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintCheck {
    pub satisfied: bool,
    /// Signed distance to the boundary in pu: positive inside, zero on, negative outside.
    pub margin: f64,
}

/// Tolerance used to call a point on an equality constraint satisfied.
pub const CONSTRAINT_TOL: f64 = 1e-9;

pub fn capability_constraint(case: &ReactiveCase, p: f64, q: f64) -> ConstraintCheck {
    let margin = match *case {
        ReactiveCase::ConstantPf { gamma } => -(q - gamma * p).abs() / (1.0 + gamma * gamma).sqrt(),
        ReactiveCase::Box { q_min, q_max } => (q - q_min).min(q_max - q),
        ReactiveCase::Quadratic { s_max } => s_max - p.hypot(q),
    };
    ConstraintCheck { satisfied: margin >= -CONSTRAINT_TOL, margin }
}
