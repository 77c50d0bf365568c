//! Nonlinear branch-flow (DistFlow) solution and worst-case current bounds.
//!
//! The solver iterates the map `l -> (P(l)^2 + Q(l)^2) / V(l)` where
//! `P = C p - D_R l`, `Q = C q - D_X l` and `V = v0 1 + Mp p + Mq q - H l`.
//! Starting from `l = 0` it converges to the high-voltage solution on
//! solvable radial cases; beyond the nose point it stalls or drives a voltage
//! non-positive, which is reported as [`PowerFlowError::Diverged`].

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::{CapabilitySpec, NodeCapability, ReactiveCase};
use crate::network::FeederNetwork;
use crate::sensitivity::SensitivityMatrices;

pub const MAX_ITERATIONS: usize = 200;
pub const STEP_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("power flow diverged after {iterations} iterations: {reason}")]
    Diverged { iterations: usize, reason: String },
    #[error("injection vectors have length {got}, network has {expected} nodes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite injection at position {0}")]
    NonFinite(usize),
    #[error("power flow at capability corner `{corner}` failed")]
    CornerDiverged {
        corner: String,
        #[source]
        source: Box<PowerFlowError>,
    },
}

/// Net nodal injections, pu, internal order. Generation is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionProfile {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl InjectionProfile {
    pub fn zeros(n: usize) -> Self {
        InjectionProfile { p: vec![0.0; n], q: vec![0.0; n] }
    }

    fn check(&self, n: usize) -> Result<(), PowerFlowError> {
        for len in [self.p.len(), self.q.len()] {
            if len != n {
                return Err(PowerFlowError::DimensionMismatch { expected: n, got: len });
            }
        }
        if let Some(i) = self.p.iter().chain(&self.q).position(|v| !v.is_finite()) {
            return Err(PowerFlowError::NonFinite(i % n));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    /// Squared voltage magnitudes.
    pub v: Vec<f64>,
    /// Real power leaving each node towards its parent, measured at the node.
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    /// Squared branch current magnitudes.
    pub l: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest residual of the four branch-flow equations.
    pub max_residual: f64,
}

struct State {
    v: DVector<f64>,
    p_flow: DVector<f64>,
    q_flow: DVector<f64>,
}

fn evaluate(m: &SensitivityMatrices, cp: &DVector<f64>, cq: &DVector<f64>, v_lin: &DVector<f64>, l: &DVector<f64>) -> State {
    State {
        v: v_lin - &m.h * l,
        p_flow: cp - &m.d_r * l,
        q_flow: cq - &m.d_x * l,
    }
}

pub fn solve_distflow(
    network: &FeederNetwork,
    m: &SensitivityMatrices,
    injections: &InjectionProfile,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let n = m.len();
    injections.check(n)?;
    let p = DVector::from_column_slice(&injections.p);
    let q = DVector::from_column_slice(&injections.q);
    let cp = &m.c * &p;
    let cq = &m.c * &q;
    let v_lin = DVector::from_element(n, m.v0) + &m.m_p * &p + &m.m_q * &q;

    let mut l = DVector::zeros(n);
    for it in 1..=MAX_ITERATIONS {
        let s = evaluate(m, &cp, &cq, &v_lin, &l);
        if let Some(i) = s.v.iter().position(|&v| !(v > 0.0)) {
            return Err(PowerFlowError::Diverged {
                iterations: it,
                reason: format!("squared voltage at node {} fell to {:.4e}", network.node_ids()[i], s.v[i]),
            });
        }
        let next = DVector::from_fn(n, |i, _| {
            (s.p_flow[i] * s.p_flow[i] + s.q_flow[i] * s.q_flow[i]) / s.v[i]
        });
        let step = (&next - &l).amax();
        l = next;
        if !step.is_finite() {
            break;
        }
        if step < STEP_TOLERANCE {
            let s = evaluate(m, &cp, &cq, &v_lin, &l);
            if s.v.iter().any(|&v| !(v > 0.0)) {
                break;
            }
            let mut sol = PowerFlowSolution {
                v: s.v.as_slice().to_vec(),
                p_flow: s.p_flow.as_slice().to_vec(),
                q_flow: s.q_flow.as_slice().to_vec(),
                l: l.as_slice().to_vec(),
                converged: true,
                iterations: it,
                max_residual: 0.0,
            };
            sol.max_residual = branch_flow_residual(network, injections, &sol);
            return Ok(sol);
        }
    }
    Err(PowerFlowError::Diverged {
        iterations: MAX_ITERATIONS,
        reason: "iteration cap reached without convergence (operating point beyond the nose)".into(),
    })
}

/// Largest absolute residual of the branch-flow equations, evaluated branch by
/// branch from the tree structure rather than through the sensitivity matrices.
pub fn branch_flow_residual(network: &FeederNetwork, inj: &InjectionProfile, sol: &PowerFlowSolution) -> f64 {
    let n = network.len();
    let (r, x) = (network.r(), network.x());
    let v_of = |k: usize| if k == 0 { network.v0() } else { sol.v[k - 1] };
    let mut worst = 0.0f64;
    for j in 0..n {
        let vi = v_of(network.parent_of(j));
        let z2 = r[j] * r[j] + x[j] * x[j];
        let volt = sol.v[j] - (vi + 2.0 * r[j] * sol.p_flow[j] + 2.0 * x[j] * sol.q_flow[j] - z2 * sol.l[j]);
        let curr = sol.l[j] - (sol.p_flow[j].powi(2) + sol.q_flow[j].powi(2)) / sol.v[j];

        let (mut pin, mut qin) = (inj.p[j], inj.q[j]);
        for c in network.children_of(j + 1) {
            pin += sol.p_flow[c] - r[c] * sol.l[c];
            qin += sol.q_flow[c] - x[c] * sol.l[c];
        }
        let real = sol.p_flow[j] - pin;
        let reac = sol.q_flow[j] - qin;
        worst = worst.max(volt.abs()).max(curr.abs()).max(real.abs()).max(reac.abs());
    }
    worst
}

/// Lossless voltages `v0 1 + Mp p + Mq q`.
pub fn solve_lindist_voltages(m: &SensitivityMatrices, injections: &InjectionProfile) -> Result<Vec<f64>, PowerFlowError> {
    injections.check(m.len())?;
    let p = DVector::from_column_slice(&injections.p);
    let q = DVector::from_column_slice(&injections.q);
    let v = DVector::from_element(m.len(), m.v0) + &m.m_p * p + &m.m_q * q;
    Ok(v.as_slice().to_vec())
}

/// Elementwise squared-current bounds over the capability envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentBounds {
    pub l_min: Vec<f64>,
    pub l_max: Vec<f64>,
    /// Corners whose power flow diverged and were replaced by the network's current limits.
    pub fallback_corners: Vec<String>,
}

impl CurrentBounds {
    pub fn zero(n: usize) -> Self {
        CurrentBounds { l_min: vec![0.0; n], l_max: vec![0.0; n], fallback_corners: Vec::new() }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        CurrentBounds {
            l_min: self.l_min.clone(),
            l_max: self.l_max.iter().map(|l| l * factor).collect(),
            fallback_corners: self.fallback_corners.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Corner {
    Signs { p_high: bool, q_high: bool },
    Angle(f64),
}

impl Corner {
    fn label(&self) -> String {
        match *self {
            Corner::Signs { p_high, q_high } => format!(
                "p={},q={}",
                if p_high { "max" } else { "min" },
                if q_high { "max" } else { "min" }
            ),
            Corner::Angle(t) => format!("angle={:.1}deg", t.to_degrees()),
        }
    }
}

/// Number of points on the apparent-power circle visited for quadratic nodes.
const QUADRATIC_ANGLES: usize = 16;

fn corner_point(cap: &NodeCapability, corner: Corner) -> (f64, f64) {
    let (p_lo, p_hi) = cap.effective_p_range();
    let (p_high, q_high) = match corner {
        Corner::Signs { p_high, q_high } => (p_high, q_high),
        Corner::Angle(t) => (t.cos() >= 0.0, t.sin() >= 0.0),
    };
    match cap.case {
        ReactiveCase::ConstantPf { gamma } => {
            let p = if p_high { p_hi } else { p_lo };
            (p, gamma * p)
        }
        ReactiveCase::Box { q_min, q_max } => {
            (if p_high { p_hi } else { p_lo }, if q_high { q_max } else { q_min })
        }
        ReactiveCase::Quadratic { s_max } => {
            let p = match corner {
                Corner::Angle(t) => (s_max * t.cos()).clamp(p_lo, p_hi),
                Corner::Signs { .. } => if p_high { p_hi } else { p_lo },
            };
            let q = (s_max * s_max - p * p).max(0.0).sqrt();
            (p, if q_high { q } else { -q })
        }
    }
}

fn corners(cap: &CapabilitySpec) -> Vec<Corner> {
    let mut out = Vec::new();
    for p_high in [false, true] {
        for q_high in [false, true] {
            out.push(Corner::Signs { p_high, q_high });
        }
    }
    if cap.nodes.iter().any(|c| matches!(c.case, ReactiveCase::Quadratic { .. })) {
        out.extend((0..QUADRATIC_ANGLES).map(|k| {
            Corner::Angle(2.0 * std::f64::consts::PI * (k as f64 + 0.5) / QUADRATIC_ANGLES as f64)
        }));
    }
    out
}

/// Injection profile with every node at the given capability corner.
fn corner_profile(cap: &CapabilitySpec, corner: Corner) -> InjectionProfile {
    let (p, q) = cap.nodes.iter().map(|c| corner_point(c, corner)).unzip();
    InjectionProfile { p, q }
}

/// Worst-case squared currents: `l_min = 0`, `l_max` is the elementwise max of
/// `l` over power flows with every resource pushed to a common capability corner.
pub fn compute_current_bounds(
    network: &FeederNetwork,
    m: &SensitivityMatrices,
    capability: &CapabilitySpec,
) -> Result<CurrentBounds, PowerFlowError> {
    let n = m.len();
    if capability.len() != n {
        return Err(PowerFlowError::DimensionMismatch { expected: n, got: capability.len() });
    }
    let mut bounds = CurrentBounds::zero(n);
    for corner in corners(capability) {
        let profile = corner_profile(capability, corner);
        let l = match solve_distflow(network, m, &profile) {
            Ok(sol) => sol.l,
            Err(e) => {
                if network.l_max().iter().all(|l| l.is_finite()) {
                    bounds.fallback_corners.push(corner.label());
                    network.l_max().to_vec()
                } else {
                    return Err(PowerFlowError::CornerDiverged { corner: corner.label(), source: Box::new(e) });
                }
            }
        };
        for (b, li) in bounds.l_max.iter_mut().zip(l) {
            *b = b.max(li);
        }
    }
    Ok(bounds)
}
