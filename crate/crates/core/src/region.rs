//! Operating-region programs.
//!
//! Each direction maximises `sum log(+-p_i)` over net injections subject to
//! the nodal voltage box applied to `v0 1 + Mp p + Mq q - H l_fixed` and the
//! capability constraints. With `l_fixed = l_min` (upper) and `l_fixed = l_max`
//! (lower) this is the convex inner approximation; with `l_fixed = 0` in both
//! directions it is the lossless (LinDist) baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{BarrierProblem, BarrierSettings, BarrierStatus, Objective, QuadConstraint};
use crate::capability::{CapabilityError, CapabilitySpec, ReactiveCase};
use crate::network::FeederNetwork;
use crate::powerflow::{compute_current_bounds, CurrentBounds, PowerFlowError};
use crate::sensitivity::SensitivityMatrices;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Upper,
    Lower,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Upper => 1.0,
            Direction::Lower => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    InnerApprox,
    LinDist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("{direction:?} program infeasible; binding constraint at node {node}")]
    InfeasibleProgram { direction: Direction, node: usize },
    #[error("no node has positive injection headroom (every p_max <= 0)")]
    NonPositiveUpperBound,
    #[error("no node has withdrawal headroom (every p_min >= 0)")]
    NonNegativeLowerBound,
    #[error("cannot assemble region: upper solve {upper:?}, lower solve {lower:?}")]
    StatusMismatch { upper: SolverStatus, lower: SolverStatus },
    #[error("region at node {node} has p_plus {p_plus} below p_minus {p_minus}")]
    InvertedRegion { node: usize, p_plus: f64, p_minus: f64 },
    #[error(transparent)]
    Capability(#[from] CapabilityError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("vector of length {got} where {expected} was expected")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Optimum of one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalSolution {
    pub direction: Direction,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// The program's own squared voltages (including the fixed loss shift).
    pub v: Vec<f64>,
    pub status: SolverStatus,
    pub kkt_residual: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, Copy)]
enum Term {
    Var(usize),
    Const(f64),
}

struct Layout {
    p: Vec<Term>,
    q: Vec<(Term, f64)>, // q_i = coef * term
    dim: usize,
}

fn layout(capability: &CapabilitySpec, direction: Direction) -> Layout {
    let mut dim = 0;
    let mut p = Vec::with_capacity(capability.len());
    let mut q = Vec::with_capacity(capability.len());
    for c in &capability.nodes {
        let headroom = match direction {
            Direction::Upper => c.p_max > 0.0,
            Direction::Lower => c.p_min < 0.0,
        };
        let pt = if headroom {
            dim += 1;
            Term::Var(dim - 1)
        } else {
            Term::Const(match direction {
                Direction::Upper => c.p_max,
                Direction::Lower => c.p_min,
            })
        };
        p.push(pt);
        q.push(match c.case {
            ReactiveCase::ConstantPf { gamma } => (pt, gamma),
            _ => {
                dim += 1;
                (Term::Var(dim - 1), 1.0)
            }
        });
    }
    Layout { p, q, dim }
}

fn eval(t: Term, x: &DVector<f64>) -> f64 {
    match t {
        Term::Var(k) => x[k],
        Term::Const(c) => c,
    }
}

/// Solve one direction with a fixed loss vector `l_fixed` (`H l_fixed` is subtracted from voltages).
pub fn solve_directional(
    network: &FeederNetwork,
    m: &SensitivityMatrices,
    capability: &CapabilitySpec,
    direction: Direction,
    l_fixed: &[f64],
) -> Result<DirectionalSolution, RegionError> {
    let n = m.len();
    capability.check_len(n)?;
    if l_fixed.len() != n {
        return Err(RegionError::DimensionMismatch { expected: n, got: l_fixed.len() });
    }
    let lay = layout(capability, direction);
    if !lay.p.iter().any(|t| matches!(t, Term::Var(_))) {
        return Err(match direction {
            Direction::Upper => RegionError::NonPositiveUpperBound,
            Direction::Lower => RegionError::NonNegativeLowerBound,
        });
    }

    // V = base + J x
    let shift = &m.h * DVector::from_column_slice(l_fixed);
    let mut base = DVector::from_element(n, m.v0) - shift;
    let mut jac = DMatrix::zeros(n, lay.dim);
    for i in 0..n {
        for (t, coef, sens) in [(lay.p[i], 1.0, &m.m_p), (lay.q[i].0, lay.q[i].1, &m.m_q)] {
            match t {
                Term::Var(k) => {
                    for r in 0..n {
                        jac[(r, k)] += coef * sens[(r, i)];
                    }
                }
                Term::Const(c) => {
                    for r in 0..n {
                        base[r] += coef * c * sens[(r, i)];
                    }
                }
            }
        }
    }

    let mut rows: Vec<(DVector<f64>, f64, usize)> = Vec::new();
    for r in 0..n {
        let row = jac.row(r).transpose();
        rows.push((row.clone(), network.v_max()[r] - base[r], r));
        rows.push((-row, base[r] - network.v_min()[r], r));
    }
    let unit = |k: usize, s: f64| {
        let mut v = DVector::zeros(lay.dim);
        v[k] = s;
        v
    };
    let mut quad = Vec::new();
    let mut quad_node = Vec::new();
    for (i, c) in capability.nodes.iter().enumerate() {
        if let Term::Var(k) = lay.p[i] {
            match direction {
                Direction::Upper => rows.push((unit(k, 1.0), c.p_max, i)),
                Direction::Lower => rows.push((unit(k, -1.0), -c.p_min, i)),
            }
        }
        match (c.case, lay.q[i].0) {
            (ReactiveCase::Box { q_min, q_max }, Term::Var(k)) => {
                rows.push((unit(k, 1.0), q_max, i));
                rows.push((unit(k, -1.0), -q_min, i));
            }
            (ReactiveCase::Quadratic { s_max }, Term::Var(kq)) => {
                let (idx, rhs) = match lay.p[i] {
                    Term::Var(kp) => (vec![kp, kq], s_max * s_max),
                    Term::Const(pc) => (vec![kq], s_max * s_max - pc * pc),
                };
                quad.push(QuadConstraint { idx, lin: vec![], rhs });
                quad_node.push(i);
            }
            _ => {}
        }
    }

    let g = DMatrix::from_fn(rows.len(), lay.dim, |r, c| rows[r].0[c]);
    let h = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let s = direction.sign();
    let log_nodes: Vec<usize> = (0..n).filter(|&i| matches!(lay.p[i], Term::Var(_))).collect();
    let terms = log_nodes
        .iter()
        .map(|&i| match lay.p[i] {
            Term::Var(k) => (k, s),
            Term::Const(_) => unreachable!(),
        })
        .collect();
    let problem = BarrierProblem { dim: lay.dim, g, h, quad, objective: Objective::NegLogSum(terms) };
    let sol = problem.solve(&DVector::zeros(lay.dim), &BarrierSettings::default());

    let status = match sol.status {
        BarrierStatus::Optimal => SolverStatus::Optimal,
        BarrierStatus::MaxIter => SolverStatus::MaxIter,
        BarrierStatus::Infeasible { constraint } => {
            let local = if constraint < rows.len() {
                rows[constraint].2
            } else if constraint < rows.len() + quad_node.len() {
                quad_node[constraint - rows.len()]
            } else {
                log_nodes[constraint - rows.len() - quad_node.len()]
            };
            return Err(RegionError::InfeasibleProgram { direction, node: network.node_ids()[local] });
        }
    };

    let p: Vec<f64> = lay.p.iter().map(|&t| eval(t, &sol.x)).collect();
    let q: Vec<f64> = lay.q.iter().map(|&(t, c)| c * eval(t, &sol.x)).collect();
    let v = (&base + &jac * &sol.x).as_slice().to_vec();
    Ok(DirectionalSolution {
        direction,
        p,
        q,
        v,
        status,
        kkt_residual: sol.stationarity.max(sol.gap),
        newton_steps: sol.newton_steps,
    })
}

/// Inner-approximation upper direction, shifted by `H l_min`.
pub fn solve_p3(
    network: &FeederNetwork,
    m: &SensitivityMatrices,
    capability: &CapabilitySpec,
    bounds: &CurrentBounds,
) -> Result<DirectionalSolution, RegionError> {
    solve_directional(network, m, capability, Direction::Upper, &bounds.l_min)
}

/// Inner-approximation lower direction, shifted by `H l_max`.
pub fn solve_p4(
    network: &FeederNetwork,
    m: &SensitivityMatrices,
    capability: &CapabilitySpec,
    bounds: &CurrentBounds,
) -> Result<DirectionalSolution, RegionError> {
    solve_directional(network, m, capability, Direction::Lower, &bounds.l_max)
}

/// Lossless baseline in either direction.
pub fn solve_p5(
    network: &FeederNetwork,
    m: &SensitivityMatrices,
    capability: &CapabilitySpec,
    direction: Direction,
) -> Result<DirectionalSolution, RegionError> {
    solve_directional(network, m, capability, direction, &vec![0.0; m.len()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingRegion {
    pub model: Model,
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    pub delta_p: Vec<f64>,
    pub q_plus: Vec<f64>,
    pub q_minus: Vec<f64>,
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    /// Flexible-resource bounds: net bounds with solar removed and demand added back.
    pub flex_minus: Vec<f64>,
    pub flex_plus: Vec<f64>,
    pub solver_status: SolverStatus,
}

impl OperatingRegion {
    pub fn len(&self) -> usize {
        self.p_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_plus.is_empty()
    }
}

pub fn assemble_region(
    upper: &DirectionalSolution,
    lower: &DirectionalSolution,
    capability: &CapabilitySpec,
    model: Model,
) -> Result<OperatingRegion, RegionError> {
    if upper.status != SolverStatus::Optimal || lower.status != SolverStatus::Optimal {
        return Err(RegionError::StatusMismatch { upper: upper.status, lower: lower.status });
    }
    let n = upper.p.len();
    for len in [lower.p.len(), capability.len()] {
        if len != n {
            return Err(RegionError::DimensionMismatch { expected: n, got: len });
        }
    }
    let delta_p: Vec<f64> = upper.p.iter().zip(&lower.p).map(|(a, b)| a - b).collect();
    for i in 0..n {
        let strict = capability.nodes[i].is_dispatchable();
        if delta_p[i] < 0.0 || (strict && delta_p[i] == 0.0) {
            return Err(RegionError::InvertedRegion { node: i, p_plus: upper.p[i], p_minus: lower.p[i] });
        }
    }
    let offset: Vec<f64> = capability.nodes.iter().map(|c| c.demand - c.solar).collect();
    Ok(OperatingRegion {
        model,
        flex_minus: lower.p.iter().zip(&offset).map(|(p, o)| p + o).collect(),
        flex_plus: upper.p.iter().zip(&offset).map(|(p, o)| p + o).collect(),
        p_plus: upper.p.clone(),
        p_minus: lower.p.clone(),
        delta_p,
        q_plus: upper.q.clone(),
        q_minus: lower.q.clone(),
        v_plus: upper.v.clone(),
        v_minus: lower.v.clone(),
        solver_status: SolverStatus::Optimal,
    })
}

/// Both regions for one capability case, with the current bounds used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionComparison {
    pub inner: OperatingRegion,
    pub lindist: OperatingRegion,
    pub bounds: CurrentBounds,
}

/// Current bounds, inner approximation and lossless baseline in one call.
pub fn compare_regions(
    network: &FeederNetwork,
    m: &SensitivityMatrices,
    capability: &CapabilitySpec,
) -> Result<RegionComparison, RegionError> {
    let bounds = compute_current_bounds(network, m, capability)?;
    let up = solve_p3(network, m, capability, &bounds)?;
    let lo = solve_p4(network, m, capability, &bounds)?;
    let inner = assemble_region(&up, &lo, capability, Model::InnerApprox)?;
    let up5 = solve_p5(network, m, capability, Direction::Upper)?;
    let lo5 = solve_p5(network, m, capability, Direction::Lower)?;
    let lindist = assemble_region(&up5, &lo5, capability, Model::LinDist)?;
    Ok(RegionComparison { inner, lindist, bounds })
}
