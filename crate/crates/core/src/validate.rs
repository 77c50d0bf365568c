//! Feasibility checks of operating regions against the nonlinear power flow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::{capability_constraint, CapabilitySpec, ReactiveCase};
use crate::network::FeederNetwork;
use crate::powerflow::{solve_distflow, InjectionProfile, PowerFlowError, PowerFlowSolution};
use crate::region::{Direction, DirectionalSolution, OperatingRegion, SolverStatus};
use crate::sensitivity::SensitivityMatrices;

/// Slack on squared-voltage and squared-current limits before a sample counts as a violation.
pub const VIOLATION_TOL: f64 = 1e-7;

/// Largest number of grid points the brute-force oracle will enumerate.
pub const MAX_ORACLE_POINTS: usize = 4_000_000;
/// Upper bound on reactive combinations tried per oracle grid point.
pub const MAX_Q_COMBOS: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("region was not solved to optimality ({0:?})")]
    NotOptimal(SolverStatus),
    #[error("power flow at the {direction:?} boundary diverged: {source}")]
    Diverged {
        direction: Direction,
        #[source]
        source: PowerFlowError,
    },
    #[error("grid of {points} points exceeds the oracle limit of {limit}")]
    GridTooLarge { points: usize, limit: usize },
    #[error("oracle supports at most 3 dispatchable nodes, found {0}")]
    TooManyNodes(usize),
    #[error("grid step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("region and network sizes differ ({region} vs {network})")]
    DimensionMismatch { region: usize, network: usize },
}

/// Check one solved operating point against voltage and current limits.
/// Returns the violating positions and the worst excursion (pu).
pub fn limit_violations(network: &FeederNetwork, sol: &PowerFlowSolution, tol: f64) -> (Vec<usize>, f64) {
    let mut nodes = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..network.len() {
        let under = network.v_min()[i] - sol.v[i];
        let over = sol.v[i] - network.v_max()[i];
        let overload = sol.l[i] - network.l_max()[i];
        let exc = under.max(over).max(overload);
        if exc > tol {
            nodes.push(i);
            worst = worst.max(exc);
        }
    }
    (nodes, worst)
}

/// How reactive injections accompany the sampled real injections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReactiveSampling {
    /// `q` moves linearly with `p` between the region's solved endpoints
    /// `(p_minus, q_minus)` and `(p_plus, q_plus)`.
    #[default]
    Interpolated,
    /// `q` drawn independently from everything the capability case allows at `p`.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    /// Squared voltages, `None` when the power flow diverged.
    pub v: Option<Vec<f64>>,
    pub violated: bool,
    /// Mean normalised position of the sample inside the region (0 = p_minus, 1 = p_plus).
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub sample_count: usize,
    pub violation_count: usize,
    pub diverged_count: usize,
    pub seed: u64,
    pub sampling: ReactiveSampling,
    pub node_ids: Vec<usize>,
    /// Per-node statistics of squared voltages over converged samples.
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub q05: Vec<f64>,
    pub q50: Vec<f64>,
    pub q95: Vec<f64>,
    #[serde(skip)]
    pub samples: Vec<SampleOutcome>,
}

fn draw_sample(region: &OperatingRegion, capability: &CapabilitySpec, sampling: ReactiveSampling, rng: &mut ChaCha8Rng) -> (InjectionProfile, f64) {
    let n = region.len();
    let mut inj = InjectionProfile::zeros(n);
    let mut pos = 0.0;
    let mut counted = 0usize;
    for i in 0..n {
        let (lo, hi) = (region.p_minus[i], region.p_plus[i]);
        let t: f64 = rng.random();
        let p = lo + t * (hi - lo);
        if hi > lo {
            pos += t;
            counted += 1;
        }
        let q = match (sampling, capability.nodes[i].case) {
            (_, ReactiveCase::ConstantPf { gamma }) => gamma * p,
            (ReactiveSampling::Interpolated, _) => region.q_minus[i] + t * (region.q_plus[i] - region.q_minus[i]),
            (ReactiveSampling::Independent, _) => match capability.nodes[i].q_range(p) {
                Some((qa, qb)) => qa + rng.random::<f64>() * (qb - qa),
                None => 0.0,
            },
        };
        inj.p[i] = p;
        inj.q[i] = q;
    }
    (inj, if counted > 0 { pos / counted as f64 } else { 0.0 })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sample uniformly inside the region and tally limit violations under the
/// nonlinear power flow. Sample `i` uses ChaCha8 stream `i` of `seed`, so the
/// report does not depend on evaluation order.
pub fn monte_carlo_validate(
    network: &FeederNetwork,
    m: &SensitivityMatrices,
    region: &OperatingRegion,
    capability: &CapabilitySpec,
    samples: usize,
    seed: u64,
    sampling: ReactiveSampling,
) -> Result<MonteCarloReport, ValidationError> {
    if region.solver_status != SolverStatus::Optimal {
        return Err(ValidationError::NotOptimal(region.solver_status));
    }
    if region.len() != network.len() || capability.len() != network.len() {
        return Err(ValidationError::DimensionMismatch { region: region.len(), network: network.len() });
    }
    let run = |i: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (inj, position) = draw_sample(region, capability, sampling, &mut rng);
        match solve_distflow(network, m, &inj) {
            Ok(sol) => {
                let (bad, _) = limit_violations(network, &sol, VIOLATION_TOL);
                SampleOutcome { violated: !bad.is_empty(), v: Some(sol.v), position }
            }
            Err(_) => SampleOutcome { v: None, violated: false, position },
        }
    };

    #[cfg(feature = "parallel")]
    let outcomes: Vec<SampleOutcome> = {
        use rayon::prelude::*;
        (0..samples).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<SampleOutcome> = (0..samples).map(run).collect();

    let n = network.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); n];
    for v in outcomes.iter().filter_map(|o| o.v.as_ref()) {
        for (col, &vi) in columns.iter_mut().zip(v) {
            col.push(vi);
        }
    }
    for col in &mut columns {
        col.sort_by(f64::total_cmp);
    }
    let stat = |f: &dyn Fn(&[f64]) -> f64| columns.iter().map(|c| f(c)).collect::<Vec<_>>();
    Ok(MonteCarloReport {
        sample_count: samples,
        violation_count: outcomes.iter().filter(|o| o.violated).count(),
        diverged_count: outcomes.iter().filter(|o| o.v.is_none()).count(),
        seed,
        sampling,
        node_ids: network.node_ids().to_vec(),
        v_min: stat(&|c| c.first().copied().unwrap_or(f64::NAN)),
        v_max: stat(&|c| c.last().copied().unwrap_or(f64::NAN)),
        q05: stat(&|c| quantile(c, 0.05)),
        q50: stat(&|c| quantile(c, 0.5)),
        q95: stat(&|c| quantile(c, 0.95)),
        samples: outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum BoundaryVerdict {
    Feasible,
    /// External ids of offending nodes and the largest excursion beyond a limit (pu).
    Violated { nodes: Vec<usize>, worst_excursion: f64 },
}

impl BoundaryVerdict {
    pub fn is_feasible(&self) -> bool {
        matches!(self, BoundaryVerdict::Feasible)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub upper: BoundaryVerdict,
    pub lower: BoundaryVerdict,
    /// Squared voltages from the nonlinear power flow at each endpoint.
    pub v_upper: Vec<f64>,
    pub v_lower: Vec<f64>,
}

/// Run the nonlinear power flow exactly at both endpoints of the region.
pub fn check_boundary_feasibility(
    network: &FeederNetwork,
    m: &SensitivityMatrices,
    region: &OperatingRegion,
) -> Result<BoundaryReport, ValidationError> {
    if region.solver_status != SolverStatus::Optimal {
        return Err(ValidationError::NotOptimal(region.solver_status));
    }
    let verdict = |p: &[f64], q: &[f64], direction| {
        let inj = InjectionProfile { p: p.to_vec(), q: q.to_vec() };
        let sol = solve_distflow(network, m, &inj).map_err(|source| ValidationError::Diverged { direction, source })?;
        let (bad, worst) = limit_violations(network, &sol, VIOLATION_TOL);
        let v = if bad.is_empty() {
            BoundaryVerdict::Feasible
        } else {
            BoundaryVerdict::Violated { nodes: bad.iter().map(|&i| network.node_ids()[i]).collect(), worst_excursion: worst }
        };
        Ok::<_, ValidationError>((v, sol.v))
    };
    let (upper, v_upper) = verdict(&region.p_plus, &region.q_plus, Direction::Upper)?;
    let (lower, v_lower) = verdict(&region.p_minus, &region.q_minus, Direction::Lower)?;
    Ok(BoundaryReport { upper, lower, v_upper, v_lower })
}

/// Nodes whose voltage contribution does not rise monotonically from the lower
/// to the upper endpoint, i.e. some entry of `Mp[:, i] dp_i + Mq[:, i] dq_i` is
/// negative. For the others, any `(p_i, q_i)` on the segment between the two
/// endpoints keeps the linear voltage bounds between those of the endpoints,
/// which is what makes independent per-node dispatch with interpolated `q` safe.
pub fn non_monotone_nodes(m: &SensitivityMatrices, region: &OperatingRegion) -> Vec<usize> {
    (0..region.len())
        .filter(|&i| {
            let dp = region.p_plus[i] - region.p_minus[i];
            let dq = region.q_plus[i] - region.q_minus[i];
            (0..m.len()).any(|k| m.m_p[(k, i)] * dp + m.m_q[(k, i)] * dq < -1e-12)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeActivity {
    pub position: usize,
    pub margin: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityReport {
    pub nodes: Vec<NodeActivity>,
    /// Positions of nodes whose reactive constraint is not binding.
    pub inactive: Vec<usize>,
}

impl ActivityReport {
    pub fn all_active(&self) -> bool {
        self.inactive.is_empty()
    }
}

/// Check that every node's reactive capability constraint binds at a lossless optimum.
/// Constant power factor nodes are an equality and count as active.
pub fn check_reactive_activity(solution: &DirectionalSolution, capability: &CapabilitySpec, tol: f64) -> ActivityReport {
    let nodes: Vec<NodeActivity> = capability
        .nodes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let chk = capability_constraint(&c.case, solution.p[i], solution.q[i]);
            let active = match c.case {
                ReactiveCase::ConstantPf { .. } => true,
                _ => chk.margin.abs() <= tol,
            };
            NodeActivity { position: i, margin: chk.margin, active }
        })
        .collect();
    let inactive = nodes.iter().filter(|a| !a.active).map(|a| a.position).collect();
    ActivityReport { nodes, inactive }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRegion {
    /// Feasible interval per node; `None` for nodes without a real-power range.
    pub intervals: Vec<Option<(f64, f64)>>,
    pub grid_step: f64,
    /// Number of nonlinear power flows evaluated.
    pub evaluations: usize,
}

impl OracleRegion {
    pub fn is_empty(&self) -> bool {
        self.intervals.iter().all(|i| i.is_none())
    }
}

struct Grid {
    nodes: Vec<usize>,
    values: Vec<Vec<f64>>,
}

fn grid_values(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let k0 = (lo / step - 1e-9).ceil() as i64;
    let k1 = (hi / step + 1e-9).floor() as i64;
    (k0..=k1).map(|k| k as f64 * step).collect()
}

/// Brute-force feasible region for feeders with at most three variable nodes.
///
/// Every grid point is checked with the nonlinear power flow; for box and
/// quadratic nodes the point counts as feasible when any combination of evenly
/// spaced admissible reactive injections is (spacing about one grid step,
/// at most [`MAX_Q_COMBOS`] combinations). Starting from
/// the grid point closest to zero, each node's interval grows one step at a
/// time while the full cross product stays feasible.
pub fn oracle_region(network: &FeederNetwork, m: &SensitivityMatrices, capability: &CapabilitySpec, grid_step: f64) -> Result<OracleRegion, ValidationError> {
    if !(grid_step > 0.0) {
        return Err(ValidationError::InvalidStep(grid_step));
    }
    let n = network.len();
    if capability.len() != n {
        return Err(ValidationError::DimensionMismatch { region: capability.len(), network: n });
    }
    let nodes: Vec<usize> = (0..n)
        .filter(|&i| {
            let (lo, hi) = capability.nodes[i].effective_p_range();
            hi > lo
        })
        .collect();
    if nodes.len() > 3 {
        return Err(ValidationError::TooManyNodes(nodes.len()));
    }
    let grid = Grid {
        values: nodes
            .iter()
            .map(|&i| {
                let (lo, hi) = capability.nodes[i].effective_p_range();
                grid_values(lo, hi, grid_step)
            })
            .collect(),
        nodes,
    };
    let points = grid.values.iter().map(|v| v.len()).product::<usize>();
    if points > MAX_ORACLE_POINTS {
        return Err(ValidationError::GridTooLarge { points, limit: MAX_ORACLE_POINTS });
    }
    if grid.nodes.is_empty() || grid.values.iter().any(|v| v.is_empty()) {
        return Ok(OracleRegion { intervals: vec![None; n], grid_step, evaluations: 0 });
    }

    // reactive levels per free-q node, keeping the combinations per point bounded
    let free_q = (0..n)
        .filter(|&i| !matches!(capability.nodes[i].case, ReactiveCase::ConstantPf { .. }) && capability.nodes[i].is_dispatchable())
        .count()
        .max(1);
    let q_levels = ((MAX_Q_COMBOS as f64).powf(1.0 / free_q as f64).floor() as usize).max(3);
    let fixed_p: Vec<f64> = capability.nodes.iter().map(|c| c.effective_p_range().0).collect();
    let mut cache = std::collections::HashMap::<Vec<usize>, bool>::new();
    let evaluations = std::cell::Cell::new(0usize);
    let mut feasible = |idx: &[usize]| -> bool {
        if let Some(&f) = cache.get(idx) {
            return f;
        }
        let mut p = fixed_p.clone();
        for (d, &i) in grid.nodes.iter().enumerate() {
            p[i] = grid.values[d][idx[d]];
        }
        let options: Vec<Vec<f64>> = (0..n)
            .map(|i| match capability.nodes[i].q_range(p[i]) {
                Some((a, b)) if b > a => {
                    let k = (((b - a) / grid_step).ceil() as usize + 1).clamp(3, q_levels);
                    (0..k).map(|j| a + (b - a) * j as f64 / (k - 1) as f64).collect()
                }
                Some((a, _)) => vec![a],
                None => vec![],
            })
            .collect();
        let mut ok = false;
        if options.iter().all(|o| !o.is_empty()) {
            let combos: usize = options.iter().map(|o| o.len()).product();
            for mut c in 0..combos {
                let q: Vec<f64> = options
                    .iter()
                    .map(|o| {
                        let v = o[c % o.len()];
                        c /= o.len();
                        v
                    })
                    .collect();
                evaluations.set(evaluations.get() + 1);
                if let Ok(sol) = solve_distflow(network, m, &InjectionProfile { p: p.clone(), q }) {
                    if limit_violations(network, &sol, VIOLATION_TOL).0.is_empty() {
                        ok = true;
                        break;
                    }
                }
            }
        }
        cache.insert(idx.to_vec(), ok);
        ok
    };

    let start: Vec<usize> = grid
        .values
        .iter()
        .map(|v| {
            v.iter()
                .enumerate()
                .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(k, _)| k)
                .unwrap_or(0)
        })
        .collect();
    if !feasible(&start) {
        return Ok(OracleRegion { intervals: vec![None; n], grid_step, evaluations: evaluations.get() });
    }
    let dims = grid.nodes.len();
    let mut lo = start.clone();
    let mut hi = start;
    loop {
        let mut grew = false;
        for d in 0..dims {
            for up in [false, true] {
                let cand = if up {
                    if hi[d] + 1 >= grid.values[d].len() {
                        continue;
                    }
                    hi[d] + 1
                } else {
                    if lo[d] == 0 {
                        continue;
                    }
                    lo[d] - 1
                };
                // every point of the new face must be feasible
                let mut idx = lo.clone();
                idx[d] = cand;
                let mut all = true;
                'face: loop {
                    if !feasible(&idx) {
                        all = false;
                        break;
                    }
                    let mut e = 0;
                    loop {
                        if e == dims {
                            break 'face;
                        }
                        if e == d {
                            e += 1;
                            continue;
                        }
                        if idx[e] < hi[e] {
                            idx[e] += 1;
                            break;
                        }
                        idx[e] = lo[e];
                        e += 1;
                    }
                }
                if all {
                    if up {
                        hi[d] = cand;
                    } else {
                        lo[d] = cand;
                    }
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
    }

    let mut intervals = vec![None; n];
    for (d, &i) in grid.nodes.iter().enumerate() {
        intervals[i] = Some((grid.values[d][lo[d]], grid.values[d][hi[d]]));
    }
    Ok(OracleRegion { intervals, grid_step, evaluations: evaluations.get() })
}
