//! End-to-end run: feeder, regions, endpoint checks, Monte Carlo, summary.

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::io::{CaseTag, Feeder, IoError, RegionExport, RegionFile};
use crate::region::{compare_regions, solve_p5, Direction, RegionComparison, RegionError};
use crate::sensitivity::{SensitivityError, SensitivityMatrices};
use crate::validate::{
    check_boundary_feasibility, check_reactive_activity, monte_carlo_validate, non_monotone_nodes, oracle_region, ActivityReport,
    BoundaryReport, MonteCarloReport, OracleRegion, ReactiveSampling, ValidationError,
};

/// Tolerance on the reactive capability margin when checking constraint activity.
pub const ACTIVITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSelect {
    Inner,
    Lindist,
    #[default]
    Both,
}

impl ModelSelect {
    pub fn inner(self) -> bool {
        matches!(self, ModelSelect::Inner | ModelSelect::Both)
    }

    pub fn lindist(self) -> bool {
        matches!(self, ModelSelect::Lindist | ModelSelect::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    /// Override every capability record's case.
    pub case: Option<CaseTag>,
    pub pf: Option<f64>,
    pub model: ModelSelect,
    pub samples: usize,
    pub seed: u64,
    pub sampling: ReactiveSampling,
    /// Run the grid oracle with this step (small feeders only).
    pub oracle_step: Option<f64>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            case: None,
            pf: None,
            model: ModelSelect::Both,
            samples: 1000,
            seed: 42,
            sampling: ReactiveSampling::Interpolated,
            oracle_step: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub comparison: RegionComparison,
    pub boundary_inner: BoundaryReport,
    pub boundary_lindist: BoundaryReport,
    pub activity_upper: ActivityReport,
    pub activity_lower: ActivityReport,
    pub mc_inner: Option<MonteCarloReport>,
    pub mc_lindist: Option<MonteCarloReport>,
    pub oracle: Option<OracleRegion>,
    pub export: RegionExport,
    pub regions: RegionFile,
}

impl PipelineResult {
    /// Inner region endpoints feasible and no Monte-Carlo sample of it violated a limit.
    pub fn inner_passes(&self) -> bool {
        self.boundary_inner.upper.is_feasible()
            && self.boundary_inner.lower.is_feasible()
            && self.mc_inner.as_ref().is_none_or(|r| r.violation_count == 0 && r.diverged_count == 0)
    }

    pub fn mc_reports(&self) -> Vec<(&'static str, &MonteCarloReport)> {
        let mut out = Vec::new();
        if let Some(r) = &self.mc_inner {
            out.push(("inner", r));
        }
        if let Some(r) = &self.mc_lindist {
            out.push(("lindist", r));
        }
        out
    }
}

fn case_label(feeder: &Feeder, case: Option<CaseTag>) -> String {
    match case {
        Some(c) => c.as_str().to_string(),
        None => {
            let mut tags: Vec<&str> = feeder.records.iter().flatten().map(|r| r.case.as_str()).collect();
            tags.sort_unstable();
            tags.dedup();
            tags.join("+")
        }
    }
}

pub fn run_pipeline(feeder: &Feeder, opts: &PipelineOptions) -> Result<PipelineResult, PipelineError> {
    let net = &feeder.network;
    let cap = feeder.capability(opts.case, opts.pf)?;
    let m = SensitivityMatrices::from_network(net)?;
    let comparison = compare_regions(net, &m, &cap)?;
    let boundary_inner = check_boundary_feasibility(net, &m, &comparison.inner)?;
    let boundary_lindist = check_boundary_feasibility(net, &m, &comparison.lindist)?;
    let activity_upper = check_reactive_activity(&solve_p5(net, &m, &cap, Direction::Upper)?, &cap, ACTIVITY_TOL);
    let activity_lower = check_reactive_activity(&solve_p5(net, &m, &cap, Direction::Lower)?, &cap, ACTIVITY_TOL);

    let mc = |region| monte_carlo_validate(net, &m, region, &cap, opts.samples, opts.seed, opts.sampling);
    let mc_inner = if opts.model.inner() && opts.samples > 0 { Some(mc(&comparison.inner)?) } else { None };
    let mc_lindist = if opts.model.lindist() && opts.samples > 0 { Some(mc(&comparison.lindist)?) } else { None };
    let oracle = opts.oracle_step.map(|step| oracle_region(net, &m, &cap, step)).transpose()?;

    let case = case_label(feeder, opts.case);
    let mc_json = |r: &Option<MonteCarloReport>| {
        r.as_ref().map(|r| {
            json!({
                "samples": r.sample_count,
                "violations": r.violation_count,
                "diverged": r.diverged_count,
                "violation_rate": r.violation_count as f64 / r.sample_count.max(1) as f64,
                "v_min": r.v_min.iter().copied().fold(f64::INFINITY, f64::min).sqrt(),
                "v_max": r.v_max.iter().copied().fold(f64::NEG_INFINITY, f64::max).sqrt(),
            })
        })
    };
    let summary = json!({
        "feeder": feeder.name,
        "case": case,
        "pf": opts.pf,
        "seed": opts.seed,
        "sampling": opts.sampling,
        "nodes": net.len(),
        "dispatchable_nodes": cap.dispatchable_count(),
        "total_delta_p_inner": comparison.inner.delta_p.iter().sum::<f64>(),
        "total_delta_p_lindist": comparison.lindist.delta_p.iter().sum::<f64>(),
        "current_bound_fallbacks": comparison.bounds.fallback_corners,
        "boundary_inner": boundary_inner,
        "boundary_lindist": boundary_lindist,
        "non_monotone_nodes_inner": non_monotone_nodes(&m, &comparison.inner).iter().map(|&i| net.node_ids()[i]).collect::<Vec<_>>(),
        "reactive_activity_upper": activity_upper.all_active(),
        "reactive_activity_lower": activity_lower.all_active(),
        "monte_carlo_inner": mc_json(&mc_inner),
        "monte_carlo_lindist": mc_json(&mc_lindist),
        "oracle": oracle,
    });
    let export = RegionExport::new(net, &comparison, summary);
    let regions = RegionFile {
        feeder: feeder.name.clone(),
        case,
        node_ids: net.node_ids().to_vec(),
        inner: comparison.inner.clone(),
        lindist: comparison.lindist.clone(),
    };
    Ok(PipelineResult {
        comparison,
        boundary_inner,
        boundary_lindist,
        activity_upper,
        activity_lower,
        mc_inner,
        mc_lindist,
        oracle,
        export,
        regions,
    })
}
