//! Browser bindings. Every export takes plain arguments and returns a JSON string.

use hc_core::fixtures;
use hc_core::io::{CaseTag, Feeder};
use hc_core::powerflow::{solve_distflow, solve_lindist_voltages, InjectionProfile};
use hc_core::region::compare_regions;
use hc_core::sensitivity::SensitivityMatrices;
use hc_core::validate::{check_boundary_feasibility, monte_carlo_validate, BoundaryVerdict, MonteCarloReport, ReactiveSampling};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Largest sample count accepted from the page.
pub const MAX_SAMPLES: usize = 20_000;

fn load(name: &str) -> Result<(Feeder, SensitivityMatrices), String> {
    let feeder = fixtures::load(name).ok_or_else(|| format!("unknown feeder `{name}`"))?.map_err(|e| e.to_string())?;
    let m = SensitivityMatrices::from_network(&feeder.network).map_err(|e| e.to_string())?;
    Ok((feeder, m))
}

fn case_tag(case: &str) -> Result<CaseTag, String> {
    match case {
        "unity-pf" => Ok(CaseTag::UnityPf),
        "constant-pf" => Ok(CaseTag::ConstantPf),
        "box" => Ok(CaseTag::Box),
        "quadratic" => Ok(CaseTag::Quadratic),
        other => Err(format!("unknown case `{other}`")),
    }
}

fn pf_arg(pf: f64) -> Option<f64> {
    pf.is_finite().then_some(pf)
}

fn verdict(v: &BoundaryVerdict) -> Value {
    match v {
        BoundaryVerdict::Feasible => json!({ "feasible": true }),
        BoundaryVerdict::Violated { nodes, worst_excursion } => {
            json!({ "feasible": false, "nodes": nodes, "worst_excursion": worst_excursion })
        }
    }
}

/// Voltage magnitude against real injection on the two-node feeder, for both models.
pub fn two_node_curve_json(p_min: f64, p_max: f64, steps: usize) -> Result<String, String> {
    if !(p_min < p_max) || !(2..=2000).contains(&steps) {
        return Err("need p_min < p_max and 2..=2000 steps".into());
    }
    let (feeder, m) = load("twonode")?;
    let net = &feeder.network;
    let mut rows = Vec::with_capacity(steps);
    for k in 0..steps {
        let p = p_min + (p_max - p_min) * k as f64 / (steps - 1) as f64;
        let inj = InjectionProfile { p: vec![p], q: vec![0.0] };
        let lin = solve_lindist_voltages(&m, &inj).map_err(|e| e.to_string())?[0];
        let df = solve_distflow(net, &m, &inj).ok().map(|s| s.v[0].sqrt());
        rows.push(json!({ "p": p, "lindist": lin.max(0.0).sqrt(), "distflow": df }));
    }
    Ok(json!({
        "v_min": net.v_min()[0].sqrt(),
        "v_max": net.v_max()[0].sqrt(),
        "points": rows,
    })
    .to_string())
}

/// Inner and LinDist operating regions with endpoint checks under the nonlinear power flow.
/// `pf` is ignored unless finite.
pub fn operating_region_json(feeder: &str, case: &str, pf: f64) -> Result<String, String> {
    let (f, m) = load(feeder)?;
    let cap = f.capability(Some(case_tag(case)?), pf_arg(pf)).map_err(|e| e.to_string())?;
    let cmp = compare_regions(&f.network, &m, &cap).map_err(|e| e.to_string())?;
    let b_inner = check_boundary_feasibility(&f.network, &m, &cmp.inner).map_err(|e| e.to_string())?;
    let b_lin = check_boundary_feasibility(&f.network, &m, &cmp.lindist).map_err(|e| e.to_string())?;
    let ids = f.network.node_ids();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| ids[i]);
    let nodes: Vec<Value> = order
        .iter()
        .map(|&i| {
            json!({
                "id": ids[i],
                "dispatchable": cap.nodes[i].is_dispatchable(),
                "lindist": [cmp.lindist.p_minus[i], cmp.lindist.p_plus[i]],
                "inner": [cmp.inner.p_minus[i], cmp.inner.p_plus[i]],
                "v_lower_lindist": b_lin.v_lower[i].sqrt(),
                "v_lower_inner": b_inner.v_lower[i].sqrt(),
                "v_min": f.network.v_min()[i].sqrt(),
            })
        })
        .collect();
    Ok(json!({
        "feeder": f.name,
        "case": case,
        "nodes": nodes,
        "inner": { "upper": verdict(&b_inner.upper), "lower": verdict(&b_inner.lower) },
        "lindist": { "upper": verdict(&b_lin.upper), "lower": verdict(&b_lin.lower) },
    })
    .to_string())
}

fn mc_json(r: &MonteCarloReport) -> Value {
    let mag = |v: &[f64]| v.iter().map(|x| x.sqrt()).collect::<Vec<_>>();
    json!({
        "samples": r.sample_count,
        "violations": r.violation_count,
        "diverged": r.diverged_count,
        "node_ids": r.node_ids,
        "v_min": mag(&r.v_min),
        "v_max": mag(&r.v_max),
        "q05": mag(&r.q05),
        "q50": mag(&r.q50),
        "q95": mag(&r.q95),
    })
}

/// Seeded Monte-Carlo check of both regions.
pub fn monte_carlo_json(feeder: &str, case: &str, pf: f64, samples: usize, seed: u64) -> Result<String, String> {
    if samples == 0 || samples > MAX_SAMPLES {
        return Err(format!("samples must be in 1..={MAX_SAMPLES}"));
    }
    let (f, m) = load(feeder)?;
    let cap = f.capability(Some(case_tag(case)?), pf_arg(pf)).map_err(|e| e.to_string())?;
    let cmp = compare_regions(&f.network, &m, &cap).map_err(|e| e.to_string())?;
    let run = |region| {
        monte_carlo_validate(&f.network, &m, region, &cap, samples, seed, ReactiveSampling::Interpolated).map_err(|e| e.to_string())
    };
    let inner = run(&cmp.inner)?;
    let lindist = run(&cmp.lindist)?;
    Ok(json!({
        "v_min": f.network.v_min().iter().map(|v| v.sqrt()).collect::<Vec<_>>(),
        "v_max": f.network.v_max().iter().map(|v| v.sqrt()).collect::<Vec<_>>(),
        "inner": mc_json(&inner),
        "lindist": mc_json(&lindist),
    })
    .to_string())
}

#[wasm_bindgen(js_name = twoNodeCurve)]
pub fn two_node_curve(p_min: f64, p_max: f64, steps: usize) -> Result<String, JsError> {
    two_node_curve_json(p_min, p_max, steps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = operatingRegion)]
pub fn operating_region(feeder: &str, case: &str, pf: f64) -> Result<String, JsError> {
    operating_region_json(feeder, case, pf).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = monteCarlo)]
pub fn monte_carlo(feeder: &str, case: &str, pf: f64, samples: usize, seed: u32) -> Result<String, JsError> {
    monte_carlo_json(feeder, case, pf, samples, seed as u64).map_err(|e| JsError::new(&e))
}
