//! wasm-bindgen exports behind `www/index.html`.
//!
//! Each export wraps a plain function so the logic also runs in native tests.

use cdnsla_core::competition::{ratio_sweep, SweepSide};
use cdnsla_core::coverage::{decompose, CoverageState, GeometryMode, ServerLayout};
use cdnsla_core::queueing::{scaling_sweep, BirthDeathChain};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Flattened `[beta, ratio, beta, ratio, ...]` for the duopoly revenue
/// ratio with one beta held at `beta_fixed`.
pub fn ratio_curve(
    beta_fixed: f64,
    leader_varies: bool,
    points: usize,
) -> Result<Vec<f64>, String> {
    if points < 2 {
        return Err("need at least two points".into());
    }
    let side = if leader_varies {
        SweepSide::Leader
    } else {
        SweepSide::Follower
    };
    let grid: Vec<f64> = (0..points)
        .map(|i| 0.001 + 0.998 * i as f64 / (points - 1) as f64)
        .collect();
    let sweep = ratio_sweep(beta_fixed, &grid, side).map_err(|e| e.to_string())?;
    Ok(sweep
        .rows
        .iter()
        .flat_map(|r| {
            let beta = if leader_varies { r.beta_1 } else { r.beta_2 };
            [beta, r.ratio]
        })
        .collect())
}

#[derive(Debug, Serialize)]
pub struct CoverageView {
    pub radii: Vec<f64>,
    pub max_queues: Vec<usize>,
    pub exclusive_rates: Vec<f64>,
    /// `(servers, rate)` per common region.
    pub common: Vec<(Vec<usize>, f64)>,
    pub covered_rate: f64,
    pub total_rate: f64,
}

/// Serving radii and the arrival-rate split for a layout at given queue
/// lengths. Queues above a server's bound are clamped to it.
pub fn coverage_view(layout_json: &str, queues: &[u32]) -> Result<CoverageView, String> {
    let layout: ServerLayout = serde_json::from_str(layout_json).map_err(|e| e.to_string())?;
    layout.validate().map_err(|e| e.to_string())?;
    let m = layout.num_servers();
    if queues.len() != m {
        return Err(format!("{} queue lengths for {m} servers", queues.len()));
    }
    let max_queues: Vec<usize> = (0..m).map(|i| layout.max_queue(i)).collect();
    let queues: Vec<usize> = queues
        .iter()
        .zip(&max_queues)
        .map(|(&q, &cap)| (q as usize).min(cap))
        .collect();
    let radii = queues
        .iter()
        .enumerate()
        .map(|(i, &q)| layout.radius(i, q))
        .collect();
    let state = CoverageState::new(&layout, queues).map_err(|e| e.to_string())?;
    let mode = if m <= 3 {
        GeometryMode::Exact
    } else {
        GeometryMode::MonteCarlo { samples: 100_000 }
    };
    let d = decompose(&layout, &state, mode, 1).map_err(|e| e.to_string())?;
    Ok(CoverageView {
        radii,
        max_queues,
        exclusive_rates: d.exclusive_rates,
        common: d
            .common_regions
            .iter()
            .map(|z| (z.servers.clone(), z.rate))
            .collect(),
        covered_rate: d.total_covered_rate,
        total_rate: layout.total_arrival_rate(),
    })
}

/// Throughput-to-bound ratio of the single-server chain at each factor.
pub fn scaling_ratios(
    lambda0: f64,
    mu: f64,
    psi: f64,
    factors: &[f64],
) -> Result<Vec<f64>, String> {
    let chain = BirthDeathChain::with_lambda0(lambda0, mu, psi).map_err(|e| e.to_string())?;
    let report = scaling_sweep(&chain, factors).map_err(|e| e.to_string())?;
    Ok(report.rows.iter().map(|r| r.ratio).collect())
}

#[wasm_bindgen(js_name = ratioCurve)]
pub fn ratio_curve_js(
    beta_fixed: f64,
    leader_varies: bool,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    ratio_curve(beta_fixed, leader_varies, points).map_err(|e| JsError::new(&e))
}

/// Returns the view as a JSON string.
#[wasm_bindgen(js_name = coverageView)]
pub fn coverage_view_js(layout_json: &str, queues: Vec<u32>) -> Result<String, JsError> {
    let view = coverage_view(layout_json, &queues).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&view).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = scalingRatios)]
pub fn scaling_ratios_js(
    lambda0: f64,
    mu: f64,
    psi: f64,
    factors: Vec<f64>,
) -> Result<Vec<f64>, JsError> {
    scaling_ratios(lambda0, mu, psi, &factors).map_err(|e| JsError::new(&e))
}
