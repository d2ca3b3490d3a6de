use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{batch_interval, default_warmup, run, SimConfig, SimPolicy, SimReport};
use crate::coverage::{
    decompose, CoverageState, GeometryMode, ServerLayout, DEFAULT_SAMPLES, MAX_EXACT_SERVERS,
};
use crate::error::{invalid, Result};
use crate::static_policy::{plan_layout, solve_stage1};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub throughput_rate: f64,
    pub ci_half_width: f64,
    pub revenue_rate: f64,
    /// Throughput minus the first configuration's, paired by batch.
    pub diff_vs_first: f64,
    pub diff_half_width: f64,
    /// 1 for the highest throughput.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub reports: Vec<SimReport>,
}

/// Runs configurations that differ only in policy on common random numbers.
pub fn compare_policies(configs: &[SimConfig]) -> Result<Comparison> {
    let Some(first) = configs.first() else {
        return invalid("nothing to compare");
    };
    for c in &configs[1..] {
        if c.layout != first.layout
            || c.seed != first.seed
            || c.horizon != first.horizon
            || c.effective_warmup() != first.effective_warmup()
        {
            return invalid("compared configurations must share layout, seed, horizon and warmup");
        }
    }
    let reports = configs.par_iter().map(run).collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| {
        reports[b]
            .throughput_rate
            .total_cmp(&reports[a].throughput_rate)
            .then(a.cmp(&b))
    });
    let mut rank = vec![0; reports.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }

    let base = &reports[0].batch_throughputs;
    let rows = reports
        .iter()
        .enumerate()
        .map(|(i, rep)| {
            let diffs: Vec<f64> = rep
                .batch_throughputs
                .iter()
                .zip(base)
                .map(|(a, b)| a - b)
                .collect();
            let (_, diff_half_width) = batch_interval(&diffs);
            ComparisonRow {
                policy: rep.policy.clone(),
                throughput_rate: rep.throughput_rate,
                ci_half_width: rep.ci_half_width,
                revenue_rate: rep.revenue_rate,
                diff_vs_first: rep.throughput_rate - reports[0].throughput_rate,
                diff_half_width: if i == 0 { 0.0 } else { diff_half_width },
                rank: rank[i],
            }
        })
        .collect();
    Ok(Comparison { rows, reports })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimScalingRow {
    pub c: f64,
    pub throughput: f64,
    pub ci_half_width: f64,
    pub upper_bound: f64,
    pub ratio: f64,
    pub ratio_half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScalingReport {
    pub rows: Vec<SimScalingRow>,
}

fn geometry_for(layout: &ServerLayout) -> GeometryMode {
    if layout.num_servers() <= MAX_EXACT_SERVERS {
        GeometryMode::Exact
    } else {
        GeometryMode::MonteCarlo {
            samples: DEFAULT_SAMPLES,
        }
    }
}

/// Simulates the layout with every rate multiplied by each `c`, comparing
/// against the empty-state throughput bound of the scaled layout.
///
/// A static policy is re-planned for each scaled layout. The warmup is kept
/// while the measured window shrinks to `1/c` of the base one, so each row
/// observes about the same number of requests.
pub fn scaling_experiment(base: &SimConfig, factors: &[f64]) -> Result<SimScalingReport> {
    base.validate()?;
    if let Some(c) = factors.iter().find(|c| !(**c >= 1.0) || !c.is_finite()) {
        return invalid(format!("scaling factors must be at least 1, got {c}"));
    }
    if matches!(base.policy, SimPolicy::Dynamic { .. }) {
        return invalid("a dynamic policy is tied to one state space and cannot be rescaled");
    }
    let base_window = base.horizon - base.effective_warmup();
    let rows = factors
        .par_iter()
        .map(|&c| {
            let layout = base.layout.scaled(c);
            let mode = geometry_for(&layout);
            let decomp = decompose(&layout, &CoverageState::empty(&layout), mode, base.seed)?;
            let (upper_bound, _) = solve_stage1(&decomp, &layout.service_rates)?;
            let policy = match &base.policy {
                SimPolicy::Static { .. } => {
                    let (_, assignment) = plan_layout(&layout, mode, 200_000, base.seed)?;
                    SimPolicy::Static { assignment }
                }
                other => other.clone(),
            };
            let warmup = base.warmup.unwrap_or_else(|| default_warmup(&layout));
            let config = SimConfig {
                layout,
                policy,
                horizon: warmup + base_window / c,
                warmup: Some(warmup),
                trace: false,
                ..base.clone()
            };
            let report = run(&config)?;
            Ok(SimScalingRow {
                c,
                throughput: report.throughput_rate,
                ci_half_width: report.ci_half_width,
                upper_bound,
                ratio: report.throughput_rate / upper_bound,
                ratio_half_width: report.ci_half_width / upper_bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimScalingReport { rows })
}
