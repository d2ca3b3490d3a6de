mod common;

use approx::assert_abs_diff_eq;
use cdnsla_core::coverage::{
    decompose, AreaDecomposition, CommonRegion, CoverageState, GeometryMode, Rect, SamplePoints,
    ServerLayout,
};
use cdnsla_core::static_policy::{materialize, solve, solve_stage1, solve_stage2};
use common::max_flow;
use proptest::prelude::*;

fn two_server(phi: [f64; 2], common: f64) -> AreaDecomposition {
    AreaDecomposition {
        exclusive_rates: phi.to_vec(),
        common_regions: vec![CommonRegion {
            servers: vec![0, 1],
            rate: common,
        }],
        total_covered_rate: phi[0] + phi[1] + common,
        std_error: 0.0,
    }
}

/// Grid over (P_1, P_2) with P_1 + P_2 <= 1 at step 1e-3; returns the best
/// served rate and, among plans within `tie` of it, the smallest variance.
fn grid_oracle(phi: [f64; 2], common: f64, mu: [f64; 2], tie: f64) -> (f64, f64) {
    let steps = 1000;
    let eval = |p1: f64, p2: f64| {
        let l = [phi[0] + p1 * common, phi[1] + p2 * common];
        let served = l[0].min(mu[0]) + l[1].min(mu[1]);
        let u = [l[0] / mu[0], l[1] / mu[1]];
        let var = ((u[0] - u[1]) / 2.0).powi(2);
        (served, var)
    };
    let mut best = f64::NEG_INFINITY;
    for a in 0..=steps {
        for b in 0..=steps - a {
            best = best.max(eval(a as f64 / 1e3, b as f64 / 1e3).0);
        }
    }
    let mut var = f64::INFINITY;
    for a in 0..=steps {
        for b in 0..=steps - a {
            let (s, v) = eval(a as f64 / 1e3, b as f64 / 1e3);
            if s >= best - tie {
                var = var.min(v);
            }
        }
    }
    (best, var)
}

#[test]
fn symmetric_pair_against_grid() {
    let plan = solve(&two_server([0.5, 0.5], 1.0), &[1.0, 1.0]).unwrap();
    let (best, var) = grid_oracle([0.5, 0.5], 1.0, [1.0, 1.0], 1e-9);
    assert_abs_diff_eq!(plan.gamma, best, epsilon = 1e-9);
    assert_abs_diff_eq!(plan.gamma, 2.0, epsilon = 1e-9);
    assert!(plan.variance <= var + 1e-9);
    assert_abs_diff_eq!(plan.splits[0].fractions[0], 0.5, epsilon = 1e-6);
    assert_abs_diff_eq!(plan.splits[0].fractions[1], 0.5, epsilon = 1e-6);
}

#[test]
fn equalizable_pair_balances_exactly() {
    let plan = solve(&two_server([0.6, 0.4], 0.4), &[1.0, 1.0]).unwrap();
    assert_abs_diff_eq!(plan.server_rates[0], 0.7, epsilon = 1e-7);
    assert_abs_diff_eq!(plan.server_rates[1], 0.7, epsilon = 1e-7);
    assert_abs_diff_eq!(plan.splits[0].fractions[0], 0.25, epsilon = 1e-6);
    assert_abs_diff_eq!(plan.splits[0].fractions[1], 0.75, epsilon = 1e-6);
    assert!(plan.variance < 1e-12);
}

#[test]
fn unequalizable_pair_sends_common_area_to_lighter_server() {
    let plan = solve(&two_server([0.9, 0.1], 0.4), &[1.0, 1.0]).unwrap();
    let (best, var) = grid_oracle([0.9, 0.1], 0.4, [1.0, 1.0], 1e-9);
    assert_abs_diff_eq!(plan.gamma, best, epsilon = 1e-9);
    assert_abs_diff_eq!(plan.variance, var, epsilon = 1e-7);
    assert_abs_diff_eq!(plan.server_rates[1], 0.5, epsilon = 1e-6);
    assert!(plan.admit_fractions.iter().all(|&i| i == 1.0));
}

#[test]
fn saturated_leader_against_vertex_enumeration() {
    let d = two_server([2.0, 0.0], 0.5);
    let (gamma, plan) = solve_stage1(&d, &[1.0, 1.0]).unwrap();
    // Vertices of {P1 + P2 <= 1, P >= 0}.
    let vertices = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
    let best = vertices
        .iter()
        .map(|(a, b)| (2.0_f64 + a * 0.5).min(1.0) + (b * 0.5_f64).min(1.0))
        .fold(f64::NEG_INFINITY, f64::max);
    assert_abs_diff_eq!(gamma, best, epsilon = 1e-9);
    assert_abs_diff_eq!(gamma, 1.5, epsilon = 1e-9);
    assert_abs_diff_eq!(
        plan.admit_fractions[0] * plan.server_rates[0],
        1.0,
        epsilon = 1e-9
    );
}

fn triangle() -> ServerLayout {
    ServerLayout {
        positions: vec![[0.0, 0.0], [1.3, 0.0], [0.5, 1.1]],
        service_rates: vec![1.2, 2.0, 3.5],
        psi: 2.0,
        region: Rect::centered(4.0),
        areal_rate: 0.8,
        speed_factor: 1.0,
    }
}

#[test]
fn stage2_improves_on_stage1_vertex() {
    let layout = triangle();
    let d = decompose(
        &layout,
        &CoverageState::empty(&layout),
        GeometryMode::Exact,
        0,
    )
    .unwrap();
    let (gamma, vertex) = solve_stage1(&d, &layout.service_rates).unwrap();
    let plan = solve_stage2(&d, &layout.service_rates, gamma).unwrap();
    assert!(plan.certified);
    assert!((plan.achieved_gamma() - gamma).abs() <= 1e-8);
    assert!(
        plan.variance < vertex.variance,
        "{} !< {}",
        plan.variance,
        vertex.variance
    );
    assert_abs_diff_eq!(gamma, max_flow(&d, &layout.service_rates), epsilon = 1e-9);
}

/// Unit disks one apart, light enough that neither server saturates.
fn lens_layout() -> ServerLayout {
    ServerLayout {
        positions: vec![[-0.5, 0.0], [0.5, 0.0]],
        service_rates: vec![1.0, 1.0],
        psi: 2.0,
        region: Rect::centered(2.0),
        areal_rate: 0.2,
        speed_factor: 1.0,
    }
}

#[test]
fn materialized_lens_split_matches_plan() {
    let layout = lens_layout();
    let d = decompose(
        &layout,
        &CoverageState::empty(&layout),
        GeometryMode::Exact,
        0,
    )
    .unwrap();
    let plan = solve(&d, &layout.service_rates).unwrap();
    let cut_points = SamplePoints::stratified(layout.region, 200_000, 11).unwrap();
    let assignment = materialize(&plan, &layout, &cut_points).unwrap();

    // The symmetric cut is the perpendicular bisector.
    let bound = assignment.cuts[0].bounds[0];
    assert_abs_diff_eq!(bound, 0.5, epsilon = 5e-3);

    let probe = SamplePoints::stratified(layout.region, 400_000, 99).unwrap();
    let w = probe.weight() * layout.areal_rate;
    let lens = d.common_regions[0].rate;
    let mut got = [0.0; 2];
    let mut inside = 0usize;
    for &p in probe.points() {
        let d0 = (p[0] + 0.5).hypot(p[1]);
        let d1 = (p[0] - 0.5).hypot(p[1]);
        if d0 <= 1.0 && d1 <= 1.0 {
            inside += 1;
            got[assignment.server_for(p).unwrap()] += w;
        }
    }
    let frac = lens / layout.areal_rate / layout.region.area();
    let se = layout.areal_rate
        * layout.region.area()
        * (frac * (1.0 - frac) / probe.points().len() as f64).sqrt();
    for (i, g) in got.iter().enumerate() {
        let want = plan.splits[0].fractions[i] * lens;
        assert!(
            (g - want).abs() < 3.0 * se,
            "server {i}: {g} vs {want} (se {se})"
        );
    }
    assert!(inside > 0);
}

#[test]
fn whole_region_to_single_participant() {
    let layout = lens_layout();
    let d = decompose(
        &layout,
        &CoverageState::empty(&layout),
        GeometryMode::Exact,
        0,
    )
    .unwrap();
    let mut plan = solve(&d, &layout.service_rates).unwrap();
    plan.splits[0].fractions = vec![0.0, 1.0];
    let points = SamplePoints::stratified(layout.region, 50_000, 3).unwrap();
    let assignment = materialize(&plan, &layout, &points).unwrap();
    for p in [[0.0, 0.0], [-0.45, 0.2], [0.4, -0.5]] {
        assert_eq!(assignment.server_for(p), Some(1));
    }
    assert_eq!(assignment.server_for([-1.2, 0.0]), Some(0));
    assert_eq!(assignment.server_for([1.9, 1.9]), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stage1_equals_max_flow(
        phi in proptest::collection::vec(0.0f64..3.0, 3),
        common in proptest::collection::vec(0.0f64..2.0, 4),
        mu in proptest::collection::vec(0.1f64..3.0, 3),
    ) {
        let groups = [vec![0, 1], vec![0, 2], vec![1, 2], vec![0, 1, 2]];
        let d = AreaDecomposition {
            exclusive_rates: phi.clone(),
            common_regions: groups
                .iter()
                .zip(&common)
                .map(|(s, &rate)| CommonRegion { servers: s.clone(), rate })
                .collect(),
            total_covered_rate: phi.iter().sum::<f64>() + common.iter().sum::<f64>(),
            std_error: 0.0,
        };
        let plan = solve(&d, &mu).unwrap();
        let oracle = max_flow(&d, &mu);
        prop_assert!((plan.gamma - oracle).abs() <= 1e-8 * oracle.max(1.0));
        prop_assert!(plan.certified);
        for (i, (&f, &l)) in plan.admit_fractions.iter().zip(&plan.server_rates).enumerate() {
            prop_assert!(f * l <= mu[i] * (1.0 + 1e-9));
            if l <= mu[i] {
                prop_assert_eq!(f, 1.0);
            }
        }
    }
}
