mod common;

use cdnsla_core::coverage::{GeometryMode, Rect, ServerLayout};
use cdnsla_core::dynamic_policy::{build_mdp, solve, SolveOptions};
use cdnsla_core::queueing::{ArrivalModel, BirthDeathChain};
use cdnsla_core::sim::{
    compare_policies, run, scaling_experiment, SimConfig, SimPolicy, TraceKind,
};
use cdnsla_core::static_policy::plan_layout;
use common::single_server;

fn pair(gap: f64, psi: f64, areal: f64) -> ServerLayout {
    ServerLayout {
        positions: vec![[-gap / 2.0, 0.0], [gap / 2.0, 0.0]],
        service_rates: vec![1.0, 1.0],
        psi,
        region: Rect::centered(3.0),
        areal_rate: areal,
        speed_factor: 0.1,
    }
}

fn static_policy(layout: &ServerLayout) -> SimPolicy {
    let (_, assignment) = plan_layout(layout, GeometryMode::Exact, 100_000, 1).unwrap();
    SimPolicy::Static { assignment }
}

#[test]
fn single_server_matches_chain() {
    let layout = single_server(0.8, 1.0, 1000.0);
    let chain = BirthDeathChain::with_lambda0(0.8, 1.0, 1000.0).unwrap();
    let report = run(&SimConfig::new(layout, SimPolicy::NearestFeasible, 2e5, 7)).unwrap();
    let err = (report.throughput_rate - chain.throughput()).abs();
    assert!(
        err <= 3.0 * report.std_error(),
        "{err} vs se {}",
        report.std_error()
    );
    assert!(err <= 0.02);
}

#[test]
fn no_traffic_no_revenue() {
    let mut layout = single_server(0.8, 1.0, 20.0);
    layout.areal_rate = 0.0;
    let report = run(&SimConfig::new(
        layout,
        SimPolicy::NearestFeasible,
        1000.0,
        1,
    ))
    .unwrap();
    assert_eq!(report.arrivals, 0);
    assert_eq!(report.revenue_rate, 0.0);
}

#[test]
fn accounting_identities() {
    let layout = pair(2.0, 20.0, 0.1);
    for (price, penalty) in [(1.0, 0.0), (2.5, 0.75)] {
        let mut config = SimConfig::new(layout.clone(), static_policy(&layout), 5000.0, 3);
        config.price = price;
        config.penalty = penalty;
        let r = run(&config).unwrap();
        assert_eq!(r.arrivals, r.served_within_psi + r.origin_served);
        assert!(r.strict_within_deadline <= r.served_within_psi);
        if penalty == 0.0 && price == 1.0 {
            assert_eq!(r.revenue_rate, r.throughput_rate);
        }
        let identity = (price + penalty) * r.throughput_rate - penalty * r.arrival_rate;
        assert!((r.revenue_rate - identity).abs() <= 1e-12 * identity.abs().max(1.0));
    }
}

#[test]
fn queues_respect_their_bound() {
    let layout = pair(1.0, 8.0, 0.4);
    let mdp = build_mdp(&layout, GeometryMode::Exact, 0).unwrap();
    let solution = solve(&mdp, &SolveOptions::default()).unwrap();
    for policy in [
        static_policy(&layout),
        SimPolicy::Dynamic { solution },
        SimPolicy::NearestFeasible,
        SimPolicy::RandomFeasible,
        SimPolicy::ExclusiveOnly,
    ] {
        let r = run(&SimConfig::new(layout.clone(), policy, 3000.0, 5)).unwrap();
        for i in 0..2 {
            assert!(r.max_queue_seen[i] <= layout.max_queue(i));
        }
        assert_eq!(r.arrivals, r.served_within_psi + r.origin_served);
    }
}

#[test]
fn seeded_runs_are_identical() {
    let layout = pair(2.0, 20.0, 0.1);
    let mut config = SimConfig::new(layout.clone(), SimPolicy::RandomFeasible, 2000.0, 42);
    config.trace = true;
    let a = serde_json::to_string(&run(&config).unwrap()).unwrap();
    let b = serde_json::to_string(&run(&config).unwrap()).unwrap();
    assert_eq!(a, b);
    config.seed = 43;
    let c = serde_json::to_string(&run(&config).unwrap()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn trace_records_every_request() {
    let layout = pair(2.0, 20.0, 0.1);
    let mut config = SimConfig::new(layout, SimPolicy::NearestFeasible, 200.0, 1);
    config.warmup = Some(0.0);
    config.trace = true;
    let r = run(&config).unwrap();
    let trace = r.trace.unwrap();
    let arrivals = trace
        .iter()
        .filter(|e| e.kind == TraceKind::Arrival)
        .count() as u64;
    let admits = trace.iter().filter(|e| e.kind == TraceKind::Admit).count() as u64;
    assert_eq!(arrivals, r.arrivals);
    assert_eq!(admits, r.served_within_psi);
    assert!(trace.windows(2).all(|w| w[0].time <= w[1].time));
}

#[test]
fn static_beats_denying_the_overlap() {
    let layout = pair(1.0, 20.0, 0.1);
    let configs = [static_policy(&layout), SimPolicy::ExclusiveOnly]
        .into_iter()
        .map(|p| SimConfig::new(layout.clone(), p, 5000.0, 11))
        .collect::<Vec<_>>();
    let cmp = compare_policies(&configs).unwrap();
    assert!(cmp.reports[0].served_within_psi > cmp.reports[1].served_within_psi);
    assert_eq!(cmp.rows[0].rank, 1);
    assert!(cmp.rows[1].diff_vs_first < 0.0);
}

#[test]
fn dynamic_not_worse_than_static() {
    let layout = pair(1.0, 6.0, 0.35);
    let mdp = build_mdp(&layout, GeometryMode::Exact, 0).unwrap();
    let solution = solve(&mdp, &SolveOptions::default()).unwrap();
    let configs = [SimPolicy::Dynamic { solution }, static_policy(&layout)]
        .into_iter()
        .map(|p| SimConfig::new(layout.clone(), p, 40_000.0, 2))
        .collect::<Vec<_>>();
    let cmp = compare_policies(&configs).unwrap();
    // Row 1 holds static minus dynamic.
    assert!(cmp.rows[1].diff_vs_first <= cmp.rows[1].diff_half_width);
}

#[test]
fn mismatched_comparisons_are_rejected() {
    let a = SimConfig::new(pair(1.0, 20.0, 0.1), SimPolicy::NearestFeasible, 1000.0, 1);
    let mut b = a.clone();
    b.seed = 2;
    assert!(compare_policies(&[a, b]).is_err());
}

#[test]
fn disjoint_servers_scale_like_independent_chains() {
    let layout = ServerLayout {
        positions: vec![[-2.0, 0.0], [2.0, 0.0]],
        service_rates: vec![1.0, 1.5],
        psi: 15.0,
        region: Rect::new(-3.5, -1.5, 3.5, 1.5).unwrap(),
        areal_rate: 0.3,
        speed_factor: 0.1,
    };
    let base = SimConfig::new(layout.clone(), SimPolicy::NearestFeasible, 30_000.0, 4);
    let report = scaling_experiment(&base, &[1.0, 4.0]).unwrap();
    for row in &report.rows {
        let scaled = layout.scaled(row.c);
        let analytic: f64 = (0..2)
            .map(|i| {
                BirthDeathChain::new(
                    scaled.service_rates[i],
                    scaled.psi,
                    ArrivalModel::Areal {
                        areal_rate: scaled.areal_rate,
                        speed: scaled.speed_factor,
                    },
                )
                .unwrap()
                .throughput()
            })
            .sum();
        let se = row.ci_half_width / 2.093;
        assert!(
            (row.throughput - analytic).abs() <= 3.0 * se,
            "c={} sim {} analytic {analytic} se {se}",
            row.c,
            row.throughput
        );
    }
}

#[test]
fn static_ratio_grows_with_scale() {
    let layout = pair(1.0, 20.0, 0.1);
    let base = SimConfig::new(layout.clone(), static_policy(&layout), 20_000.0, 8);
    let report = scaling_experiment(&base, &[1.0, 64.0]).unwrap();
    let (r1, r64) = (report.rows[0], report.rows[1]);
    assert!(r64.ratio > r1.ratio, "{r1:?} {r64:?}");
    assert!(r64.ratio <= 1.0 + 3.0 * r64.ratio_half_width);
}

#[test]
fn single_server_scaling_tracks_table_iii() {
    let table = [
        (1.0, 0.988756),
        (2.0, 0.995930),
        (4.0, 0.999156),
        (8.0, 0.999944),
        (16.0, 1.0),
    ];
    let layout = single_server(1.05, 1.0, 1000.0);
    let warmup = cdnsla_core::sim::default_warmup(&layout);
    let base = SimConfig::new(layout, SimPolicy::NearestFeasible, warmup + 1e5, 21);
    let factors: Vec<f64> = table.iter().map(|r| r.0).collect();
    let report = scaling_experiment(&base, &factors).unwrap();
    for (row, (c, expected)) in report.rows.iter().zip(table) {
        assert_eq!(row.c, c);
        let se = row.ratio_half_width / 2.093;
        assert!(
            (row.ratio - expected).abs() <= 3.0 * se,
            "c={c}: {} vs {expected} (se {se})",
            row.ratio
        );
    }
}
