mod common;

use approx::assert_relative_eq;
use cdnsla_core::coverage::{CoverageState, GeometryMode, Rect, SamplePoints, ServerLayout};
use cdnsla_core::dynamic_policy::{
    build_mdp, build_mdp_with, evaluate_policy, solve, FixedPreference, MdpOptions, MdpSolution,
    SolveOptions, StaticRule,
};
use cdnsla_core::queueing::{ArrivalModel, BirthDeathChain};
use cdnsla_core::static_policy;
use common::single_server;

fn chain_for(layout: &ServerLayout, i: usize) -> BirthDeathChain {
    BirthDeathChain::new(
        layout.service_rates[i],
        layout.psi,
        ArrivalModel::Areal {
            areal_rate: layout.areal_rate,
            speed: layout.speed_factor,
        },
    )
    .unwrap()
}

#[test]
fn single_server_reduces_to_chain() {
    for (lambda0, mu, psi) in [
        (0.8, 1.0, 150.0),
        (1.0, 1.0, 201.0),
        (1.05, 1.0, 120.0),
        (2.0, 3.0, 40.0),
    ] {
        let layout = single_server(lambda0, mu, psi);
        let mdp = build_mdp(&layout, GeometryMode::Exact, 0).unwrap();
        let sol = solve(&mdp, &SolveOptions::default()).unwrap();
        assert!(sol.converged);
        let chain = chain_for(&layout, 0);
        assert_relative_eq!(chain.empty_state_rate(), lambda0, max_relative = 1e-12);
        assert_relative_eq!(sol.gain, chain.throughput(), max_relative = 1e-6);
    }
}

#[test]
fn single_server_table_v_first_row() {
    let layout = single_server(0.8, 1.0, 1000.0);
    let mdp = build_mdp(&layout, GeometryMode::Exact, 0).unwrap();
    let sol = solve(&mdp, &SolveOptions::default()).unwrap();
    assert!((sol.gain - 0.794054).abs() < 1e-4, "{}", sol.gain);
}

fn pair(gap: f64, mu: [f64; 2]) -> ServerLayout {
    ServerLayout {
        positions: vec![[-gap / 2.0, 0.0], [gap / 2.0, 0.0]],
        service_rates: mu.to_vec(),
        psi: 8.0,
        region: Rect::centered(12.0),
        areal_rate: 0.04,
        speed_factor: 0.5,
    }
}

#[test]
fn disjoint_servers_add_up() {
    let layout = pair(12.0, [1.0, 1.5]);
    let mdp = build_mdp(&layout, GeometryMode::Exact, 0).unwrap();
    let sol = solve(&mdp, &SolveOptions::default()).unwrap();
    assert!(sol.policy.is_empty());
    let expected = chain_for(&layout, 0).throughput() + chain_for(&layout, 1).throughput();
    assert_relative_eq!(sol.gain, expected, max_relative = 1e-6);
}

fn symmetric() -> (
    ServerLayout,
    MdpSolution,
    cdnsla_core::dynamic_policy::UniformizedMdp,
) {
    let layout = pair(2.0, [1.0, 1.0]);
    let mdp = build_mdp(&layout, GeometryMode::Exact, 0).unwrap();
    let sol = solve(&mdp, &SolveOptions::default()).unwrap();
    (layout, sol, mdp)
}

#[test]
fn symmetric_overlap_values_and_policy_mirror() {
    let (_, sol, mdp) = symmetric();
    assert!(mdp.bellman_residual(&sol) <= 1e-9);
    let d = mdp.dims()[0];
    for a in 0..d {
        for b in 0..d {
            let ha = sol.values[mdp.index(&[a, b]).unwrap()];
            let hb = sol.values[mdp.index(&[b, a]).unwrap()];
            assert!((ha - hb).abs() < 1e-6, "h({a},{b})={ha} h({b},{a})={hb}");
            if a != b {
                let mirror = sol.choose(&[b, a], 0b11).map(|i| 1 - i);
                assert_eq!(sol.choose(&[a, b], 0b11), mirror);
            }
        }
    }
}

#[test]
fn moderate_overlap_routes_lens_to_shorter_queue() {
    let layout = pair(3.0, [1.0, 1.0]);
    let mdp = build_mdp(&layout, GeometryMode::Exact, 0).unwrap();
    let sol = solve(&mdp, &SolveOptions::default()).unwrap();
    let mut checked = 0;
    for entry in &sol.policy {
        let [a, b] = [entry.state[0], entry.state[1]];
        for &(mask, target) in &entry.assignments {
            if mask == 0b11 && a != b {
                checked += 1;
                assert_eq!(
                    target,
                    Some(if a < b { 0 } else { 1 }),
                    "state {:?}",
                    entry.state
                );
            }
        }
    }
    assert!(checked > 10);
}

#[test]
fn policy_evaluation_orders_rules() {
    let (layout, sol, mdp) = symmetric();
    let opts = SolveOptions::default();
    let again = evaluate_policy(&mdp, &sol, &opts).unwrap();
    assert_relative_eq!(again.gain, sol.gain, max_relative = 1e-8);

    let first = evaluate_policy(&mdp, &FixedPreference { order: vec![0, 1] }, &opts).unwrap();
    assert!(
        first.gain < sol.gain - 1e-6,
        "{} vs {}",
        first.gain,
        sol.gain
    );

    let decomp = cdnsla_core::coverage::decompose(
        &layout,
        &CoverageState::empty(&layout),
        GeometryMode::Exact,
        0,
    )
    .unwrap();
    let plan = static_policy::solve(&decomp, &layout.service_rates).unwrap();
    let points = SamplePoints::stratified(layout.region, 200_000, 5).unwrap();
    let assignment = static_policy::materialize(&plan, &layout, &points).unwrap();
    let chains = static_policy::server_chains(&layout, &assignment, &points).unwrap();
    let stat = evaluate_policy(&mdp, &StaticRule { chains }, &opts).unwrap();
    assert!(stat.gain <= sol.gain + 1e-9);
}

#[test]
fn origin_option_never_helps() {
    for layout in [
        pair(2.0, [1.0, 1.0]),
        pair(1.0, [0.7, 1.6]),
        pair(12.0, [1.0, 1.0]),
    ] {
        let base = build_mdp(&layout, GeometryMode::Exact, 0).unwrap();
        let with = build_mdp_with(
            &layout,
            &MdpOptions {
                allow_origin: true,
                ..MdpOptions::default()
            },
        )
        .unwrap();
        let opts = SolveOptions::default();
        let g0 = solve(&base, &opts).unwrap().gain;
        let g1 = solve(&with, &opts).unwrap().gain;
        assert!(g1 - g0 <= 1e-9, "{g1} > {g0}");
    }
}

#[test]
fn shifting_values_keeps_policy() {
    let (_, sol, mdp) = symmetric();
    let mut shifted = sol.clone();
    for v in &mut shifted.values {
        *v += 17.25;
    }
    for s in 0..mdp.num_states() {
        let state = mdp.state(s);
        for mask in [0b01, 0b10, 0b11] {
            assert_eq!(sol.choose(&state, mask), shifted.choose(&state, mask));
        }
    }
}

#[test]
fn solution_json_round_trip() {
    let (_, sol, _) = symmetric();
    let text = serde_json::to_string(&sol).unwrap();
    let back: MdpSolution = serde_json::from_str(&text).unwrap();
    assert_eq!(back, sol);
}

#[test]
fn monte_carlo_geometry_is_seeded() {
    let layout = pair(2.0, [1.0, 1.0]);
    let opts = MdpOptions {
        mode: GeometryMode::MonteCarlo { samples: 20_000 },
        seed: 9,
        ..MdpOptions::default()
    };
    let a = solve(
        &build_mdp_with(&layout, &opts).unwrap(),
        &SolveOptions::default(),
    )
    .unwrap();
    let b = solve(
        &build_mdp_with(&layout, &opts).unwrap(),
        &SolveOptions::default(),
    )
    .unwrap();
    assert_eq!(a.gain.to_bits(), b.gain.to_bits());
    let exact = symmetric().1.gain;
    assert_relative_eq!(a.gain, exact, max_relative = 2e-2);
}
