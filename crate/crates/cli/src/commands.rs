use std::path::Path;

use cdnsla_core::competition::{
    best_response_iteration, equilibrium_duopoly, equilibrium_triopoly, ratio_sweep,
    EquilibriumResult, MarketInstance,
};
use cdnsla_core::coverage::{
    GeometryMode, SamplePoints, ServerLayout, DEFAULT_SAMPLES, MAX_EXACT_SERVERS,
};
use cdnsla_core::dynamic_policy::{build_mdp_with, solve, MdpOptions, MdpSolution, SolveOptions};
use cdnsla_core::queueing::{
    scaling_sweep, stationary_distribution, ArrivalModel, BirthDeathChain,
};
use cdnsla_core::sim::{compare_policies, run, scaling_experiment, SimConfig, SimPolicy};
use cdnsla_core::static_policy::{
    plan_layout, static_throughput, AssignmentPlan, RegionAssignment,
};
use serde::{Deserialize, Serialize};

use crate::config::{
    read_json, relative_to, ChainSpec, CompareConfig, DpConfig, EquilibriumConfig, MdpSpec, Method,
    PolicySpec, RatioSweepConfig, RowLayout, ScalingConfig, SimSpec, StaticConfig,
};
use crate::error::CliError;
use crate::output::{Artifact, Cell, Table};

type Outcome = Result<Artifact, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketEquilibrium {
    pub betas: Vec<f64>,
    pub population: f64,
    pub equilibrium: EquilibriumResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumArtifact {
    pub markets: Vec<MarketEquilibrium>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainArtifact {
    pub mu: f64,
    pub psi: f64,
    pub arrivals: ArrivalModel,
    pub n_max: usize,
    pub throughput: f64,
    pub upper_bound: f64,
    pub empty_probability: f64,
    /// Stationary probabilities from `n = 0`; negligible tail states are
    /// dropped.
    pub distribution: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticArtifact {
    pub plan: AssignmentPlan,
    pub assignment: RegionAssignment,
    /// Sum of per-server chain throughputs under the materialized regions.
    pub estimated_throughput: f64,
}

fn default_geometry(layout: &ServerLayout) -> GeometryMode {
    if layout.num_servers() <= MAX_EXACT_SERVERS {
        GeometryMode::Exact
    } else {
        GeometryMode::MonteCarlo {
            samples: DEFAULT_SAMPLES,
        }
    }
}

fn ratio_columns(k: usize) -> Vec<(usize, usize)> {
    let mut cols: Vec<(usize, usize)> = (0..k.saturating_sub(1)).map(|i| (i, i + 1)).collect();
    if k >= 3 {
        cols.push((0, k - 1));
    }
    cols
}

pub fn equilibrium(cfg: &EquilibriumConfig, path: &Path) -> Outcome {
    let mut markets = Vec::with_capacity(cfg.markets.len());
    for (i, spec) in cfg.markets.iter().enumerate() {
        let market = MarketInstance::from_betas(&spec.betas, spec.population)?;
        let eq = match (cfg.method, market.len()) {
            (Method::ClosedForm, 2) => equilibrium_duopoly(&market)?,
            (Method::ClosedForm, 3) => equilibrium_triopoly(&market)?,
            (Method::ClosedForm, n) => {
                return Err(CliError::config(
                    path,
                    Some(format!("markets[{i}].betas")),
                    format!("closed forms cover 2 or 3 CDNs, got {n}; use method \"iteration\""),
                ))
            }
            (Method::Iteration, _) => {
                let o = cfg.iteration;
                best_response_iteration(&market, o.tol, o.max_iter, o.damping)?
            }
        };
        markets.push(MarketEquilibrium {
            betas: market.betas(),
            population: market.population(),
            equilibrium: eq,
        });
    }

    let table = match cfg.rows {
        RowLayout::Ratios => {
            let k = markets.first().map_or(0, |m| m.betas.len());
            if let Some(i) = markets.iter().position(|m| m.betas.len() != k) {
                return Err(CliError::config(
                    path,
                    Some(format!("markets[{i}].betas")),
                    "ratio rows need every market to have the same number of CDNs".into(),
                ));
            }
            let cols = ratio_columns(k);
            let mut table = Table::new(
                (1..=k)
                    .map(|j| format!("beta_{j}"))
                    .chain(cols.iter().map(|(a, b)| format!("J{}/J{}", a + 1, b + 1))),
            );
            for m in &markets {
                table.push(
                    m.betas
                        .iter()
                        .map(|&b| Cell::from(b))
                        .chain(
                            cols.iter()
                                .map(|&(a, b)| m.equilibrium.revenue_ratio(a, b).into()),
                        )
                        .collect(),
                );
            }
            table
        }
        RowLayout::PerCdn => {
            let mut table = Table::new(["market", "k", "beta", "price", "share", "revenue"]);
            for (i, m) in markets.iter().enumerate() {
                let e = &m.equilibrium;
                for k in 0..m.betas.len() {
                    table.push(vec![
                        i.into(),
                        (k + 1).into(),
                        m.betas[k].into(),
                        e.prices[k].into(),
                        e.shares[k].into(),
                        e.revenues[k].into(),
                    ]);
                }
            }
            table
        }
    };
    Ok(Artifact::new(&EquilibriumArtifact { markets }, table))
}

pub fn ratio_sweep_cmd(cfg: &RatioSweepConfig) -> Outcome {
    let sweep = ratio_sweep(cfg.beta_fixed, &cfg.beta_varying.values(), cfg.side)?;
    let mut table = Table::new(["beta_1", "beta_2", "J1/J2"]);
    for r in &sweep.rows {
        table.push(vec![r.beta_1.into(), r.beta_2.into(), r.ratio.into()]);
    }
    Ok(Artifact::new(&sweep, table))
}

fn build_chain(spec: &ChainSpec) -> Result<BirthDeathChain, CliError> {
    Ok(BirthDeathChain::new(
        spec.mu,
        spec.psi,
        spec.arrivals.clone(),
    )?)
}

pub fn chain(spec: &ChainSpec) -> Outcome {
    let chain = build_chain(spec)?;
    let distribution = stationary_distribution(&chain);
    let mut table = Table::new(["n", "arrival_rate", "probability"]);
    for (n, p) in distribution.iter().enumerate() {
        table.push(vec![n.into(), chain.arrival_rate(n).into(), (*p).into()]);
    }
    let artifact = ChainArtifact {
        mu: spec.mu,
        psi: spec.psi,
        arrivals: spec.arrivals.clone(),
        n_max: chain.n_max(),
        throughput: chain.throughput(),
        upper_bound: chain.upper_bound(),
        empty_probability: chain.empty_probability(),
        distribution,
    };
    Ok(Artifact::new(&artifact, table))
}

pub fn scaling(cfg: &ScalingConfig, path: &Path, seed: Option<u64>) -> Outcome {
    match (&cfg.chain, &cfg.simulation) {
        (Some(spec), None) => {
            let report = scaling_sweep(&build_chain(spec)?, &cfg.factors)?;
            let mut table = Table::new(["c", "throughput", "upper_bound", "ratio"]);
            for r in &report.rows {
                table.push(vec![
                    r.c.into(),
                    r.throughput.into(),
                    r.upper_bound.into(),
                    r.ratio.into(),
                ]);
            }
            Ok(Artifact::new(&report, table))
        }
        (None, Some(sim)) => {
            let config = sim_config(sim, path, seed, "simulation")?;
            let report = scaling_experiment(&config, &cfg.factors)?;
            let mut table = Table::new([
                "c",
                "throughput",
                "ci_half_width",
                "upper_bound",
                "ratio",
                "ratio_half_width",
            ]);
            for r in &report.rows {
                table.push(vec![
                    r.c.into(),
                    r.throughput.into(),
                    r.ci_half_width.into(),
                    r.upper_bound.into(),
                    r.ratio.into(),
                    r.ratio_half_width.into(),
                ]);
            }
            Ok(Artifact::new(&report, table))
        }
        _ => Err(CliError::config(
            path,
            None,
            "give exactly one of `chain` or `simulation`".into(),
        )),
    }
}

fn effective_seed(flag: Option<u64>, config: Option<u64>) -> u64 {
    flag.or(config).unwrap_or(0)
}

pub fn static_solve(cfg: &StaticConfig, path: &Path, seed: Option<u64>) -> Outcome {
    let layout = cfg.layout.resolve(path, "layout")?;
    let seed = effective_seed(seed, cfg.seed);
    let mode = cfg.geometry.unwrap_or_else(|| default_geometry(&layout));
    let (plan, assignment) = plan_layout(&layout, mode, cfg.samples, seed)?;
    let points = SamplePoints::stratified(layout.region, cfg.samples, seed)?;
    let estimated_throughput = static_throughput(&layout, &assignment, &points)?;

    let mut table = Table::new([
        "server",
        "service_rate",
        "exclusive_rate",
        "assigned_rate",
        "admit_fraction",
    ]);
    for i in 0..layout.num_servers() {
        table.push(vec![
            i.into(),
            plan.service_rates[i].into(),
            plan.exclusive_rates[i].into(),
            plan.server_rates[i].into(),
            plan.admit_fractions[i].into(),
        ]);
    }
    let artifact = StaticArtifact {
        plan,
        assignment,
        estimated_throughput,
    };
    Ok(Artifact::new(&artifact, table))
}

fn solve_mdp(layout: &ServerLayout, spec: &MdpSpec, seed: u64) -> Result<MdpSolution, CliError> {
    let defaults = MdpOptions::default();
    let opts = MdpOptions {
        mode: spec.geometry.unwrap_or_else(|| default_geometry(layout)),
        seed,
        state_cap: spec.state_cap.unwrap_or(defaults.state_cap),
        allow_origin: spec.allow_origin,
    };
    let mdp = build_mdp_with(layout, &opts)?;
    let defaults = SolveOptions::default();
    let solve_opts = SolveOptions {
        tol: spec.tol.unwrap_or(defaults.tol),
        max_iter: spec.max_iter.unwrap_or(defaults.max_iter),
    };
    Ok(solve(&mdp, &solve_opts)?)
}

fn join(items: impl IntoIterator<Item = usize>) -> String {
    items
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

pub fn dp_solve(cfg: &DpConfig, path: &Path, seed: Option<u64>) -> Outcome {
    let layout = cfg.layout.resolve(path, "layout")?;
    let spec = MdpSpec {
        geometry: cfg.geometry,
        state_cap: cfg.state_cap,
        allow_origin: cfg.allow_origin,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
    };
    let solution = solve_mdp(&layout, &spec, effective_seed(seed, cfg.seed))?;
    let mut table = Table::new(["state", "region", "server"]);
    for entry in &solution.policy {
        for &(mask, dest) in &entry.assignments {
            let region = join((0..layout.num_servers()).filter(|i| mask >> i & 1 == 1));
            let server = dest.map_or(Cell::from("origin"), Cell::from);
            table.push(vec![
                join(entry.state.iter().copied()).into(),
                region.into(),
                server,
            ]);
        }
    }
    Ok(Artifact::new(&solution, table))
}

fn policy_from_spec(
    spec: &PolicySpec,
    layout: &ServerLayout,
    path: &Path,
    seed: u64,
    field: &str,
) -> Result<SimPolicy, CliError> {
    let mismatch = |what: &str, n: usize| {
        CliError::config(
            path,
            Some(field.to_string()),
            format!(
                "{what} covers {n} servers, layout has {}",
                layout.num_servers()
            ),
        )
    };
    Ok(match spec {
        PolicySpec::Static {
            plan: Some(file), ..
        } => {
            let artifact: StaticArtifact = read_json(&relative_to(path, file))?;
            let n = artifact.assignment.positions.len();
            if n != layout.num_servers() {
                return Err(mismatch("static plan", n));
            }
            SimPolicy::Static {
                assignment: artifact.assignment,
            }
        }
        PolicySpec::Static {
            plan: None,
            geometry,
            samples,
        } => {
            let mode = geometry.unwrap_or_else(|| default_geometry(layout));
            let (_, assignment) = plan_layout(layout, mode, *samples, seed)?;
            SimPolicy::Static { assignment }
        }
        PolicySpec::Dynamic {
            solution: Some(file),
            ..
        } => {
            let solution: MdpSolution = read_json(&relative_to(path, file))?;
            let n = solution.dims.len();
            if n != layout.num_servers() {
                return Err(mismatch("dynamic solution", n));
            }
            SimPolicy::Dynamic { solution }
        }
        PolicySpec::Dynamic {
            solution: None,
            geometry,
            state_cap,
            tol,
            max_iter,
        } => {
            let spec = MdpSpec {
                geometry: *geometry,
                state_cap: *state_cap,
                allow_origin: false,
                tol: *tol,
                max_iter: *max_iter,
            };
            SimPolicy::Dynamic {
                solution: solve_mdp(layout, &spec, seed)?,
            }
        }
        PolicySpec::NearestFeasible => SimPolicy::NearestFeasible,
        PolicySpec::RandomFeasible => SimPolicy::RandomFeasible,
        PolicySpec::ExclusiveOnly => SimPolicy::ExclusiveOnly,
    })
}

fn sim_config(
    spec: &SimSpec,
    path: &Path,
    seed: Option<u64>,
    prefix: &str,
) -> Result<SimConfig, CliError> {
    let at = |f: &str| {
        if prefix.is_empty() {
            f.to_string()
        } else {
            format!("{prefix}.{f}")
        }
    };
    let layout = spec.layout.resolve(path, &at("layout"))?;
    let seed = effective_seed(seed, spec.seed);
    let policy = policy_from_spec(&spec.policy, &layout, path, seed, &at("policy"))?;
    Ok(SimConfig {
        warmup: spec.warmup,
        price: spec.price,
        penalty: spec.penalty,
        trace: spec.trace,
        ..SimConfig::new(layout, policy, spec.horizon, seed)
    })
}

pub fn simulate(cfg: &SimSpec, path: &Path, seed: Option<u64>) -> Outcome {
    let config = sim_config(cfg, path, seed, "")?;
    let report = run(&config)?;
    let mut table = Table::new([
        "policy",
        "observed_time",
        "arrivals",
        "served_within_psi",
        "origin_served",
        "throughput_rate",
        "ci_half_width",
        "revenue_rate",
    ]);
    table.push(vec![
        report.policy.clone().into(),
        report.observed_time.into(),
        Cell::Int(report.arrivals as i64),
        Cell::Int(report.served_within_psi as i64),
        Cell::Int(report.origin_served as i64),
        report.throughput_rate.into(),
        report.ci_half_width.into(),
        report.revenue_rate.into(),
    ]);
    Ok(Artifact::new(&report, table))
}

pub fn compare(cfg: &CompareConfig, path: &Path, seed: Option<u64>) -> Outcome {
    let layout = cfg.layout.resolve(path, "layout")?;
    let seed = effective_seed(seed, cfg.seed);
    let configs = cfg
        .policies
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let policy = policy_from_spec(spec, &layout, path, seed, &format!("policies[{i}]"))?;
            Ok(SimConfig {
                warmup: cfg.warmup,
                price: cfg.price,
                penalty: cfg.penalty,
                ..SimConfig::new(layout.clone(), policy, cfg.horizon, seed)
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let comparison = compare_policies(&configs)?;
    let mut table = Table::new([
        "policy",
        "throughput_rate",
        "ci_half_width",
        "revenue_rate",
        "diff_vs_first",
        "diff_half_width",
        "rank",
    ]);
    for r in &comparison.rows {
        table.push(vec![
            r.policy.clone().into(),
            r.throughput_rate.into(),
            r.ci_half_width.into(),
            r.revenue_rate.into(),
            r.diff_vs_first.into(),
            r.diff_half_width.into(),
            r.rank.into(),
        ]);
    }
    Ok(Artifact::new(&comparison, table))
}
