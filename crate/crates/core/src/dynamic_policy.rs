//! Optimal state-dependent routing for a few servers.
//!
//! The continuous-time routing problem is uniformized with
//! `nu = lambda_total + sum_i mu_i` and solved by relative value iteration.
//! The reward of a step is the expected number of departures, so the gain
//! times `nu` is the long-run served rate.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::{
    decompose, decompose_with_points, CoverageState, GeometryMode, SamplePoints, ServerLayout,
    ServerMask,
};
use crate::error::{invalid, Error, Result};
use crate::queueing::BirthDeathChain;

pub const DEFAULT_STATE_CAP: usize = 200_000;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdpOptions {
    pub mode: GeometryMode,
    pub seed: u64,
    pub state_cap: usize,
    /// Adds "send to origin" to every arrival's action set.
    pub allow_origin: bool,
}

impl Default for MdpOptions {
    fn default() -> Self {
        Self {
            mode: GeometryMode::Exact,
            seed: 0,
            state_cap: DEFAULT_STATE_CAP,
            allow_origin: false,
        }
    }
}

/// Arrival rates seen in one state: exclusive per server, then each common
/// region by mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGeometry {
    pub exclusive: Vec<f64>,
    pub common: Vec<(ServerMask, f64)>,
}

#[derive(Debug, Clone)]
pub struct UniformizedMdp {
    dims: Vec<usize>,
    strides: Vec<usize>,
    mu: Vec<f64>,
    nu: f64,
    allow_origin: bool,
    geometry: Vec<StateGeometry>,
    /// Index into `geometry` for each state.
    geometry_of: Vec<usize>,
}

/// Builds the MDP with default options apart from geometry.
pub fn build_mdp(layout: &ServerLayout, mode: GeometryMode, seed: u64) -> Result<UniformizedMdp> {
    build_mdp_with(
        layout,
        &MdpOptions {
            mode,
            seed,
            ..MdpOptions::default()
        },
    )
}

pub fn build_mdp_with(layout: &ServerLayout, options: &MdpOptions) -> Result<UniformizedMdp> {
    layout.validate()?;
    let m = layout.num_servers();
    let dims: Vec<usize> = (0..m).map(|i| layout.max_queue(i) + 1).collect();
    let size = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .unwrap_or(usize::MAX);
    if size > options.state_cap {
        return Err(Error::StateSpaceTooLarge {
            size,
            cap: options.state_cap,
        });
    }
    let mut strides = vec![1; m];
    for i in 1..m {
        strides[i] = strides[i - 1] * dims[i - 1];
    }

    let points = match options.mode {
        GeometryMode::MonteCarlo { samples } => Some(SamplePoints::stratified(
            layout.region,
            samples,
            options.seed,
        )?),
        GeometryMode::Exact => None,
    };

    // States that share a radius vector share geometry.
    let mut keys: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut representatives: Vec<Vec<usize>> = Vec::new();
    let mut geometry_of = Vec::with_capacity(size);
    for s in 0..size {
        let state = unrank(s, &dims);
        let key = (0..m)
            .map(|i| layout.radius(i, state[i]).to_bits())
            .collect::<Vec<_>>();
        let next = representatives.len();
        let idx = *keys.entry(key).or_insert_with(|| {
            representatives.push(state.clone());
            next
        });
        geometry_of.push(idx);
    }

    let geometry = representatives
        .par_iter()
        .map(|state| {
            let cs = CoverageState::new(layout, state.clone())?;
            let d = match &points {
                Some(p) => decompose_with_points(layout, &cs, p),
                None => decompose(layout, &cs, options.mode, options.seed)?,
            };
            Ok(StateGeometry {
                exclusive: d.exclusive_rates,
                common: d
                    .common_regions
                    .iter()
                    .filter(|z| z.rate > 0.0)
                    .map(|z| (z.mask(), z.rate))
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let nu = layout.total_arrival_rate() + layout.service_rates.iter().sum::<f64>();
    Ok(UniformizedMdp {
        dims,
        strides,
        mu: layout.service_rates.clone(),
        nu,
        allow_origin: options.allow_origin,
        geometry,
        geometry_of,
    })
}

fn unrank(mut s: usize, dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .map(|&d| {
            let n = s % d;
            s /= d;
            n
        })
        .collect()
}

impl UniformizedMdp {
    pub fn num_states(&self) -> usize {
        self.geometry_of.len()
    }

    pub fn num_servers(&self) -> usize {
        self.dims.len()
    }

    /// `n_max + 1` per server.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn allow_origin(&self) -> bool {
        self.allow_origin
    }

    pub fn state(&self, index: usize) -> Vec<usize> {
        unrank(index, &self.dims)
    }

    pub fn index(&self, state: &[usize]) -> Result<usize> {
        if state.len() != self.dims.len() || state.iter().zip(&self.dims).any(|(n, d)| n >= d) {
            return invalid(format!("state {state:?} is outside the state space"));
        }
        Ok(state.iter().zip(&self.strides).map(|(n, s)| n * s).sum())
    }

    pub fn geometry(&self, index: usize) -> &StateGeometry {
        &self.geometry[self.geometry_of[index]]
    }

    fn queue(&self, s: usize, i: usize) -> usize {
        (s / self.strides[i]) % self.dims[i]
    }

    fn up(&self, s: usize, i: usize) -> Option<usize> {
        (self.queue(s, i) + 1 < self.dims[i]).then(|| s + self.strides[i])
    }

    /// Expected departures per uniformized step.
    fn reward(&self, s: usize) -> f64 {
        (0..self.dims.len())
            .filter(|&i| self.queue(s, i) > 0)
            .map(|i| self.mu[i])
            .sum::<f64>()
            / self.nu
    }

    /// Departure part of the backup plus the idle self-loop mass it leaves.
    fn departures(&self, s: usize, h: &[f64]) -> (f64, f64) {
        let mut value = 0.0;
        let mut used = 0.0;
        for i in 0..self.dims.len() {
            if self.queue(s, i) > 0 {
                let p = self.mu[i] / self.nu;
                value += p * h[s - self.strides[i]];
                used += p;
            }
        }
        (value, used)
    }

    /// Best destination for an arrival covered by `mask` in state `s`, with
    /// the lowest index winning ties. `None` means the origin.
    fn best_target(&self, s: usize, mask: ServerMask, h: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.dims.len() {
            if mask & (1 << i) == 0 {
                continue;
            }
            if let Some(t) = self.up(s, i) {
                if best.is_none_or(|(_, v)| h[t] > v) {
                    best = Some((i, h[t]));
                }
            }
        }
        match best {
            Some((_, v)) if self.allow_origin && h[s] > v => None,
            Some((i, _)) => Some(i),
            None => None,
        }
    }

    fn greedy_backup(&self, s: usize, h: &[f64]) -> f64 {
        let g = self.geometry(s);
        let (mut value, mut used) = self.departures(s, h);
        let mut route = |mask: ServerMask, rate: f64| {
            let p = rate / self.nu;
            if let Some(i) = self.best_target(s, mask, h) {
                value += p * h[s + self.strides[i]];
                used += p;
            }
        };
        for (i, &rate) in g.exclusive.iter().enumerate() {
            if rate > 0.0 {
                route(1 << i, rate);
            }
        }
        for &(mask, rate) in &g.common {
            route(mask, rate);
        }
        self.reward(s) + value + (1.0 - used) * h[s]
    }

    fn rule_backup(&self, s: usize, h: &[f64], rates: &[f64]) -> f64 {
        let (mut value, mut used) = self.departures(s, h);
        for (i, &rate) in rates.iter().enumerate() {
            if rate > 0.0 {
                let p = rate / self.nu;
                value += p * h[s + self.strides[i]];
                used += p;
            }
        }
        self.reward(s) + value + (1.0 - used) * h[s]
    }

    /// Largest violation of the average-reward optimality equation.
    pub fn bellman_residual(&self, solution: &MdpSolution) -> f64 {
        let g = solution.gain_per_step;
        let h = &solution.values;
        (0..self.num_states())
            .into_par_iter()
            .map(|s| (self.greedy_backup(s, h) - g - h[s]).abs())
            .reduce(|| 0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub state: Vec<usize>,
    /// Destination per common region; `None` is the origin.
    pub assignments: Vec<(ServerMask, Option<usize>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSolution {
    /// Served requests per unit time.
    pub gain: f64,
    pub gain_per_step: f64,
    pub nu: f64,
    pub dims: Vec<usize>,
    pub allow_origin: bool,
    /// Relative values with `values[0] == 0`.
    pub values: Vec<f64>,
    /// Choices in states with at least one common region.
    pub policy: Vec<PolicyEntry>,
    /// Span of the last value update.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl MdpSolution {
    /// Destination of an arrival covered by `mask` in `state`.
    pub fn choose(&self, state: &[usize], mask: ServerMask) -> Option<usize> {
        let mut strides = vec![1; self.dims.len()];
        for i in 1..self.dims.len() {
            strides[i] = strides[i - 1] * self.dims[i - 1];
        }
        let s: usize = state.iter().zip(&strides).map(|(n, st)| n * st).sum();
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.dims.len() {
            if mask & (1 << i) == 0 || state[i] + 1 >= self.dims[i] {
                continue;
            }
            let v = self.values[s + strides[i]];
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        match best {
            Some((_, v)) if self.allow_origin && self.values[s] > v => None,
            other => other.map(|(i, _)| i),
        }
    }
}

/// Relative value iteration from `h = 0` until the span of the update falls
/// below `tol`.
pub fn solve(mdp: &UniformizedMdp, options: &SolveOptions) -> Result<MdpSolution> {
    let (h, g, residual, iterations, converged) =
        iterate(mdp, options, |s, h| mdp.greedy_backup(s, h))?;
    let policy = (0..mdp.num_states())
        .filter(|&s| !mdp.geometry(s).common.is_empty())
        .map(|s| PolicyEntry {
            state: mdp.state(s),
            assignments: mdp
                .geometry(s)
                .common
                .iter()
                .map(|&(mask, _)| (mask, mdp.best_target(s, mask, &h)))
                .collect(),
        })
        .collect();
    Ok(MdpSolution {
        gain: g * mdp.nu,
        gain_per_step: g,
        nu: mdp.nu,
        dims: mdp.dims.clone(),
        allow_origin: mdp.allow_origin,
        values: h,
        policy,
        residual,
        iterations,
        converged,
    })
}

type IterationResult = (Vec<f64>, f64, f64, usize, bool);

fn iterate<F>(mdp: &UniformizedMdp, options: &SolveOptions, backup: F) -> Result<IterationResult>
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    if !(options.tol > 0.0) {
        return invalid(format!("tolerance must be positive, got {}", options.tol));
    }
    let n = mdp.num_states();
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut span = f64::INFINITY;
    let mut gain = 0.0;
    for it in 1..=options.max_iter {
        next.par_iter_mut()
            .enumerate()
            .for_each(|(s, out)| *out = backup(s, &h));
        let (lo, hi) = next
            .par_iter()
            .zip(h.par_iter())
            .map(|(a, b)| (a - b, a - b))
            .reduce(
                || (f64::INFINITY, f64::NEG_INFINITY),
                |a, b| (a.0.min(b.0), a.1.max(b.1)),
            );
        span = hi - lo;
        gain = 0.5 * (hi + lo);
        let anchor = next[0];
        next.par_iter_mut().for_each(|v| *v -= anchor);
        std::mem::swap(&mut h, &mut next);
        if span < options.tol {
            return Ok((h, gain, span, it, true));
        }
    }
    Ok((h, gain, span, options.max_iter, false))
}

/// Rates at which a routing rule sends admitted arrivals to each server.
pub trait RoutingRule: Sync {
    fn arrival_rates(&self, mdp: &UniformizedMdp, state: &[usize]) -> Vec<f64>;
}

impl RoutingRule for MdpSolution {
    fn arrival_rates(&self, mdp: &UniformizedMdp, state: &[usize]) -> Vec<f64> {
        let s = mdp.index(state).expect("state from the same MDP");
        let g = mdp.geometry(s);
        let mut rates = vec![0.0; mdp.num_servers()];
        for (i, &r) in g.exclusive.iter().enumerate() {
            if r > 0.0 && self.choose(state, 1 << i).is_some() {
                rates[i] += r;
            }
        }
        for &(mask, r) in &g.common {
            if let Some(i) = self.choose(state, mask) {
                rates[i] += r;
            }
        }
        rates
    }
}

/// Sends every common region to its first participant in `order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPreference {
    pub order: Vec<usize>,
}

impl RoutingRule for FixedPreference {
    fn arrival_rates(&self, mdp: &UniformizedMdp, state: &[usize]) -> Vec<f64> {
        let s = mdp.index(state).expect("state from the same MDP");
        let g = mdp.geometry(s);
        let mut rates = g.exclusive.clone();
        for &(mask, r) in &g.common {
            if let Some(&i) = self.order.iter().find(|&&i| mask & (1 << i) != 0) {
                rates[i] += r;
            }
        }
        rates
    }
}

/// State-independent plan expressed through each server's own arrival
/// sequence, as produced by [`crate::static_policy::server_chains`].
#[derive(Debug, Clone)]
pub struct StaticRule {
    pub chains: Vec<BirthDeathChain>,
}

impl RoutingRule for StaticRule {
    fn arrival_rates(&self, _mdp: &UniformizedMdp, state: &[usize]) -> Vec<f64> {
        self.chains
            .iter()
            .zip(state)
            .map(|(c, &n)| {
                if n < c.n_max() {
                    c.arrival_rate(n)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub gain: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Long-run served rate of a fixed routing rule on the same state space.
pub fn evaluate_policy(
    mdp: &UniformizedMdp,
    rule: &dyn RoutingRule,
    options: &SolveOptions,
) -> Result<PolicyEvaluation> {
    let n = mdp.num_states();
    let mut table = Vec::with_capacity(n);
    for s in 0..n {
        let state = mdp.state(s);
        let rates = rule.arrival_rates(mdp, &state);
        if rates.len() != mdp.num_servers() {
            return Err(Error::UndefinedAction {
                state,
                reason: format!("rule returned {} rates", rates.len()),
            });
        }
        for (i, &r) in rates.iter().enumerate() {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::UndefinedAction {
                    state,
                    reason: format!("rate {r} for server {i}"),
                });
            }
            if r > 0.0 && state[i] + 1 >= mdp.dims[i] {
                return Err(Error::UndefinedAction {
                    state,
                    reason: format!("server {i} is full but receives arrivals"),
                });
            }
        }
        let offered: f64 = {
            let g = mdp.geometry(s);
            g.exclusive.iter().sum::<f64>() + g.common.iter().map(|(_, r)| r).sum::<f64>()
        };
        if rates.iter().sum::<f64>() > offered * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::UndefinedAction {
                state,
                reason: "rule routes more traffic than the covered area offers".into(),
            });
        }
        table.push(rates);
    }
    let (_, g, residual, iterations, converged) =
        iterate(mdp, options, |s, h| mdp.rule_backup(s, h, &table[s]))?;
    Ok(PolicyEvaluation {
        gain: g * mdp.nu,
        residual,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::Rect;

    fn pair(gap: f64) -> ServerLayout {
        ServerLayout {
            positions: vec![[-gap / 2.0, 0.0], [gap / 2.0, 0.0]],
            service_rates: vec![1.0, 1.0],
            psi: 6.0,
            region: Rect::centered(8.0),
            areal_rate: 0.05,
            speed_factor: 0.5,
        }
    }

    #[test]
    fn state_indexing_round_trips() {
        let mdp = build_mdp(&pair(1.0), GeometryMode::Exact, 0).unwrap();
        for s in 0..mdp.num_states() {
            assert_eq!(mdp.index(&mdp.state(s)).unwrap(), s);
        }
    }

    #[test]
    fn cap_refuses_large_spaces() {
        let mut layout = pair(1.0);
        layout.psi = 1000.0;
        match build_mdp(&layout, GeometryMode::Exact, 0) {
            Err(Error::StateSpaceTooLarge { size, cap }) => {
                assert_eq!(size, 1000 * 1000);
                assert_eq!(cap, DEFAULT_STATE_CAP);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transition_mass_is_a_distribution() {
        let mdp = build_mdp(&pair(1.0), GeometryMode::Exact, 0).unwrap();
        for s in 0..mdp.num_states() {
            let g = mdp.geometry(s);
            let out: f64 = g.exclusive.iter().sum::<f64>()
                + g.common.iter().map(|(_, r)| r).sum::<f64>()
                + (0..2)
                    .filter(|&i| mdp.queue(s, i) > 0)
                    .map(|i| mdp.mu[i])
                    .sum::<f64>();
            assert!(out <= mdp.nu() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn values_anchor_at_empty_state() {
        let mdp = build_mdp(&pair(1.0), GeometryMode::Exact, 0).unwrap();
        let sol = solve(&mdp, &SolveOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.values[0], 0.0);
        assert!(mdp.bellman_residual(&sol) <= 1e-9);
    }
}
