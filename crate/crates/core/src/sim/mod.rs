//! Seeded discrete-event simulation of request routing.
//!
//! Requests arrive as a Poisson process spread uniformly over the region.
//! A server can take a request only if the request lies within its current
//! serving radius, which is the expected-time form of the latency bound:
//! `distance / speed + (n + 1) / mu <= psi`. Everything else, and anything a
//! policy declines, goes to the origin.

mod experiments;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::coverage::{Point, ServerLayout, ServerMask};
use crate::dynamic_policy::MdpSolution;
use crate::error::{invalid, Error, Result};
use crate::static_policy::RegionAssignment;

pub use experiments::{
    compare_policies, scaling_experiment, Comparison, ComparisonRow, SimScalingReport,
    SimScalingRow,
};

pub const BATCHES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimPolicy {
    /// State-independent plan; the server's admit fraction is applied with
    /// a seeded coin.
    Static { assignment: RegionAssignment },
    /// Greedy routing on the relative values of a solved MDP.
    Dynamic { solution: MdpSolution },
    /// Closest server that can take the request.
    NearestFeasible,
    /// Uniform choice among servers that can take the request.
    RandomFeasible,
    /// Only requests a single server can take are served.
    ExclusiveOnly,
}

impl SimPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            SimPolicy::Static { .. } => "static",
            SimPolicy::Dynamic { .. } => "dynamic",
            SimPolicy::NearestFeasible => "nearest_feasible",
            SimPolicy::RandomFeasible => "random_feasible",
            SimPolicy::ExclusiveOnly => "exclusive_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub layout: ServerLayout,
    pub policy: SimPolicy,
    pub horizon: f64,
    /// Defaults to `10 * max n_max / min mu`.
    #[serde(default)]
    pub warmup: Option<f64>,
    pub seed: u64,
    /// Earned per request served within the bound.
    #[serde(default = "one")]
    pub price: f64,
    /// Paid per request left to the origin.
    #[serde(default)]
    pub penalty: f64,
    #[serde(default)]
    pub trace: bool,
}

fn one() -> f64 {
    1.0
}

impl SimConfig {
    pub fn new(layout: ServerLayout, policy: SimPolicy, horizon: f64, seed: u64) -> Self {
        Self {
            layout,
            policy,
            horizon,
            warmup: None,
            seed,
            price: 1.0,
            penalty: 0.0,
            trace: false,
        }
    }

    pub fn effective_warmup(&self) -> f64 {
        self.warmup.unwrap_or_else(|| default_warmup(&self.layout))
    }

    fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        let warmup = self.effective_warmup();
        if !(warmup >= 0.0) || !(self.horizon > warmup) || !self.horizon.is_finite() {
            return invalid(format!(
                "need horizon > warmup >= 0, got horizon {} and warmup {warmup}",
                self.horizon
            ));
        }
        if !(self.price >= 0.0) || !(self.penalty >= 0.0) {
            return invalid("price and penalty must be non-negative");
        }
        let m = self.layout.num_servers();
        match &self.policy {
            SimPolicy::Static { assignment } => {
                if assignment.positions.len() != m || assignment.admit_fractions.len() != m {
                    return invalid("static assignment was built for a different layout");
                }
            }
            SimPolicy::Dynamic { solution } => {
                let dims: Vec<usize> = (0..m).map(|i| self.layout.max_queue(i) + 1).collect();
                if solution.dims != dims {
                    return invalid("dynamic policy was solved for a different layout");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn default_warmup(layout: &ServerLayout) -> f64 {
    let n_max = (0..layout.num_servers())
        .map(|i| layout.max_queue(i))
        .max()
        .unwrap_or(0);
    let mu_min = layout
        .service_rates
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    10.0 * n_max as f64 / mu_min
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Arrival,
    Admit,
    Origin,
    Departure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: TraceKind,
    pub server: Option<usize>,
    /// Queue length of `server` after the event, 0 without a server.
    pub queue: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: String,
    /// Length of the measured window, `horizon - warmup`.
    pub observed_time: f64,
    pub arrivals: u64,
    pub served_within_psi: u64,
    pub origin_served: u64,
    /// Served requests whose realized transmission plus sojourn time also
    /// met the bound.
    pub strict_within_deadline: u64,
    pub arrival_rate: f64,
    pub throughput_rate: f64,
    pub revenue_rate: f64,
    pub utilizations: Vec<f64>,
    pub max_queue_seen: Vec<usize>,
    pub batch_throughputs: Vec<f64>,
    /// 95% batch-means half-width on `throughput_rate`.
    pub ci_half_width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEvent>>,
}

impl SimReport {
    pub fn std_error(&self) -> f64 {
        self.ci_half_width / t_quantile(self.batch_throughputs.len())
    }
}

/// Two-sided 95% Student-t quantile for `batches - 1` degrees of freedom.
pub fn t_quantile(batches: usize) -> f64 {
    let dof = (batches.max(2) - 1) as f64;
    StudentsT::new(0.0, 1.0, dof)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(f64::NAN)
}

/// Sample mean and 95% half-width.
pub fn batch_interval(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, t_quantile(k) * (var / k as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Arrival,
    Departure(usize),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Streams {
    arrivals: ChaCha8Rng,
    locations: ChaCha8Rng,
    services: ChaCha8Rng,
    coins: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            rng
        };
        Self {
            arrivals: stream(1),
            locations: stream(2),
            services: stream(3),
            coins: stream(4),
        }
    }
}

struct Server {
    /// Arrival time and distance of each request present, head in service.
    queue: VecDeque<(f64, f64)>,
    busy_time: f64,
    max_seen: usize,
    service: Exp<f64>,
}

/// Runs one replication.
pub fn run(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let layout = &config.layout;
    let m = layout.num_servers();
    let warmup = config.effective_warmup();
    let horizon = config.horizon;
    let window = horizon - warmup;
    let batch_len = window / BATCHES as f64;
    let total_rate = layout.total_arrival_rate();
    let n_max: Vec<usize> = (0..m).map(|i| layout.max_queue(i)).collect();

    let mut rng = Streams::new(config.seed);
    let mut servers: Vec<Server> = layout
        .service_rates
        .iter()
        .map(|&mu| {
            Ok(Server {
                queue: VecDeque::new(),
                busy_time: 0.0,
                max_seen: 0,
                service: Exp::new(mu).map_err(|e| Error::InvalidInput(e.to_string()))?,
            })
        })
        .collect::<Result<_>>()?;
    let interarrival = if total_rate > 0.0 {
        Some(Exp::new(total_rate).map_err(|e| Error::InvalidInput(e.to_string()))?)
    } else {
        None
    };

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Event>, time: f64, kind: EventKind| {
        heap.push(Event { time, seq, kind });
        seq += 1;
    };
    if let Some(exp) = &interarrival {
        let t = exp.sample(&mut rng.arrivals);
        push(&mut heap, t, EventKind::Arrival);
    }

    let mut arrivals = 0u64;
    let mut served = 0u64;
    let mut origin = 0u64;
    let mut strict = 0u64;
    let mut batches = [0u64; BATCHES];
    let mut trace = config.trace.then(Vec::new);
    let mut now = 0.0_f64;
    let mut queue_state = vec![0usize; m];

    while let Some(event) = heap.pop() {
        if event.time > horizon {
            break;
        }
        // Busy time inside the measured window.
        let lo = now.max(warmup);
        if event.time > lo {
            for s in servers.iter_mut().filter(|s| !s.queue.is_empty()) {
                s.busy_time += event.time - lo;
            }
        }
        now = event.time;
        let measured = now >= warmup;

        match event.kind {
            EventKind::Arrival => {
                let exp = interarrival
                    .as_ref()
                    .expect("arrivals imply a positive rate");
                let next = now + exp.sample(&mut rng.arrivals);
                push(&mut heap, next, EventKind::Arrival);

                let r = layout.region;
                let p: Point = [
                    r.x_min + rng.locations.random::<f64>() * r.width(),
                    r.y_min + rng.locations.random::<f64>() * r.height(),
                ];
                let mut feasible: ServerMask = 0;
                let mut dist = vec![0.0; m];
                for i in 0..m {
                    let c = layout.positions[i];
                    dist[i] = (p[0] - c[0]).hypot(p[1] - c[1]);
                    let radius = layout.radius(i, queue_state[i]);
                    if radius > 0.0 && dist[i] <= radius {
                        feasible |= 1 << i;
                    }
                }
                if let Some(t) = trace.as_mut() {
                    t.push(TraceEvent {
                        time: now,
                        kind: TraceKind::Arrival,
                        server: None,
                        queue: 0,
                    });
                }
                let target = route(
                    &config.policy,
                    p,
                    feasible,
                    &dist,
                    &queue_state,
                    &mut rng.coins,
                    now,
                )?;
                if measured {
                    arrivals += 1;
                }
                match target {
                    Some(i) => {
                        if queue_state[i] >= n_max[i] {
                            return Err(Error::Routing {
                                time: now,
                                reason: format!(
                                    "server {i} would exceed its queue bound {}",
                                    n_max[i]
                                ),
                            });
                        }
                        queue_state[i] += 1;
                        let s = &mut servers[i];
                        s.queue.push_back((now, dist[i]));
                        s.max_seen = s.max_seen.max(queue_state[i]);
                        if queue_state[i] == 1 {
                            let done = now + s.service.sample(&mut rng.services);
                            push(&mut heap, done, EventKind::Departure(i));
                        }
                        if measured {
                            served += 1;
                            let b = (((now - warmup) / batch_len) as usize).min(BATCHES - 1);
                            batches[b] += 1;
                        }
                        if let Some(t) = trace.as_mut() {
                            t.push(TraceEvent {
                                time: now,
                                kind: TraceKind::Admit,
                                server: Some(i),
                                queue: queue_state[i],
                            });
                        }
                    }
                    None => {
                        if measured {
                            origin += 1;
                        }
                        if let Some(t) = trace.as_mut() {
                            t.push(TraceEvent {
                                time: now,
                                kind: TraceKind::Origin,
                                server: None,
                                queue: 0,
                            });
                        }
                    }
                }
            }
            EventKind::Departure(i) => {
                let s = &mut servers[i];
                let (arrived, d) = s.queue.pop_front().expect("departure from a busy server");
                queue_state[i] -= 1;
                if arrived >= warmup && d / layout.speed_factor + (now - arrived) <= layout.psi {
                    strict += 1;
                }
                if !s.queue.is_empty() {
                    let done = now + s.service.sample(&mut rng.services);
                    push(&mut heap, done, EventKind::Departure(i));
                }
                if let Some(t) = trace.as_mut() {
                    t.push(TraceEvent {
                        time: now,
                        kind: TraceKind::Departure,
                        server: Some(i),
                        queue: queue_state[i],
                    });
                }
            }
        }
    }
    // Close the busy-time integral at the horizon.
    let lo = now.max(warmup);
    for s in servers.iter_mut().filter(|s| !s.queue.is_empty()) {
        s.busy_time += horizon - lo;
    }

    let batch_throughputs: Vec<f64> = batches.iter().map(|&c| c as f64 / batch_len).collect();
    let (_, ci_half_width) = batch_interval(&batch_throughputs);
    let throughput_rate = served as f64 / window;
    Ok(SimReport {
        policy: config.policy.name().to_string(),
        observed_time: window,
        arrivals,
        served_within_psi: served,
        origin_served: origin,
        strict_within_deadline: strict,
        arrival_rate: arrivals as f64 / window,
        throughput_rate,
        revenue_rate: (config.price * served as f64 - config.penalty * origin as f64) / window,
        utilizations: servers.iter().map(|s| s.busy_time / window).collect(),
        max_queue_seen: servers.iter().map(|s| s.max_seen).collect(),
        batch_throughputs,
        ci_half_width,
        trace,
    })
}

fn route(
    policy: &SimPolicy,
    p: Point,
    feasible: ServerMask,
    dist: &[f64],
    queues: &[usize],
    coins: &mut ChaCha8Rng,
    now: f64,
) -> Result<Option<usize>> {
    let members = || (0..dist.len()).filter(move |&i| feasible & (1 << i) != 0);
    let target = match policy {
        SimPolicy::Static { assignment } => {
            let coin: f64 = coins.random();
            match assignment.server_for(p) {
                Some(i) if feasible & (1 << i) != 0 && coin < assignment.admit_fractions[i] => {
                    Some(i)
                }
                _ => None,
            }
        }
        SimPolicy::Dynamic { solution } => {
            if feasible == 0 {
                None
            } else {
                let choice = solution.choose(queues, feasible);
                if choice.is_none() && !solution.allow_origin {
                    return Err(Error::Routing {
                        time: now,
                        reason: format!("no action for state {queues:?}"),
                    });
                }
                choice
            }
        }
        SimPolicy::NearestFeasible => members().min_by(|&a, &b| dist[a].total_cmp(&dist[b])),
        SimPolicy::RandomFeasible => {
            let options: Vec<usize> = members().collect();
            if options.is_empty() {
                None
            } else {
                Some(options[coins.random_range(0..options.len())])
            }
        }
        SimPolicy::ExclusiveOnly => {
            (feasible.count_ones() == 1).then(|| feasible.trailing_zeros() as usize)
        }
    };
    if let Some(i) = target {
        if feasible & (1 << i) == 0 {
            return Err(Error::Routing {
                time: now,
                reason: format!("policy chose server {i}, which cannot serve the request"),
            });
        }
    }
    Ok(target)
}
