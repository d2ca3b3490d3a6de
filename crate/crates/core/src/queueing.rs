//! Single-server CDN as a finite birth-death chain.
//!
//! A server with `n` queued requests can only reach users whose travel time
//! plus the expected `(n + 1) / mu` wait fits inside the latency bound `psi`,
//! so its arrival rate shrinks with the square of the serving radius and
//! reaches zero at `n_max = ceil(psi * mu - 1)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::max_queue;
use crate::error::{invalid, Result};

/// Tail terms are dropped once their bound falls below this fraction of the
/// running sum.
pub const TRUNCATION_REL: f64 = 1e-18;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalModel {
    /// `lambda(n) = lambda0 * (1 - n / (psi * mu - 1))^2`.
    EmptyStateRate { lambda0: f64 },
    /// `lambda(n) = areal_rate * pi * (speed * (psi - (n + 1) / mu))^2` for a
    /// disk that never leaves the service region.
    Areal { areal_rate: f64, speed: f64 },
    /// Explicit `lambda(0..=n_max)`.
    Table { rates: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathChain {
    mu: f64,
    psi: f64,
    arrivals: ArrivalModel,
    /// Per-state rate handed to other servers, subtracted from `lambda(n)`.
    ceded: Option<Vec<f64>>,
}

impl BirthDeathChain {
    pub fn new(mu: f64, psi: f64, arrivals: ArrivalModel) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return invalid(format!("service rate must be positive, got {mu}"));
        }
        if !(psi > 0.0) || !psi.is_finite() {
            return invalid(format!("latency bound must be positive, got {psi}"));
        }
        match &arrivals {
            ArrivalModel::EmptyStateRate { lambda0 } => {
                if !(*lambda0 >= 0.0) || !lambda0.is_finite() {
                    return invalid(format!("lambda(0) must be non-negative, got {lambda0}"));
                }
            }
            ArrivalModel::Areal { areal_rate, speed } => {
                if !(*areal_rate >= 0.0) || !(*speed > 0.0) {
                    return invalid("areal rate must be non-negative and speed positive");
                }
            }
            ArrivalModel::Table { rates } => {
                let expected = max_queue(psi, mu) + 1;
                if rates.len() != expected {
                    return invalid(format!(
                        "arrival table needs {expected} entries, got {}",
                        rates.len()
                    ));
                }
                if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
                    return invalid("arrival table entries must be finite and non-negative");
                }
            }
        }
        Ok(Self {
            mu,
            psi,
            arrivals,
            ceded: None,
        })
    }

    /// Chain parameterized by its empty-state arrival rate.
    pub fn with_lambda0(lambda0: f64, mu: f64, psi: f64) -> Result<Self> {
        Self::new(mu, psi, ArrivalModel::EmptyStateRate { lambda0 })
    }

    /// Attaches per-state ceded rates `a_n`; missing trailing entries count as 0.
    pub fn with_ceded(mut self, ceded: Vec<f64>) -> Result<Self> {
        if ceded.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return invalid("ceded rates must be finite and non-negative");
        }
        self.ceded = Some(ceded);
        Ok(self)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn arrivals(&self) -> &ArrivalModel {
        &self.arrivals
    }

    pub fn n_max(&self) -> usize {
        max_queue(self.psi, self.mu)
    }

    /// Arrival rate in state `n`. The analytic models reach zero at `n_max`.
    pub fn arrival_rate(&self, n: usize) -> f64 {
        let base = match &self.arrivals {
            ArrivalModel::EmptyStateRate { lambda0 } => {
                let span = self.psi * self.mu - 1.0;
                if n == 0 {
                    *lambda0
                } else if span <= 0.0 {
                    0.0
                } else {
                    let f = (1.0 - n as f64 / span).max(0.0);
                    lambda0 * f * f
                }
            }
            ArrivalModel::Areal { areal_rate, speed } => {
                let r = (speed * (self.psi - (n as f64 + 1.0) / self.mu)).max(0.0);
                areal_rate * std::f64::consts::PI * r * r
            }
            ArrivalModel::Table { rates } => rates.get(n).copied().unwrap_or(0.0),
        };
        let ceded = self
            .ceded
            .as_ref()
            .and_then(|a| a.get(n).copied())
            .unwrap_or(0.0);
        (base - ceded).max(0.0)
    }

    pub fn empty_state_rate(&self) -> f64 {
        self.arrival_rate(0)
    }

    /// Rates multiplied by `c` with `psi` unchanged.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return invalid(format!("scaling factor must be positive, got {c}"));
        }
        if self.ceded.is_some() {
            return invalid("chains with ceded rates cannot be rescaled");
        }
        let arrivals = match &self.arrivals {
            ArrivalModel::EmptyStateRate { lambda0 } => ArrivalModel::EmptyStateRate {
                lambda0: lambda0 * c,
            },
            ArrivalModel::Areal { areal_rate, speed } => ArrivalModel::Areal {
                areal_rate: areal_rate * c,
                speed: *speed,
            },
            ArrivalModel::Table { .. } => {
                return invalid("tabulated arrival rates cannot be rescaled");
            }
        };
        Self::new(self.mu * c, self.psi, arrivals)
    }

    fn monotone(&self) -> bool {
        self.ceded.is_none() && !matches!(self.arrivals, ArrivalModel::Table { .. })
    }

    /// `ln prod_{l<n} lambda(l) / mu` for `n = 0..=n_max`. Zero products map
    /// to negative infinity.
    pub fn log_weights(&self) -> Vec<f64> {
        let n_max = self.n_max();
        let mut out = Vec::with_capacity(n_max + 1);
        let mut acc = 0.0_f64;
        out.push(acc);
        let ln_mu = self.mu.ln();
        for n in 0..n_max {
            acc += self.arrival_rate(n).ln() - ln_mu;
            out.push(acc);
        }
        out
    }

    /// `ln sum_n prod_{l<n} lambda(l) / mu`, streamed without storing terms.
    fn log_normalizer(&self) -> f64 {
        let n_max = self.n_max();
        let monotone = self.monotone();
        let ln_mu = self.mu.ln();
        let mut sum = LogSum::new();
        sum.add(0.0);
        let mut log_t = 0.0_f64;
        for n in 0..n_max {
            let lam = self.arrival_rate(n);
            if lam <= 0.0 {
                break;
            }
            let ratio = lam / self.mu;
            log_t += lam.ln() - ln_mu;
            sum.add(log_t);
            // Once ratios are below 1 and non-increasing, the tail is bounded
            // by a geometric series.
            if monotone && ratio < 1.0 {
                let next_ratio = self.arrival_rate(n + 1) / self.mu;
                if next_ratio < 1.0 {
                    let tail = log_t + next_ratio.ln() - (1.0 - next_ratio).ln();
                    if tail < sum.ln() + TRUNCATION_REL.ln() {
                        break;
                    }
                }
            }
        }
        sum.ln()
    }

    /// Upper bound on the long-run served rate, `min(lambda(0), mu)`.
    pub fn upper_bound(&self) -> f64 {
        self.empty_state_rate().min(self.mu)
    }

    /// Long-run served rate `mu * (1 - p_0)`.
    pub fn throughput(&self) -> f64 {
        if self.n_max() == 0 {
            return 0.0;
        }
        let ln_z = self.log_normalizer();
        -self.mu * (-ln_z).exp_m1()
    }

    pub fn empty_probability(&self) -> f64 {
        (-self.log_normalizer()).exp()
    }
}

/// `p_0..=p_{n_max}` from the balance equations `p_n lambda(n) = p_{n+1} mu`.
pub fn stationary_distribution(chain: &BirthDeathChain) -> Vec<f64> {
    let logs = chain.log_weights();
    let mut sum = LogSum::new();
    for &l in &logs {
        sum.add(l);
    }
    let ln_z = sum.ln();
    logs.iter().map(|l| (l - ln_z).exp()).collect()
}

pub fn throughput(chain: &BirthDeathChain) -> f64 {
    chain.throughput()
}

pub fn upper_bound(chain: &BirthDeathChain) -> f64 {
    chain.upper_bound()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub c: f64,
    pub throughput: f64,
    pub upper_bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
}

/// Solves the chain scaled by every factor in `factors`, rows in input order.
pub fn scaling_sweep(chain: &BirthDeathChain, factors: &[f64]) -> Result<ScalingReport> {
    if let Some(c) = factors.iter().find(|c| !(**c >= 1.0) || !c.is_finite()) {
        return invalid(format!("scaling factors must be at least 1, got {c}"));
    }
    if !(chain.upper_bound() > 0.0) {
        return invalid("scaling needs a positive empty-state arrival rate");
    }
    let chains = factors
        .iter()
        .map(|&c| chain.scaled(c))
        .collect::<Result<Vec<_>>>()?;
    let rows = factors
        .par_iter()
        .zip(chains.par_iter())
        .map(|(&c, scaled)| {
            let throughput = scaled.throughput();
            let upper_bound = scaled.upper_bound();
            ScalingRow {
                c,
                throughput,
                upper_bound,
                ratio: throughput / upper_bound,
            }
        })
        .collect();
    Ok(ScalingReport { rows })
}

/// Running `ln sum exp(x_i)` with Neumaier compensation, rescaled whenever a
/// new maximum arrives.
struct LogSum {
    max: f64,
    sum: f64,
    comp: f64,
}

impl LogSum {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            comp: 0.0,
        }
    }

    fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            let scale = (self.max - x).exp();
            self.sum *= scale;
            self.comp *= scale;
            self.max = x;
        }
        let v = (x - self.max).exp();
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn ln(&self) -> f64 {
        self.max + (self.sum + self.comp).ln()
    }
}
