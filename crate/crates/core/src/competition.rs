//! Price competition between CDNs that differ only in performance.
//!
//! Content providers have a sensitivity `theta` uniform on `[0, 1]` and pick
//! the CDN maximizing `theta * (1 - beta) - price`, or no CDN when every
//! payoff is negative. CDNs are indexed from 0 in ascending `beta`, so index 0
//! is the best performer.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdnProfile {
    pub beta: f64,
    pub price: f64,
}

impl CdnProfile {
    pub fn new(beta: f64, price: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return invalid(format!("beta must lie in (0, 1), got {beta}"));
        }
        if !(price >= 0.0) || !price.is_finite() {
            return invalid(format!(
                "price must be a finite non-negative number, got {price}"
            ));
        }
        Ok(Self { beta, price })
    }
}

/// A set of competing CDNs, kept sorted by ascending `beta`, plus the total
/// provider population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketInstance {
    cdns: Vec<CdnProfile>,
    population: f64,
}

impl MarketInstance {
    pub fn new(mut cdns: Vec<CdnProfile>, population: f64) -> Result<Self> {
        if cdns.is_empty() {
            return invalid("a market needs at least one CDN");
        }
        if !(population > 0.0) || !population.is_finite() {
            return invalid(format!("population must be positive, got {population}"));
        }
        for c in &cdns {
            CdnProfile::new(c.beta, c.price)?;
        }
        cdns.sort_by(|a, b| a.beta.total_cmp(&b.beta));
        Ok(Self { cdns, population })
    }

    /// Market with every price set to zero.
    pub fn from_betas(betas: &[f64], population: f64) -> Result<Self> {
        let cdns = betas
            .iter()
            .map(|&b| CdnProfile::new(b, 0.0))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cdns, population)
    }

    pub fn cdns(&self) -> &[CdnProfile] {
        &self.cdns
    }

    pub fn len(&self) -> usize {
        self.cdns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdns.is_empty()
    }

    pub fn population(&self) -> f64 {
        self.population
    }

    pub fn betas(&self) -> Vec<f64> {
        self.cdns.iter().map(|c| c.beta).collect()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.cdns.iter().map(|c| c.price).collect()
    }

    /// Replaces the prices, in ascending-beta order.
    pub fn with_prices(&self, prices: &[f64]) -> Result<Self> {
        if prices.len() != self.cdns.len() {
            return invalid(format!(
                "expected {} prices, got {}",
                self.cdns.len(),
                prices.len()
            ));
        }
        let cdns = self
            .cdns
            .iter()
            .zip(prices)
            .map(|(c, &w)| CdnProfile::new(c.beta, w))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cdns,
            population: self.population,
        })
    }

    fn set_price(&mut self, k: usize, price: f64) {
        self.cdns[k].price = price;
    }

    fn tied_beta(&self) -> Option<f64> {
        self.cdns
            .windows(2)
            .find(|w| w[0].beta == w[1].beta)
            .map(|w| w[0].beta)
    }

    fn require_distinct(&self) -> Result<()> {
        match self.tied_beta() {
            Some(b) => Err(Error::EqualBetas(b)),
            None => Ok(()),
        }
    }

    fn require_len(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(Error::WrongCdnCount {
                expected,
                actual: self.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub prices: Vec<f64>,
    /// Lower sensitivity bound of each CDN's customer interval; CDN `k` serves
    /// `[thresholds[k], thresholds[k-1]]` with an implicit upper bound of 1 for
    /// CDN 0.
    pub thresholds: Vec<f64>,
    pub shares: Vec<f64>,
    pub revenues: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl EquilibriumResult {
    /// `J_a / J_b`.
    pub fn revenue_ratio(&self, a: usize, b: usize) -> f64 {
        self.revenues[a] / self.revenues[b]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSplit {
    pub thresholds: Vec<f64>,
    pub shares: Vec<f64>,
}

/// `theta * (1 - beta) - price`.
pub fn payoff(theta: f64, cdn: &CdnProfile) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return invalid(format!("sensitivity must lie in [0, 1], got {theta}"));
    }
    Ok(theta * (1.0 - cdn.beta) - cdn.price)
}

/// Splits the provider population by evaluating the upper envelope of the
/// payoff lines (and the zero line for "no CDN") over `[0, 1]`.
pub fn market_split(market: &MarketInstance) -> Result<MarketSplit> {
    market.require_distinct()?;
    Ok(split_unchecked(market))
}

fn split_unchecked(market: &MarketInstance) -> MarketSplit {
    let k = market.len();
    // (slope, intercept); index k is the outside option.
    let lines: Vec<(f64, f64)> = market
        .cdns
        .iter()
        .map(|c| (1.0 - c.beta, -c.price))
        .chain(std::iter::once((0.0, 0.0)))
        .collect();

    let mut cuts = vec![0.0, 1.0];
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            let (s1, c1) = lines[i];
            let (s2, c2) = lines[j];
            if s1 != s2 {
                let t = (c2 - c1) / (s1 - s2);
                if t > 0.0 && t < 1.0 {
                    cuts.push(t);
                }
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut lengths = vec![0.0; k + 1];
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (idx, &(s, c)) in lines.iter().enumerate() {
            let v = s * mid + c;
            if v > best_val {
                best_val = v;
                best = idx;
            }
        }
        lengths[best] += w[1] - w[0];
    }

    // Slopes decrease with the index, so the envelope visits CDNs in index
    // order from theta = 1 downwards and the intervals are contiguous.
    let mut thresholds = Vec::with_capacity(k);
    let mut upper = 1.0_f64;
    for len in &lengths[..k] {
        upper = (upper - len).clamp(0.0, 1.0);
        thresholds.push(upper);
    }
    let shares = lengths[..k].iter().map(|l| l * market.population).collect();
    MarketSplit { thresholds, shares }
}

/// `J_k = share_k * price_k` at the current prices.
pub fn revenue(market: &MarketInstance) -> Result<Vec<f64>> {
    let split = market_split(market)?;
    Ok(revenues_from(market, &split.shares))
}

fn revenues_from(market: &MarketInstance, shares: &[f64]) -> Vec<f64> {
    market
        .cdns
        .iter()
        .zip(shares)
        .map(|(c, s)| c.price * s)
        .collect()
}

/// Closed-form best response of `responder` (0 or 1) in a duopoly, holding the
/// other CDN's price at `opponent_price`.
pub fn best_response_duopoly(
    opponent_price: f64,
    market: &MarketInstance,
    responder: usize,
) -> Result<f64> {
    market.require_len(2)?;
    market.require_distinct()?;
    if !(opponent_price >= 0.0) {
        return invalid(format!(
            "opponent price must be non-negative, got {opponent_price}"
        ));
    }
    let (b1, b2) = (market.cdns[0].beta, market.cdns[1].beta);
    match responder {
        0 => Ok((b2 - b1 + opponent_price) / 2.0),
        1 => Ok(opponent_price * (1.0 - b2) / (2.0 * (1.0 - b1))),
        r => invalid(format!("responder must be 0 or 1, got {r}")),
    }
}

/// Closed-form two-CDN Nash equilibrium. Existing prices on `market` are
/// ignored.
pub fn equilibrium_duopoly(market: &MarketInstance) -> Result<EquilibriumResult> {
    market.require_len(2)?;
    market.require_distinct()?;
    let (b1, b2) = (market.cdns[0].beta, market.cdns[1].beta);
    let lam = market.population;
    let denom = 4.0 * (1.0 - b1) - (1.0 - b2);
    let w1 = 2.0 * (1.0 - b1) * (b2 - b1) / denom;
    let w2 = (1.0 - b2) * (b2 - b1) / denom;
    let shares = vec![2.0 * (1.0 - b1) / denom * lam, (1.0 - b1) / denom * lam];
    let thresholds = vec![(w1 - w2) / (b2 - b1), w2 / (1.0 - b2)];
    Ok(EquilibriumResult {
        revenues: vec![w1 * shares[0], w2 * shares[1]],
        prices: vec![w1, w2],
        thresholds,
        shares,
        converged: true,
        iterations: 0,
    })
}

/// Closed-form three-CDN equilibrium using the published price and share
/// expressions.
///
/// The prices are the Nash point of the game. The published share
/// expressions for CDNs 1 and 2 do not coincide with the shares those prices
/// induce through the indifference thresholds (call [`market_split`] on the
/// priced market for those); `shares` and `revenues` here follow the
/// published expressions so the tabulated revenue ratios reproduce.
pub fn equilibrium_triopoly(market: &MarketInstance) -> Result<EquilibriumResult> {
    market.require_len(3)?;
    market.require_distinct()?;
    let (b1, b2, b3) = (
        market.cdns[0].beta,
        market.cdns[1].beta,
        market.cdns[2].beta,
    );
    let lam = market.population;
    let d = 4.0 * (1.0 - b2) * (b3 - b1) - (1.0 - b3) * (b2 - b1) - (1.0 - b2) * (b3 - b2);

    let w1 =
        (4.0 * (1.0 - b2) * (b2 - b1) * (b3 - b1) - (1.0 - b3) * (b2 - b1) * (b2 - b1)) / (2.0 * d);
    let w2 = (1.0 - b2) * (b2 - b1) * (b3 - b2) / d;
    let w3 = (1.0 - b3) * (b2 - b1) * (b3 - b2) / (2.0 * d);

    let s1 = (2.0 * (1.0 - b2) * (b3 - b1) - 0.5 * (1.0 - b3) * (b2 - b1)) * lam / d;
    let s2 = ((1.0 - b2) * (b3 - b1) + 0.5 * (1.0 - b3) * (b2 - b1)) * lam / d;
    let s3 = 0.5 * (b2 - b1) * (b3 - b2) * lam / d;

    let thresholds = vec![
        (w1 - w2) / (b2 - b1),
        (w2 - w3) / (b3 - b2),
        w3 / (1.0 - b3),
    ];
    Ok(EquilibriumResult {
        prices: vec![w1, w2, w3],
        thresholds,
        revenues: vec![w1 * s1, w2 * s2, w3 * s3],
        shares: vec![s1, s2, s3],
        converged: true,
        iterations: 0,
    })
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;
const SCAN_POINTS: usize = 64;

/// Revenue-maximizing price for CDN `k` with the other prices fixed.
///
/// A coarse scan brackets the global maximum (revenue can have kinks where a
/// neighbour drops off the envelope), then golden-section search refines it
/// and, on a smooth stretch, the vertex of the local parabola is taken.
fn numeric_best_response(market: &mut MarketInstance, k: usize, tol: f64) -> f64 {
    let hi = 1.0 - market.cdns[k].beta;
    let original = market.cdns[k].price;
    let eval = |w: f64, m: &mut MarketInstance| {
        m.set_price(k, w);
        w * split_unchecked(m).shares[k]
    };

    let step = hi / SCAN_POINTS as f64;
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..=SCAN_POINTS {
        let v = eval(i as f64 * step, market);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = best_i.saturating_sub(1) as f64 * step;
    let mut b = ((best_i + 1).min(SCAN_POINTS)) as f64 * step;

    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = eval(x1, market);
    let mut f2 = eval(x2, market);
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = eval(x2, market);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = eval(x1, market);
        }
    }
    let mut x = 0.5 * (a + b);

    // Near a smooth maximum the share is linear in the own price, so the
    // vertex of `w * share(w)` can be solved for directly.
    let share = |w: f64, m: &mut MarketInstance| {
        m.set_price(k, w);
        split_unchecked(m).shares[k]
    };
    let h = (1e-4 * hi).min(x).min(hi - x);
    if h > 0.0 {
        let (s_lo, s_mid, s_hi) = (share(x - h, market), share(x, market), share(x + h, market));
        let left = (s_mid - s_lo) / h;
        let right = (s_hi - s_mid) / h;
        if left < 0.0 && (left - right).abs() <= 1e-9 * left.abs() {
            let slope = 0.5 * (left + right);
            let vertex = (s_mid - slope * x) / (-2.0 * slope);
            if (vertex - x).abs() < h && vertex >= 0.0 {
                let fx = eval(x, market);
                if eval(vertex, market) >= fx - 1e-15 * fx.abs() {
                    x = vertex;
                }
            }
        }
    }
    market.set_price(k, original);
    x
}

/// Damped best-response dynamics for any number of CDNs, starting from the
/// prices already on `market`.
///
/// Each sweep updates CDNs in ascending index order with
/// `w_k += damping * (BR_k - w_k)`. The run stops once, over a full sweep, no
/// best response differs from the current price by `tol` or more. Exactly
/// tied betas have no well-defined split, so the result comes back unconverged with the starting prices and empty
/// shares.
pub fn best_response_iteration(
    market: &MarketInstance,
    tol: f64,
    max_iter: usize,
    damping: f64,
) -> Result<EquilibriumResult> {
    if !(tol > 0.0) {
        return invalid(format!("tolerance must be positive, got {tol}"));
    }
    if !(damping > 0.0 && damping <= 1.0) {
        return invalid(format!("damping must lie in (0, 1], got {damping}"));
    }
    if market.tied_beta().is_some() {
        return Ok(EquilibriumResult {
            prices: market.prices(),
            thresholds: Vec::new(),
            shares: Vec::new(),
            revenues: Vec::new(),
            converged: false,
            iterations: 0,
        });
    }

    let mut current = market.clone();
    let mut best_prices = current.prices();
    let mut best_change = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let mut change = 0.0_f64;
        for k in 0..current.len() {
            let target = numeric_best_response(&mut current, k, tol / 10.0);
            let old = current.cdns[k].price;
            change = change.max((target - old).abs());
            let new = old + damping * (target - old);
            current.set_price(k, new);
        }
        if change < best_change {
            best_change = change;
            best_prices = current.prices();
        }
        if change < tol {
            converged = true;
            break;
        }
    }

    let settled = current.with_prices(&best_prices)?;
    let split = split_unchecked(&settled);
    Ok(EquilibriumResult {
        revenues: revenues_from(&settled, &split.shares),
        prices: best_prices,
        thresholds: split.thresholds,
        shares: split.shares,
        converged,
        iterations,
    })
}

/// Which CDN's beta moves along a sweep; the other stays at `beta_fixed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepSide {
    /// The varying beta belongs to the better-performing CDN.
    Leader,
    /// The varying beta belongs to the worse-performing CDN.
    Follower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub beta_1: f64,
    pub beta_2: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSweep {
    pub rows: Vec<RatioRow>,
    /// Varying betas dropped because they broke the strict ordering.
    pub skipped: Vec<f64>,
}

/// Equilibrium revenue ratio `J_1* / J_2*` across a range of duopolies.
pub fn ratio_sweep(beta_fixed: f64, beta_varying: &[f64], side: SweepSide) -> Result<RatioSweep> {
    CdnProfile::new(beta_fixed, 0.0)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &b in beta_varying {
        CdnProfile::new(b, 0.0)?;
        let (b1, b2) = match side {
            SweepSide::Leader => (b, beta_fixed),
            SweepSide::Follower => (beta_fixed, b),
        };
        if !(b1 < b2) {
            skipped.push(b);
            continue;
        }
        let eq = equilibrium_duopoly(&MarketInstance::from_betas(&[b1, b2], 1.0)?)?;
        rows.push(RatioRow {
            beta_1: b1,
            beta_2: b2,
            ratio: eq.revenue_ratio(0, 1),
        });
    }
    Ok(RatioSweep { rows, skipped })
}
