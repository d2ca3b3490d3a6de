//! Planar coverage model.
//!
//! A server with `n` queued requests can meet the latency bound `psi` for any
//! user within `speed_factor * (psi - (n + 1) / mu)`. Users are uniform over a
//! rectangular region, so areas convert to arrival rates through the areal
//! rate. Disks are clipped to the region.
//!
//! Exact areas come from Green's theorem over the boundary of each convex
//! intersection `R ∩ D_a ∩ D_b ∩ ...`, then Möbius inversion turns the
//! intersection areas into areas of points covered by exactly a given server
//! subset.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Point = [f64; 2];

/// Bitmask of server indices.
pub type ServerMask = u64;

pub const MAX_EXACT_SERVERS: usize = 3;
pub const DEFAULT_SAMPLES: usize = 400_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let r = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !(r.area() > 0.0) || !r.area().is_finite() {
            return invalid(format!("region must have positive finite area: {r:?}"));
        }
        Ok(r)
    }

    /// Square of half-width `half` centred on the origin.
    pub fn centered(half: f64) -> Self {
        Self {
            x_min: -half,
            y_min: -half,
            x_max: half,
            y_max: half,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

fn default_speed() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerLayout {
    pub positions: Vec<Point>,
    pub service_rates: Vec<f64>,
    pub psi: f64,
    pub region: Rect,
    /// Arrival rate per unit area.
    pub areal_rate: f64,
    /// Distance covered per unit of transmission time.
    #[serde(default = "default_speed")]
    pub speed_factor: f64,
}

impl ServerLayout {
    pub fn validate(&self) -> Result<()> {
        let m = self.positions.len();
        if m == 0 {
            return invalid("layout needs at least one server");
        }
        if self.service_rates.len() != m {
            return invalid(format!(
                "{} positions but {} service rates",
                m,
                self.service_rates.len()
            ));
        }
        if m > 64 {
            return invalid("at most 64 servers are supported");
        }
        if let Some(mu) = self
            .service_rates
            .iter()
            .find(|mu| !(**mu > 0.0 && mu.is_finite()))
        {
            return invalid(format!("service rates must be positive, got {mu}"));
        }
        if !(self.psi > 0.0 && self.psi.is_finite()) {
            return invalid(format!("psi must be positive, got {}", self.psi));
        }
        if !(self.areal_rate >= 0.0 && self.areal_rate.is_finite()) {
            return invalid(format!(
                "areal rate must be non-negative, got {}",
                self.areal_rate
            ));
        }
        if !(self.speed_factor > 0.0 && self.speed_factor.is_finite()) {
            return invalid(format!(
                "speed factor must be positive, got {}",
                self.speed_factor
            ));
        }
        Rect::new(
            self.region.x_min,
            self.region.y_min,
            self.region.x_max,
            self.region.y_max,
        )?;
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("server positions must be finite");
        }
        Ok(())
    }

    pub fn num_servers(&self) -> usize {
        self.positions.len()
    }

    /// Total arrival rate over the whole region.
    pub fn total_arrival_rate(&self) -> f64 {
        self.areal_rate * self.region.area()
    }

    /// Largest queue length server `i` can reach, `ceil(psi * mu - 1)`.
    pub fn max_queue(&self, i: usize) -> usize {
        max_queue(self.psi, self.service_rates[i])
    }

    pub fn radius(&self, i: usize, queue: usize) -> f64 {
        radius(self, i, queue)
    }

    /// Arrival and service rates multiplied by `c`; `psi` and the region stay.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            service_rates: self.service_rates.iter().map(|mu| mu * c).collect(),
            areal_rate: self.areal_rate * c,
            ..self.clone()
        }
    }

    pub fn disks(&self, state: &CoverageState) -> Vec<Disk> {
        self.positions
            .iter()
            .zip(&state.radii)
            .map(|(&center, &radius)| Disk { center, radius })
            .collect()
    }
}

pub fn max_queue(psi: f64, mu: f64) -> usize {
    let bound = (psi * mu - 1.0).ceil();
    if bound > 0.0 {
        bound as usize
    } else {
        0
    }
}

/// Serving radius of `server` when it holds `queue` requests.
pub fn radius(layout: &ServerLayout, server: usize, queue: usize) -> f64 {
    let mu = layout.service_rates[server];
    let r = layout.speed_factor * (layout.psi - (queue as f64 + 1.0) / mu);
    r.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageState {
    pub queue_lengths: Vec<usize>,
    pub radii: Vec<f64>,
}

impl CoverageState {
    pub fn new(layout: &ServerLayout, queue_lengths: Vec<usize>) -> Result<Self> {
        if queue_lengths.len() != layout.num_servers() {
            return invalid(format!(
                "{} queue lengths for {} servers",
                queue_lengths.len(),
                layout.num_servers()
            ));
        }
        for (i, &n) in queue_lengths.iter().enumerate() {
            let cap = layout.max_queue(i);
            if n > cap {
                return invalid(format!("server {i} queue {n} exceeds its bound {cap}"));
            }
        }
        let radii = queue_lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| radius(layout, i, n))
            .collect();
        Ok(Self {
            queue_lengths,
            radii,
        })
    }

    pub fn empty(layout: &ServerLayout) -> Self {
        let m = layout.num_servers();
        Self {
            queue_lengths: vec![0; m],
            radii: (0..m).map(|i| radius(layout, i, 0)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Point,
    pub radius: f64,
}

impl Disk {
    pub fn contains(&self, p: Point) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GeometryMode {
    #[default]
    Exact,
    MonteCarlo {
        samples: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaEstimate {
    pub area: f64,
    /// Zero in exact mode.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonRegion {
    /// Participating servers, ascending; always at least two.
    pub servers: Vec<usize>,
    pub rate: f64,
}

impl CommonRegion {
    pub fn mask(&self) -> ServerMask {
        self.servers.iter().fold(0, |m, &i| m | (1 << i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaDecomposition {
    pub exclusive_rates: Vec<f64>,
    /// Ordered by ascending server mask.
    pub common_regions: Vec<CommonRegion>,
    pub total_covered_rate: f64,
    /// Standard error of `total_covered_rate`; zero in exact mode.
    pub std_error: f64,
}

impl AreaDecomposition {
    pub fn partition_sum(&self) -> f64 {
        self.exclusive_rates.iter().sum::<f64>()
            + self.common_regions.iter().map(|z| z.rate).sum::<f64>()
    }
}

/// Jittered stratified sample of a rectangle. The same set can be reused
/// across states so every estimate sees common random numbers.
#[derive(Debug, Clone)]
pub struct SamplePoints {
    region: Rect,
    points: Vec<Point>,
}

impl SamplePoints {
    pub fn stratified(region: Rect, samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return invalid("Monte Carlo mode needs at least one sample");
        }
        let aspect = region.width() / region.height();
        let nx = ((samples as f64 * aspect).sqrt().round() as usize).clamp(1, samples);
        let ny = samples.div_ceil(nx);
        let (cw, ch) = (region.width() / nx as f64, region.height() / ny as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x = region.x_min + (i as f64 + rng.random::<f64>()) * cw;
                let y = region.y_min + (j as f64 + rng.random::<f64>()) * ch;
                points.push([x, y]);
            }
        }
        Ok(Self { region, points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn region(&self) -> Rect {
        self.region
    }

    /// Area represented by each sample.
    pub fn weight(&self) -> f64 {
        self.region.area() / self.points.len() as f64
    }
}

pub fn coverage_mask(disks: &[Disk], p: Point) -> ServerMask {
    disks
        .iter()
        .enumerate()
        .filter(|(_, d)| d.radius > 0.0 && d.contains(p))
        .fold(0, |m, (i, _)| m | (1 << i))
}

/// Area of the union of the coverage disks inside the region.
pub fn union_area(
    layout: &ServerLayout,
    state: &CoverageState,
    mode: GeometryMode,
    seed: u64,
) -> Result<AreaEstimate> {
    let areas = subset_areas(layout, state, mode, seed)?;
    Ok(union_from(&areas, layout.region.area()))
}

/// Splits the covered rate into exclusive and common parts.
pub fn decompose(
    layout: &ServerLayout,
    state: &CoverageState,
    mode: GeometryMode,
    seed: u64,
) -> Result<AreaDecomposition> {
    let areas = subset_areas(layout, state, mode, seed)?;
    Ok(decomposition_from(layout, &areas))
}

/// As [`decompose`], reusing an existing sample set.
pub fn decompose_with_points(
    layout: &ServerLayout,
    state: &CoverageState,
    points: &SamplePoints,
) -> AreaDecomposition {
    let areas = SubsetAreas::sampled(&layout.disks(state), points);
    decomposition_from(layout, &areas)
}

/// Areas of points covered by exactly each server subset.
#[derive(Debug, Clone)]
pub(crate) struct SubsetAreas {
    pub by_mask: BTreeMap<ServerMask, f64>,
    /// Samples used, or `None` when exact.
    pub samples: Option<usize>,
}

impl SubsetAreas {
    pub(crate) fn exact(disks: &[Disk], region: &Rect) -> Self {
        let m = disks.len();
        let full = 1usize << m;
        let mut inter = vec![0.0; full];
        for (t, slot) in inter.iter_mut().enumerate().skip(1) {
            let members: Vec<Disk> = (0..m)
                .filter(|i| t & (1 << i) != 0)
                .map(|i| disks[i])
                .collect();
            *slot = convex_intersection_area(&members, region);
        }
        let floor = 1e-12 * region.area();
        let mut by_mask = BTreeMap::new();
        for s in 1..full {
            let mut acc = 0.0;
            for (t, &area) in inter.iter().enumerate().skip(1) {
                if t & s == s {
                    let extra = (t & !s).count_ones();
                    if extra % 2 == 0 {
                        acc += area;
                    } else {
                        acc -= area;
                    }
                }
            }
            if acc > floor {
                by_mask.insert(s as ServerMask, acc);
            }
        }
        Self {
            by_mask,
            samples: None,
        }
    }

    pub(crate) fn sampled(disks: &[Disk], points: &SamplePoints) -> Self {
        let mut counts: BTreeMap<ServerMask, usize> = BTreeMap::new();
        for &p in points.points() {
            let mask = coverage_mask(disks, p);
            if mask != 0 {
                *counts.entry(mask).or_default() += 1;
            }
        }
        let w = points.weight();
        Self {
            by_mask: counts.into_iter().map(|(k, c)| (k, c as f64 * w)).collect(),
            samples: Some(points.points().len()),
        }
    }
}

pub(crate) fn subset_areas(
    layout: &ServerLayout,
    state: &CoverageState,
    mode: GeometryMode,
    seed: u64,
) -> Result<SubsetAreas> {
    layout.validate()?;
    if state.radii.len() != layout.num_servers() {
        return invalid("coverage state does not match the layout");
    }
    let disks = layout.disks(state);
    match mode {
        GeometryMode::Exact => {
            if disks.len() > MAX_EXACT_SERVERS {
                return Err(Error::UnsupportedMode(disks.len()));
            }
            Ok(SubsetAreas::exact(&disks, &layout.region))
        }
        GeometryMode::MonteCarlo { samples } => {
            let points = SamplePoints::stratified(layout.region, samples, seed)?;
            Ok(SubsetAreas::sampled(&disks, &points))
        }
    }
}

fn binomial_se(area: f64, total: f64, samples: Option<usize>) -> f64 {
    match samples {
        None => 0.0,
        Some(n) => {
            let p = (area / total).clamp(0.0, 1.0);
            total * (p * (1.0 - p) / n as f64).sqrt()
        }
    }
}

fn union_from(areas: &SubsetAreas, total: f64) -> AreaEstimate {
    let area: f64 = areas.by_mask.values().sum();
    AreaEstimate {
        area,
        std_error: binomial_se(area, total, areas.samples),
    }
}

pub(crate) fn decomposition_from(layout: &ServerLayout, areas: &SubsetAreas) -> AreaDecomposition {
    let rate = layout.areal_rate;
    let mut exclusive_rates = vec![0.0; layout.num_servers()];
    let mut common_regions = Vec::new();
    for (&mask, &area) in &areas.by_mask {
        if mask.count_ones() == 1 {
            exclusive_rates[mask.trailing_zeros() as usize] = area * rate;
        } else {
            common_regions.push(CommonRegion {
                servers: (0..64).filter(|i| mask & (1 << i) != 0).collect(),
                rate: area * rate,
            });
        }
    }
    let union = union_from(areas, layout.region.area());
    AreaDecomposition {
        exclusive_rates,
        common_regions,
        total_covered_rate: union.area * rate,
        std_error: union.std_error * rate,
    }
}

fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Area of `region ∩ disks[0] ∩ disks[1] ∩ ...` by integrating
/// `(x dy - y dx) / 2` along the boundary of the (convex) intersection.
pub fn convex_intersection_area(disks: &[Disk], region: &Rect) -> f64 {
    if disks.iter().any(|d| d.radius <= 0.0) {
        return 0.0;
    }
    let mut uniq: Vec<Disk> = Vec::with_capacity(disks.len());
    for d in disks {
        if !uniq
            .iter()
            .any(|u| u.center == d.center && u.radius == d.radius)
        {
            uniq.push(*d);
        }
    }
    let scale = region
        .width()
        .max(region.height())
        .max(uniq.iter().map(|d| d.radius).fold(0.0, f64::max));
    let eps = 1e-12 * scale;

    let inside_disks = |p: Point, skip: Option<usize>| {
        uniq.iter().enumerate().all(|(k, d)| {
            if Some(k) == skip {
                return true;
            }
            let dx = p[0] - d.center[0];
            let dy = p[1] - d.center[1];
            (dx * dx + dy * dy).sqrt() <= d.radius + eps
        })
    };
    let inside_rect = |p: Point| {
        p[0] >= region.x_min - eps
            && p[0] <= region.x_max + eps
            && p[1] >= region.y_min - eps
            && p[1] <= region.y_max + eps
    };

    let mut twice_area = 0.0;

    for (j, d) in uniq.iter().enumerate() {
        let [cx, cy] = d.center;
        let r = d.radius;
        let mut cuts = vec![0.0, TAU];
        for (k, o) in uniq.iter().enumerate() {
            if k == j {
                continue;
            }
            let dx = o.center[0] - cx;
            let dy = o.center[1] - cy;
            let dist = (dx * dx + dy * dy).sqrt();
            if dist == 0.0 || dist > r + o.radius || dist < (r - o.radius).abs() {
                continue;
            }
            let base = dy.atan2(dx);
            let half = ((r * r + dist * dist - o.radius * o.radius) / (2.0 * r * dist))
                .clamp(-1.0, 1.0)
                .acos();
            cuts.push(normalize_angle(base + half));
            cuts.push(normalize_angle(base - half));
        }
        for x in [region.x_min, region.x_max] {
            let c = (x - cx) / r;
            if c.abs() <= 1.0 {
                let a = c.acos();
                cuts.push(normalize_angle(a));
                cuts.push(normalize_angle(-a));
            }
        }
        for y in [region.y_min, region.y_max] {
            let s = (y - cy) / r;
            if s.abs() <= 1.0 {
                let a = s.asin();
                cuts.push(normalize_angle(a));
                cuts.push(normalize_angle(PI - a));
            }
        }
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b - a <= 0.0 {
                continue;
            }
            let mid = 0.5 * (a + b);
            let p = [cx + r * mid.cos(), cy + r * mid.sin()];
            if inside_rect(p) && inside_disks(p, Some(j)) {
                twice_area +=
                    r * r * (b - a) + r * (cx * (b.sin() - a.sin()) - cy * (b.cos() - a.cos()));
            }
        }
    }

    let corners = [
        [region.x_min, region.y_min],
        [region.x_max, region.y_min],
        [region.x_max, region.y_max],
        [region.x_min, region.y_max],
    ];
    for e in 0..4 {
        let p0 = corners[e];
        let p1 = corners[(e + 1) % 4];
        let dir = [p1[0] - p0[0], p1[1] - p0[1]];
        let mut cuts = vec![0.0, 1.0];
        for d in &uniq {
            let fx = p0[0] - d.center[0];
            let fy = p0[1] - d.center[1];
            let qa = dir[0] * dir[0] + dir[1] * dir[1];
            let qb = 2.0 * (fx * dir[0] + fy * dir[1]);
            let qc = fx * fx + fy * fy - d.radius * d.radius;
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                for t in [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)] {
                    if t > 0.0 && t < 1.0 {
                        cuts.push(t);
                    }
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b - a <= 0.0 {
                continue;
            }
            let mid = 0.5 * (a + b);
            let pm = [p0[0] + mid * dir[0], p0[1] + mid * dir[1]];
            if inside_disks(pm, None) {
                let qa = [p0[0] + a * dir[0], p0[1] + a * dir[1]];
                let qb = [p0[0] + b * dir[0], p0[1] + b * dir[1]];
                twice_area += qa[0] * qb[1] - qa[1] * qb[0];
            }
        }
    }

    (0.5 * twice_area).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Lens area of two disks of radius `r` with centres `d` apart.
    fn lens(r: f64, d: f64) -> f64 {
        2.0 * r * r * (d / (2.0 * r)).acos() - 0.5 * d * (4.0 * r * r - d * d).sqrt()
    }

    fn layout(positions: Vec<Point>, mu: Vec<f64>, psi: f64, half: f64) -> ServerLayout {
        ServerLayout {
            positions,
            service_rates: mu,
            psi,
            region: Rect::centered(half),
            areal_rate: 1.0,
            speed_factor: 1.0,
        }
    }

    #[test]
    fn radius_formula() {
        let l = layout(vec![[0.0, 0.0]], vec![1.0], 1000.0, 2000.0);
        assert_abs_diff_eq!(radius(&l, 0, 0), 999.0);
        let l = layout(vec![[0.0, 0.0]], vec![1.0], 1.0, 10.0);
        assert_eq!(radius(&l, 0, 0), 0.0);
        let l = layout(vec![[0.0, 0.0]], vec![2.0], 10.0, 10.0);
        assert_eq!(l.max_queue(0), 19);
        assert_eq!(radius(&l, 0, 19), 0.0);
        assert!(radius(&l, 0, 18) > 0.0);
    }

    #[test]
    fn state_enforces_queue_bound() {
        let l = layout(vec![[0.0, 0.0]], vec![2.0], 10.0, 10.0);
        assert!(CoverageState::new(&l, vec![19]).is_ok());
        assert!(CoverageState::new(&l, vec![20]).is_err());
    }

    #[test]
    fn single_disk_inside_region() {
        let d = Disk {
            center: [1.0, -2.0],
            radius: 3.0,
        };
        let a = convex_intersection_area(&[d], &Rect::centered(10.0));
        assert_abs_diff_eq!(a, PI * 9.0, epsilon = 1e-12);
    }

    #[test]
    fn disk_clipped_by_region() {
        // Centred on an edge: half the disk survives.
        let d = Disk {
            center: [10.0, 0.0],
            radius: 2.0,
        };
        let a = convex_intersection_area(&[d], &Rect::centered(10.0));
        assert_abs_diff_eq!(a, 2.0 * PI, epsilon = 1e-12);
        // Centred on a corner: a quarter.
        let d = Disk {
            center: [10.0, 10.0],
            radius: 2.0,
        };
        let a = convex_intersection_area(&[d], &Rect::centered(10.0));
        assert_abs_diff_eq!(a, PI, epsilon = 1e-12);
        // Disk swallowing the region.
        let d = Disk {
            center: [0.0, 0.0],
            radius: 100.0,
        };
        let a = convex_intersection_area(&[d], &Rect::centered(1.0));
        assert_abs_diff_eq!(a, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn lens_area() {
        let a = Disk {
            center: [0.0, 0.0],
            radius: 1.0,
        };
        let b = Disk {
            center: [1.0, 0.0],
            radius: 1.0,
        };
        let area = convex_intersection_area(&[a, b], &Rect::centered(5.0));
        assert_abs_diff_eq!(area, lens(1.0, 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(area, 1.228370, epsilon = 1e-6);
    }

    #[test]
    fn union_cases() {
        let l = layout(vec![[0.0, 0.0], [1.0, 0.0]], vec![1.0, 1.0], 2.0, 5.0);
        let s = CoverageState::empty(&l);
        let u = union_area(&l, &s, GeometryMode::Exact, 0).unwrap();
        assert_abs_diff_eq!(u.area, 2.0 * PI - lens(1.0, 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(u.area, 5.054816, epsilon = 1e-6);

        let l = layout(vec![[0.0, 0.0], [0.0, 0.0]], vec![1.0, 1.0], 2.0, 5.0);
        let s = CoverageState::empty(&l);
        let u = union_area(&l, &s, GeometryMode::Exact, 0).unwrap();
        assert_abs_diff_eq!(u.area, PI, epsilon = 1e-12);
        let d = decompose(&l, &s, GeometryMode::Exact, 0).unwrap();
        assert_eq!(d.common_regions.len(), 1);
        assert_eq!(d.exclusive_rates, vec![0.0, 0.0]);
    }

    #[test]
    fn disjoint_disks_have_no_common_region() {
        let l = layout(vec![[-3.0, 0.0], [3.0, 0.0]], vec![1.0, 1.0], 2.0, 5.0);
        let d = decompose(&l, &CoverageState::empty(&l), GeometryMode::Exact, 0).unwrap();
        assert!(d.common_regions.is_empty());
        assert_abs_diff_eq!(d.exclusive_rates[0], PI, epsilon = 1e-12);
        assert_abs_diff_eq!(d.exclusive_rates[1], PI, epsilon = 1e-12);
    }

    #[test]
    fn lens_rate() {
        let mut l = layout(vec![[0.0, 0.0], [1.0, 0.0]], vec![1.0, 1.0], 2.0, 5.0);
        l.areal_rate = 0.3;
        let d = decompose(&l, &CoverageState::empty(&l), GeometryMode::Exact, 0).unwrap();
        assert_eq!(d.common_regions.len(), 1);
        assert_eq!(d.common_regions[0].servers, vec![0, 1]);
        assert_abs_diff_eq!(
            d.common_regions[0].rate,
            lens(1.0, 1.0) * 0.3,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(d.partition_sum(), d.total_covered_rate, epsilon = 1e-12);
    }

    fn three_server() -> ServerLayout {
        layout(
            vec![[0.0, 0.0], [1.2, 0.0], [0.6, 1.0]],
            vec![1.0, 1.0, 1.0],
            2.0,
            4.0,
        )
    }

    #[test]
    fn three_server_regions() {
        let l = three_server();
        let d = decompose(&l, &CoverageState::empty(&l), GeometryMode::Exact, 0).unwrap();
        let subsets: Vec<Vec<usize>> = d.common_regions.iter().map(|z| z.servers.clone()).collect();
        assert_eq!(
            subsets,
            vec![vec![0, 1], vec![0, 2], vec![1, 2], vec![0, 1, 2]]
        );
        assert!(d.exclusive_rates.iter().all(|&x| x > 0.0));
        assert!((d.partition_sum() - d.total_covered_rate).abs() <= 1e-9 * d.total_covered_rate);
    }

    #[test]
    fn monte_carlo_matches_exact() {
        let l = three_server();
        let s = CoverageState::new(&l, vec![0, 0, 0]).unwrap();
        let exact = decompose(&l, &s, GeometryMode::Exact, 0).unwrap();
        let mc = decompose(&l, &s, GeometryMode::MonteCarlo { samples: 200_000 }, 7).unwrap();
        let total = l.region.area() * l.areal_rate;
        let se = |rate: f64| total * ((rate / total) * (1.0 - rate / total) / 200_000.0).sqrt();
        for (a, b) in exact.exclusive_rates.iter().zip(&mc.exclusive_rates) {
            assert!((a - b).abs() <= 3.0 * se(*a), "{a} vs {b}");
        }
        for (a, b) in exact.common_regions.iter().zip(&mc.common_regions) {
            assert_eq!(a.servers, b.servers);
            assert!(
                (a.rate - b.rate).abs() <= 3.0 * se(a.rate),
                "{a:?} vs {b:?}"
            );
        }
        assert!((exact.total_covered_rate - mc.total_covered_rate).abs() <= 3.0 * mc.std_error);
        assert!((mc.partition_sum() - mc.total_covered_rate).abs() < 1e-9);
    }

    #[test]
    fn exact_mode_limits_servers() {
        let l = layout(vec![[0.0, 0.0]; 4], vec![1.0; 4], 2.0, 4.0);
        let s = CoverageState::empty(&l);
        assert!(matches!(
            union_area(&l, &s, GeometryMode::Exact, 0),
            Err(Error::UnsupportedMode(4))
        ));
        assert!(union_area(&l, &s, GeometryMode::MonteCarlo { samples: 1000 }, 0).is_ok());
    }

    #[test]
    fn growing_a_queue_shrinks_everything() {
        let l = three_server();
        let base = decompose(
            &l,
            &CoverageState::new(&l, vec![0, 0, 0]).unwrap(),
            GeometryMode::Exact,
            0,
        )
        .unwrap();
        let more = decompose(
            &l,
            &CoverageState::new(&l, vec![0, 1, 0]).unwrap(),
            GeometryMode::Exact,
            0,
        )
        .unwrap();
        assert!(more.total_covered_rate <= base.total_covered_rate);
        assert!(more.exclusive_rates[1] <= base.exclusive_rates[1]);
        // Regions involving the loaded server can only shrink or vanish; the
        // others may absorb area it gave up.
        for z in more
            .common_regions
            .iter()
            .filter(|z| z.servers.contains(&1))
        {
            let before = base
                .common_regions
                .iter()
                .find(|b| b.servers == z.servers)
                .unwrap();
            assert!(z.rate <= before.rate + 1e-12);
        }
        assert!(more.exclusive_rates[0] >= base.exclusive_rates[0]);
    }

    #[test]
    fn stratified_sample_is_deterministic() {
        let a = SamplePoints::stratified(Rect::centered(1.0), 1000, 3).unwrap();
        let b = SamplePoints::stratified(Rect::centered(1.0), 1000, 3).unwrap();
        assert_eq!(a.points(), b.points());
        assert!(a.points().iter().all(|&p| Rect::centered(1.0).contains(p)));
    }
}
