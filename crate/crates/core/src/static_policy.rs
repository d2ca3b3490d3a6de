//! Static routing plan: every user location is bound to one server (or the
//! origin) regardless of queue state.
//!
//! Stage 1 maximizes the rate served at the empty state. Stage 2 keeps that
//! rate and balances utilization `lambda_i(0) / mu_i` inside each common
//! region. [`materialize`] then turns the split fractions into concrete
//! geometric slices.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus,
};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::coverage::{
    coverage_mask, decompose, AreaDecomposition, CoverageState, GeometryMode, Point, SamplePoints,
    ServerLayout, ServerMask,
};
use crate::error::{invalid, Error, Result};
use crate::queueing::{ArrivalModel, BirthDeathChain};

/// Allowed loss of the stage-1 objective after stage 2.
pub const GAMMA_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSplit {
    pub servers: Vec<usize>,
    pub rate: f64,
    /// `P_iz` for each entry of `servers`; the remainder goes to the origin.
    pub fractions: Vec<f64>,
}

impl RegionSplit {
    pub fn mask(&self) -> ServerMask {
        self.servers.iter().fold(0, |m, &i| m | (1 << i))
    }

    pub fn fraction_of(&self, server: usize) -> f64 {
        self.servers
            .iter()
            .position(|&s| s == server)
            .map_or(0.0, |k| self.fractions[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentPlan {
    /// `I_i`: share of server `i`'s assigned traffic it accepts.
    pub admit_fractions: Vec<f64>,
    pub splits: Vec<RegionSplit>,
    /// `lambda_i(0)` under the split.
    pub server_rates: Vec<f64>,
    pub service_rates: Vec<f64>,
    pub exclusive_rates: Vec<f64>,
    pub gamma: f64,
    pub variance: f64,
    /// False when the load-balancing stage lost more than
    /// [`GAMMA_TOLERANCE`] of the stage-1 objective.
    pub certified: bool,
}

impl AssignmentPlan {
    /// Empty-state rate sent to the origin, either unassigned or refused.
    pub fn origin_rate(&self) -> f64 {
        let refused: f64 = self
            .admit_fractions
            .iter()
            .zip(&self.server_rates)
            .map(|(i, l)| (1.0 - i) * l)
            .sum();
        let unassigned: f64 = self
            .splits
            .iter()
            .map(|z| z.rate * (1.0 - z.fractions.iter().sum::<f64>()).max(0.0))
            .sum();
        refused + unassigned
    }

    fn from_splits(
        decomp: &AreaDecomposition,
        mu: &[f64],
        splits: Vec<RegionSplit>,
        gamma: f64,
    ) -> Self {
        let server_rates = server_rates(decomp, &splits);
        let admit_fractions = server_rates
            .iter()
            .zip(mu)
            .map(|(&l, &m)| if l <= m { 1.0 } else { m / l })
            .collect();
        let variance = split_variance(&splits, &server_rates, mu);
        Self {
            admit_fractions,
            splits,
            server_rates,
            service_rates: mu.to_vec(),
            exclusive_rates: decomp.exclusive_rates.clone(),
            gamma,
            variance,
            certified: true,
        }
    }

    /// `sum_i min(lambda_i(0), mu_i)` for the current split.
    pub fn achieved_gamma(&self) -> f64 {
        self.server_rates
            .iter()
            .zip(&self.service_rates)
            .map(|(l, m)| l.min(*m))
            .sum()
    }
}

fn server_rates(decomp: &AreaDecomposition, splits: &[RegionSplit]) -> Vec<f64> {
    let mut rates = decomp.exclusive_rates.clone();
    for z in splits {
        for (&i, p) in z.servers.iter().zip(&z.fractions) {
            rates[i] += p * z.rate;
        }
    }
    rates
}

/// Sum over regions of the population variance of participant utilizations.
fn split_variance(splits: &[RegionSplit], rates: &[f64], mu: &[f64]) -> f64 {
    splits
        .iter()
        .map(|z| {
            let u: Vec<f64> = z.servers.iter().map(|&i| rates[i] / mu[i]).collect();
            let mean = u.iter().sum::<f64>() / u.len() as f64;
            u.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / u.len() as f64
        })
        .sum()
}

fn check_inputs(decomp: &AreaDecomposition, mu: &[f64]) -> Result<()> {
    let m = decomp.exclusive_rates.len();
    if mu.len() != m {
        return invalid(format!("{m} servers but {} service rates", mu.len()));
    }
    if mu.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return invalid("service rates must be positive");
    }
    if decomp.exclusive_rates.iter().any(|x| !(*x >= 0.0)) {
        return invalid("exclusive rates must be non-negative");
    }
    for z in &decomp.common_regions {
        if !(z.rate >= 0.0) {
            return invalid("common-region rates must be non-negative");
        }
        if z.servers.iter().any(|&i| i >= m) {
            return invalid("common region references an unknown server");
        }
    }
    Ok(())
}

/// Maximizes the empty-state served rate. Returns `gamma` and a plan that
/// attains it.
pub fn solve_stage1(decomp: &AreaDecomposition, mu: &[f64]) -> Result<(f64, AssignmentPlan)> {
    check_inputs(decomp, mu)?;
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let served: Vec<_> = mu.iter().map(|&cap| lp.add_var(1.0, (0.0, cap))).collect();
    let shares: Vec<Vec<_>> = decomp
        .common_regions
        .iter()
        .map(|z| {
            z.servers
                .iter()
                .map(|_| lp.add_var(0.0, (0.0, 1.0)))
                .collect()
        })
        .collect();

    for vars in &shares {
        let expr: Vec<_> = vars.iter().map(|&v| (v, 1.0)).collect();
        lp.add_constraint(expr.as_slice(), ComparisonOp::Le, 1.0);
    }
    for (i, &s_i) in served.iter().enumerate() {
        // s_i - sum_z phi_z P_iz <= Phi_i
        let mut expr = vec![(s_i, 1.0)];
        for (z, vars) in decomp.common_regions.iter().zip(&shares) {
            if let Some(k) = z.servers.iter().position(|&s| s == i) {
                expr.push((vars[k], -z.rate));
            }
        }
        lp.add_constraint(expr.as_slice(), ComparisonOp::Le, decomp.exclusive_rates[i]);
    }

    let solution = lp
        .solve()
        .map_err(|e| Error::Solver(format!("stage 1 linear program: {e}")))?;
    let splits = decomp
        .common_regions
        .iter()
        .zip(&shares)
        .map(|(z, vars)| RegionSplit {
            servers: z.servers.clone(),
            rate: z.rate,
            fractions: clean_fractions(vars.iter().map(|&v| solution[v]).collect()),
        })
        .collect();
    let mut plan = AssignmentPlan::from_splits(decomp, mu, splits, 0.0);
    plan.gamma = plan.achieved_gamma();
    Ok((plan.gamma, plan))
}

fn clean_fractions(mut p: Vec<f64>) -> Vec<f64> {
    for x in &mut p {
        *x = x.clamp(0.0, 1.0);
    }
    let total: f64 = p.iter().sum();
    if total > 1.0 {
        for x in &mut p {
            *x /= total;
        }
    }
    p
}

/// Among plans serving `gamma`, minimizes the summed per-region variance of
/// participant utilizations.
pub fn solve_stage2(decomp: &AreaDecomposition, mu: &[f64], gamma: f64) -> Result<AssignmentPlan> {
    check_inputs(decomp, mu)?;
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return invalid(format!(
            "gamma must be finite and non-negative, got {gamma}"
        ));
    }
    let m = mu.len();
    let regions = &decomp.common_regions;
    if regions.is_empty() {
        let plan = AssignmentPlan::from_splits(decomp, mu, Vec::new(), gamma);
        return Ok(certify(plan, gamma));
    }

    // Variables: one P_iz per (region, participant), then s_0..s_{m-1}.
    let mut offsets = Vec::with_capacity(regions.len());
    let mut nvar = 0;
    for z in regions {
        offsets.push(nvar);
        nvar += z.servers.len();
    }
    let s0 = nvar;
    nvar += m;

    // Utilization u_i = h_i + g_i . x.
    let mut g = vec![vec![0.0; nvar]; m];
    let h: Vec<f64> = (0..m).map(|i| decomp.exclusive_rates[i] / mu[i]).collect();
    for (zi, z) in regions.iter().enumerate() {
        for (k, &i) in z.servers.iter().enumerate() {
            g[i][offsets[zi] + k] = z.rate / mu[i];
        }
    }

    // Residuals (u_i - mean_z u) / sqrt(|z|) stacked as M x + c.
    let mut mrows = Vec::new();
    let mut crow = Vec::new();
    for z in regions {
        let size = z.servers.len() as f64;
        let scale = 1.0 / size.sqrt();
        for &i in &z.servers {
            let mut row = vec![0.0; nvar];
            let mut c = h[i];
            for (v, r) in row.iter_mut().enumerate() {
                *r = g[i][v];
            }
            for &j in &z.servers {
                for (v, r) in row.iter_mut().enumerate() {
                    *r -= g[j][v] / size;
                }
                c -= h[j] / size;
            }
            mrows.push(row.iter().map(|x| x * scale).collect::<Vec<_>>());
            crow.push(c * scale);
        }
    }
    let mut p_dense = vec![vec![0.0; nvar]; nvar];
    let mut q = vec![0.0; nvar];
    for (row, c) in mrows.iter().zip(&crow) {
        for a in 0..nvar {
            if row[a] == 0.0 {
                continue;
            }
            q[a] += 2.0 * row[a] * c;
            for b in a..nvar {
                p_dense[a][b] += 2.0 * row[a] * row[b];
            }
        }
    }

    // Constraints as A x <= b.
    let mut a_rows: Vec<Vec<f64>> = Vec::new();
    let mut b = Vec::new();
    for v in 0..nvar {
        let mut row = vec![0.0; nvar];
        row[v] = -1.0;
        a_rows.push(row);
        b.push(0.0);
    }
    for (zi, z) in regions.iter().enumerate() {
        let mut row = vec![0.0; nvar];
        for k in 0..z.servers.len() {
            row[offsets[zi] + k] = 1.0;
        }
        a_rows.push(row);
        b.push(1.0);
    }
    for i in 0..m {
        let mut row: Vec<f64> = g[i].iter().map(|x| -x * mu[i]).collect();
        row[s0 + i] = 1.0;
        a_rows.push(row);
        b.push(decomp.exclusive_rates[i]);

        let mut cap = vec![0.0; nvar];
        cap[s0 + i] = 1.0;
        a_rows.push(cap);
        b.push(mu[i]);
    }
    let mut keep = vec![0.0; nvar];
    for v in keep.iter_mut().skip(s0) {
        *v = -1.0;
    }
    a_rows.push(keep);
    b.push(-(gamma - 0.1 * GAMMA_TOLERANCE * gamma.max(1.0)));

    let p_mat = CscMatrix::from(&p_dense);
    let a_mat = CscMatrix::from(&a_rows);
    let cones = [NonnegativeConeT(b.len())];
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-12)
        .tol_gap_rel(1e-12)
        .tol_feas(1e-12)
        .build()
        .map_err(|e| Error::Solver(format!("stage 2 settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&p_mat, &q, &a_mat, &b, &cones, settings)
        .map_err(|e| Error::Solver(format!("stage 2 setup: {e:?}")))?;
    solver.solve();
    let status = solver.solution.status;
    if !matches!(status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
        return Err(Error::Solver(format!(
            "stage 2 quadratic program: {status:?}"
        )));
    }
    let x = &solver.solution.x;
    let splits = regions
        .iter()
        .enumerate()
        .map(|(zi, z)| RegionSplit {
            servers: z.servers.clone(),
            rate: z.rate,
            fractions: clean_fractions((0..z.servers.len()).map(|k| x[offsets[zi] + k]).collect()),
        })
        .collect();
    let plan = AssignmentPlan::from_splits(decomp, mu, splits, gamma);
    Ok(certify(plan, gamma))
}

fn certify(mut plan: AssignmentPlan, gamma: f64) -> AssignmentPlan {
    plan.certified = (plan.achieved_gamma() - gamma).abs() <= GAMMA_TOLERANCE;
    plan
}

/// Both stages in sequence.
pub fn solve(decomp: &AreaDecomposition, mu: &[f64]) -> Result<AssignmentPlan> {
    let (gamma, _) = solve_stage1(decomp, mu)?;
    solve_stage2(decomp, mu, gamma)
}

/// Decomposes `layout` at the empty state, solves both stages and cuts the
/// regions with a fresh sample of `samples` points.
pub fn plan_layout(
    layout: &ServerLayout,
    mode: GeometryMode,
    samples: usize,
    seed: u64,
) -> Result<(AssignmentPlan, RegionAssignment)> {
    let decomp = decompose(layout, &CoverageState::empty(layout), mode, seed)?;
    let plan = solve(&decomp, &layout.service_rates)?;
    let points = SamplePoints::stratified(layout.region, samples, seed)?;
    let assignment = materialize(&plan, layout, &points)?;
    Ok((plan, assignment))
}

/// Slices of one common region, cut by parallel chords.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCut {
    pub servers: Vec<usize>,
    pub anchor: Point,
    /// Unit vector; slices are ordered along it.
    pub direction: Point,
    /// `servers[k]` takes points with `t` in `[bounds[k-1], bounds[k])`,
    /// where `t` is the projection on `direction` relative to `anchor`.
    /// Points beyond the last bound go to the origin.
    pub bounds: Vec<f64>,
}

impl RegionCut {
    pub fn mask(&self) -> ServerMask {
        self.servers.iter().fold(0, |m, &i| m | (1 << i))
    }

    fn project(&self, p: Point) -> f64 {
        (p[0] - self.anchor[0]) * self.direction[0] + (p[1] - self.anchor[1]) * self.direction[1]
    }

    pub fn server_for(&self, p: Point) -> Option<usize> {
        let t = self.project(p);
        self.bounds
            .iter()
            .position(|&b| t < b)
            .map(|k| self.servers[k])
    }
}

/// Location-to-server map of a static plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAssignment {
    pub positions: Vec<Point>,
    /// Empty-state serving radii that define the regions.
    pub radii: Vec<f64>,
    pub admit_fractions: Vec<f64>,
    pub cuts: Vec<RegionCut>,
}

impl RegionAssignment {
    /// Server responsible for location `p`, or `None` when it belongs to
    /// the origin.
    pub fn server_for(&self, p: Point) -> Option<usize> {
        let mask = self
            .positions
            .iter()
            .zip(&self.radii)
            .enumerate()
            .filter(|(_, (c, r))| **r > 0.0 && (p[0] - c[0]).hypot(p[1] - c[1]) <= **r)
            .fold(0u64, |m, (i, _)| m | (1 << i));
        match mask.count_ones() {
            0 => None,
            1 => Some(mask.trailing_zeros() as usize),
            _ => self
                .cuts
                .iter()
                .find(|c| c.mask() == mask)
                .and_then(|c| c.server_for(p)),
        }
    }
}

/// Cuts every common region into slices whose sampled rates match the plan.
pub fn materialize(
    plan: &AssignmentPlan,
    layout: &ServerLayout,
    points: &SamplePoints,
) -> Result<RegionAssignment> {
    layout.validate()?;
    let empty = CoverageState::empty(layout);
    let disks = layout.disks(&empty);
    let mut cuts = Vec::with_capacity(plan.splits.len());
    for split in &plan.splits {
        if split.servers.len() < 2 {
            return invalid("a common region needs at least two servers");
        }
        let first = layout.positions[split.servers[0]];
        let others = &split.servers[1..];
        let mut target = [0.0, 0.0];
        for &i in others {
            target[0] += layout.positions[i][0] / others.len() as f64;
            target[1] += layout.positions[i][1] / others.len() as f64;
        }
        let (dx, dy) = (target[0] - first[0], target[1] - first[1]);
        let norm = dx.hypot(dy);
        let direction = if norm > 0.0 {
            [dx / norm, dy / norm]
        } else {
            [1.0, 0.0]
        };
        let mut cut = RegionCut {
            servers: split.servers.clone(),
            anchor: first,
            direction,
            bounds: Vec::new(),
        };
        let mask = split.mask();
        let mut ts: Vec<f64> = points
            .points()
            .iter()
            .filter(|p| coverage_mask(&disks, **p) == mask)
            .map(|p| cut.project(*p))
            .collect();
        ts.sort_by(f64::total_cmp);
        let mut cumulative = 0.0;
        for &f in &split.fractions {
            cumulative += f;
            cut.bounds.push(quantile_bound(&ts, cumulative));
        }
        cuts.push(cut);
    }
    Ok(RegionAssignment {
        positions: layout.positions.clone(),
        radii: disks.iter().map(|d| d.radius).collect(),
        admit_fractions: plan.admit_fractions.clone(),
        cuts,
    })
}

/// Cut position below which a fraction `q` of the sorted values falls.
/// Open ends use `±f64::MAX`, which JSON can carry.
fn quantile_bound(sorted: &[f64], q: f64) -> f64 {
    if q >= 1.0 - 1e-12 {
        return f64::MAX;
    }
    if q <= 0.0 || sorted.is_empty() {
        return -f64::MAX;
    }
    let k = (q * sorted.len() as f64).round() as usize;
    if k == 0 {
        -f64::MAX
    } else if k >= sorted.len() {
        f64::MAX
    } else {
        0.5 * (sorted[k - 1] + sorted[k])
    }
}

/// Birth-death chain of each server when it receives exactly the locations
/// assigned to it, thinned by its admit fraction and limited to its current
/// serving radius.
pub fn server_chains(
    layout: &ServerLayout,
    assignment: &RegionAssignment,
    points: &SamplePoints,
) -> Result<Vec<BirthDeathChain>> {
    layout.validate()?;
    let m = layout.num_servers();
    let mut distances = vec![Vec::new(); m];
    for &p in points.points() {
        if let Some(i) = assignment.server_for(p) {
            let c = layout.positions[i];
            distances[i].push((p[0] - c[0]).hypot(p[1] - c[1]));
        }
    }
    let unit = layout.areal_rate * points.weight();
    (0..m)
        .map(|i| {
            let d = &mut distances[i];
            d.sort_by(f64::total_cmp);
            let admit = assignment.admit_fractions[i];
            let rates = (0..=layout.max_queue(i))
                .map(|n| {
                    let r = layout.radius(i, n);
                    let inside = d.partition_point(|x| *x <= r);
                    admit * unit * inside as f64
                })
                .collect();
            BirthDeathChain::new(
                layout.service_rates[i],
                layout.psi,
                ArrivalModel::Table { rates },
            )
        })
        .collect()
}

/// Long-run served rate of the static plan, from the per-server chains.
pub fn static_throughput(
    layout: &ServerLayout,
    assignment: &RegionAssignment,
    points: &SamplePoints,
) -> Result<f64> {
    Ok(server_chains(layout, assignment, points)?
        .iter()
        .map(BirthDeathChain::throughput)
        .sum())
}
