#![allow(dead_code)]

use std::collections::VecDeque;

use cdnsla_core::coverage::{AreaDecomposition, Rect, ServerLayout};

/// One server whose empty-state disk is the inscribed circle of the region,
/// so its arrival rate is `lambda0 * (r(n) / r(0))^2`.
pub fn single_server(lambda0: f64, mu: f64, psi: f64) -> ServerLayout {
    let r0 = psi - 1.0 / mu;
    ServerLayout {
        positions: vec![[0.0, 0.0]],
        service_rates: vec![mu],
        psi,
        region: Rect::centered(r0),
        areal_rate: lambda0 / (std::f64::consts::PI * r0 * r0),
        speed_factor: 1.0,
    }
}

/// Best served rate of a decomposition as a max flow from regions through
/// participating servers into capacities `mu`.
pub fn max_flow(d: &AreaDecomposition, mu: &[f64]) -> f64 {
    let m = mu.len();
    let regions: Vec<(Vec<usize>, f64)> = (0..m)
        .map(|i| (vec![i], d.exclusive_rates[i]))
        .chain(d.common_regions.iter().map(|z| (z.servers.clone(), z.rate)))
        .collect();
    let r = regions.len();
    let n = 2 + r + m;
    let (src, sink) = (0, n - 1);
    let mut cap = vec![vec![0.0; n]; n];
    for (k, (servers, rate)) in regions.iter().enumerate() {
        cap[src][1 + k] = *rate;
        for &i in servers {
            cap[1 + k][1 + r + i] = f64::INFINITY;
        }
    }
    for i in 0..m {
        cap[1 + r + i][sink] = mu[i];
    }
    let mut flow = 0.0;
    loop {
        let mut prev = vec![usize::MAX; n];
        prev[src] = src;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if prev[v] == usize::MAX && cap[u][v] > 1e-15 {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if prev[sink] == usize::MAX {
            return flow;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != src {
            push = push.min(cap[prev[v]][v]);
            v = prev[v];
        }
        let mut v = sink;
        while v != src {
            let u = prev[v];
            cap[u][v] -= push;
            cap[v][u] += push;
            v = u;
        }
        flow += push;
    }
}
