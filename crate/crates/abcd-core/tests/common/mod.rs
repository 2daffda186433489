//! Independent oracles shared by the integration suites. Everything here is
//! deliberately brute force and written against the definitions, not the
//! library internals it checks.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Visits all `n!` orderings of `0..n` (Heap's algorithm); the slice passed
/// to `f` maps node -> time position.
pub fn for_each_permutation<F: FnMut(&[usize])>(n: usize, mut f: F) {
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&a);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Exhaustive permutation-null moments of the within-sample edge counts and
/// their weighted / difference combinations at split `t`.
///
/// All accumulation is integer-exact: `(n-2) * r_w(t)` is the integer
/// `(n-1-t) r1 + (t-1) r2`, so the only rounding happens in the final
/// divisions.
pub struct EnumeratedMoments {
    pub e_r1: f64,
    pub e_r2: f64,
    pub var_r1: f64,
    pub var_r2: f64,
    pub cov_r1_r2: f64,
    pub e_rw: f64,
    pub var_rw: f64,
    pub e_rdiff: f64,
    pub var_rdiff: f64,
}

pub fn enumerated_moments(n: usize, edges: &[(usize, usize)], t: usize) -> EnumeratedMoments {
    assert!((1..n).contains(&t));
    let mut count: u64 = 0;
    let mut s1: u64 = 0;
    let mut s1_sq: u64 = 0;
    let mut s2: u64 = 0;
    let mut s2_sq: u64 = 0;
    let mut s12: u64 = 0;
    let mut sw: u64 = 0; // sum of (n-2) * r_w
    let mut sw_sq: u64 = 0;
    let mut sd: i64 = 0; // sum of r1 - r2
    let mut sd_sq: u64 = 0;
    let wq = (n - 1 - t) as u64;
    let wp = (t - 1) as u64;
    for_each_permutation(n, |pos| {
        let mut r1: u64 = 0;
        let mut r2: u64 = 0;
        for &(a, b) in edges {
            let (pa, pb) = (pos[a], pos[b]);
            if pa < t && pb < t {
                r1 += 1;
            }
            if pa >= t && pb >= t {
                r2 += 1;
            }
        }
        count += 1;
        s1 += r1;
        s1_sq += r1 * r1;
        s2 += r2;
        s2_sq += r2 * r2;
        s12 += r1 * r2;
        let w = wq * r1 + wp * r2;
        sw += w;
        sw_sq += w * w;
        let diff = r1 as i64 - r2 as i64;
        sd += diff;
        sd_sq += (diff * diff) as u64;
    });
    let cf = count as f64;
    let scale = (n - 2) as f64;
    let e_r1 = s1 as f64 / cf;
    let e_r2 = s2 as f64 / cf;
    let e_rw = sw as f64 / cf / scale;
    let e_rdiff = sd as f64 / cf;
    EnumeratedMoments {
        e_r1,
        e_r2,
        var_r1: s1_sq as f64 / cf - e_r1 * e_r1,
        var_r2: s2_sq as f64 / cf - e_r2 * e_r2,
        cov_r1_r2: s12 as f64 / cf - e_r1 * e_r2,
        e_rw,
        var_rw: sw_sq as f64 / cf / (scale * scale) - e_rw * e_rw,
        e_rdiff,
        var_rdiff: sd_sq as f64 / cf - e_rdiff * e_rdiff,
    }
}

/// Uniform random simple graph on `n` nodes with edge probability `p`.
pub fn random_graph_edges(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Minimum spanning-tree weight by enumerating every (n-1)-edge subset of
/// the complete graph and keeping the cheapest one that spans.
pub fn exhaustive_min_spanning_weight(dist: &[Vec<f64>]) -> f64 {
    let n = dist.len();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push((i, j));
        }
    }
    let mut best = f64::INFINITY;
    let k = n - 1;
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        let edges: Vec<(usize, usize)> = pick.iter().map(|&i| pairs[i]).collect();
        if spans(n, &edges) {
            let w: f64 = edges.iter().map(|&(a, b)| dist[a][b]).sum();
            best = best.min(w);
        }
        // next k-combination of pairs
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] != i + pairs.len() - k {
                pick[i] += 1;
                for j in (i + 1)..k {
                    pick[j] = pick[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Cheapest spanning forest avoiding `forbidden` edges, by enumeration.
/// Returns `(forest_edge_count, min_weight)`: the forest must connect as
/// much as the surviving edge set allows (a spanning tree when it stays
/// connected).
pub fn exhaustive_min_forest_avoiding(
    dist: &[Vec<f64>],
    forbidden: &[(usize, usize)],
) -> (usize, f64) {
    let n = dist.len();
    let banned: Vec<(usize, usize)> = forbidden
        .iter()
        .map(|&(a, b)| (a.min(b), a.max(b)))
        .collect();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if !banned.contains(&(i, j)) {
                pairs.push((i, j));
            }
        }
    }
    let target_components = component_count(n, &pairs);
    let k = n - target_components;
    if k == 0 {
        return (0, 0.0);
    }
    let mut pick: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    loop {
        let edges: Vec<(usize, usize)> = pick.iter().map(|&i| pairs[i]).collect();
        if component_count(n, &edges) == target_components {
            let w: f64 = edges.iter().map(|&(a, b)| dist[a][b]).sum();
            best = best.min(w);
        }
        let mut i = k;
        loop {
            if i == 0 {
                return (k, best);
            }
            i -= 1;
            if pick[i] != i + pairs.len() - k {
                pick[i] += 1;
                for j in (i + 1)..k {
                    pick[j] = pick[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Number of connected components induced by `edges` on `n` nodes.
pub fn component_count(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        root
    }
    let mut components = n;
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    components
}

/// True when the complete graph on `n` nodes minus `forbidden` is connected.
pub fn connected_excluding(n: usize, forbidden: &[(usize, usize)]) -> bool {
    let banned: Vec<(usize, usize)> = forbidden
        .iter()
        .map(|&(a, b)| (a.min(b), a.max(b)))
        .collect();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if !banned.contains(&(i, j)) {
                pairs.push((i, j));
            }
        }
    }
    component_count(n, &pairs) == 1
}

fn spans(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    let mut components = n;
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    components == 1
}

/// Plain double-loop distances, kept separate from the library's version.
pub fn naive_l2(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..rows[i].len() {
                let diff = rows[i][k] - rows[j][k];
                acc += diff * diff;
            }
            out[i][j] = acc.sqrt();
        }
    }
    out
}

/// Ridge-penalized logistic regression by gradient ascent with backtracking;
/// a slow convex-optimizer reference for the IRLS fit (intercept
/// unpenalized, matching the model).
pub fn gd_ridge_logistic(xs: &[Vec<f64>], ys: &[u8], ridge: f64) -> Vec<f64> {
    let p = xs[0].len();
    let objective = |beta: &[f64]| -> f64 {
        let mut ll = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            // log-likelihood term: y*eta - log(1 + exp(eta)), stable form
            let log1pe = if eta > 0.0 {
                eta + (-eta).exp().ln_1p()
            } else {
                eta.exp().ln_1p()
            };
            ll += y as f64 * eta - log1pe;
        }
        for b in beta.iter().skip(1) {
            ll -= 0.5 * ridge * b * b;
        }
        ll
    };
    let gradient = |beta: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; p];
        for (x, &y) in xs.iter().zip(ys) {
            let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            let prob = 1.0 / (1.0 + (-eta).exp());
            for (gi, &xi) in g.iter_mut().zip(x) {
                *gi += xi * (y as f64 - prob);
            }
        }
        for i in 1..p {
            g[i] -= ridge * beta[i];
        }
        g
    };
    let mut beta = vec![0.0; p];
    for _ in 0..20_000 {
        let g = gradient(&beta);
        let gnorm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < 1e-9 {
            break;
        }
        let base = objective(&beta);
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(&g).map(|(b, gi)| b + step * gi).collect();
            if objective(&trial) > base || step < 1e-14 {
                beta = trial;
                break;
            }
            step *= 0.5;
        }
    }
    beta
}

/// Location of the largest absolute CUSUM of a univariate series (1-based
/// split); a sanity oracle for generated mean-shift data.
pub fn cusum_argmax(xs: &[f64]) -> usize {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let mut best = 0.0;
    let mut best_t = 1;
    let mut acc = 0.0;
    for (i, &x) in xs.iter().take(n - 1).enumerate() {
        acc += x - mean;
        if acc.abs() > best {
            best = acc.abs();
            best_t = i + 1;
        }
    }
    best_t
}
