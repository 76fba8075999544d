//! Independent transport solvers used as oracles.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Minimum cost over every basic feasible solution of the transportation
/// polytope. A basis is any set of `m + n − 1` cells forming a spanning tree
/// of the bipartite row/column graph; its flows are forced by leaf peeling.
pub fn vertex_enumeration(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let cells = m * n;
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << cells) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let chosen: Vec<(usize, usize)> = (0..cells).filter(|c| mask >> c & 1 == 1).map(|c| (c / n, c % n)).collect();
        if let Some(flows) = peel(supply, demand, &chosen) {
            if flows.iter().all(|&(_, f)| f >= -1e-12) {
                let c: f64 = flows.iter().map(|&((i, j), f)| f * cost[i * n + j]).sum();
                best = best.min(c);
            }
        }
    }
    best
}

/// Solves the tree system by repeatedly fixing a cell at a leaf node.
/// Returns `None` when the cells contain a cycle (no spanning tree).
fn peel(supply: &[f64], demand: &[f64], cells: &[(usize, usize)]) -> Option<Vec<((usize, usize), f64)>> {
    let m = supply.len();
    let mut residual: Vec<f64> = supply.iter().chain(demand).copied().collect();
    let mut alive = vec![true; cells.len()];
    let mut out = Vec::new();
    for _ in 0..cells.len() {
        let mut degree = vec![0usize; residual.len()];
        for (c, &(i, j)) in cells.iter().enumerate() {
            if alive[c] {
                degree[i] += 1;
                degree[m + j] += 1;
            }
        }
        let (c, leaf) = cells.iter().enumerate().filter(|&(c, _)| alive[c]).find_map(|(c, &(i, j))| {
            if degree[i] == 1 {
                Some((c, i))
            } else if degree[m + j] == 1 {
                Some((c, m + j))
            } else {
                None
            }
        })?;
        let (i, j) = cells[c];
        let f = residual[leaf];
        residual[i] -= f;
        residual[m + j] -= f;
        alive[c] = false;
        out.push(((i, j), f));
    }
    // A forest with a leftover cycle would have stalled above; a disconnected
    // forest leaves unmatched mass.
    residual.iter().all(|r| r.abs() < 1e-9).then_some(out)
}

/// Dense two-phase tableau simplex with Bland's rule on
/// `min c·x, Σ_j x_ij = a_i, Σ_i x_ij = b_j (j < n − 1), x ≥ 0`.
pub fn tableau_simplex(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let vars = m * n;
    let rows = m + n - 1;
    let width = vars + rows + 1;
    let mut t = vec![vec![0.0; width]; rows];
    for i in 0..m {
        for j in 0..n {
            t[i][i * n + j] = 1.0;
        }
        t[i][width - 1] = supply[i];
    }
    for j in 0..n - 1 {
        for i in 0..m {
            t[m + j][i * n + j] = 1.0;
        }
        t[m + j][width - 1] = demand[j];
    }
    for (r, row) in t.iter_mut().enumerate() {
        row[vars + r] = 1.0;
    }
    let mut basis: Vec<usize> = (vars..vars + rows).collect();
    let mut phase1 = vec![0.0; vars + rows];
    phase1[vars..].iter_mut().for_each(|c| *c = 1.0);
    run(&mut t, &mut basis, &phase1, vars + rows);
    // Drive zero-level artificials out of the basis before phase two.
    for r in 0..rows {
        if basis[r] >= vars {
            if let Some(j) = (0..vars).find(|&j| !basis.contains(&j) && t[r][j].abs() > 1e-9) {
                pivot(&mut t, r, j);
                basis[r] = j;
            }
        }
    }
    let mut phase2 = vec![0.0; vars + rows];
    phase2[..vars].copy_from_slice(cost);
    run(&mut t, &mut basis, &phase2, vars);
    basis.iter().enumerate().filter(|&(_, &b)| b < vars).map(|(r, &b)| cost[b] * t[r][width - 1]).sum()
}

fn run(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: usize) {
    let width = t[0].len();
    loop {
        let reduced = |j: usize| cost[j] - basis.iter().enumerate().map(|(r, &b)| cost[b] * t[r][j]).sum::<f64>();
        let Some(enter) = (0..allowed).find(|&j| !basis.contains(&j) && reduced(j) < -1e-12) else {
            return;
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..t.len() {
            if t[r][enter] > 1e-12 {
                let ratio = t[r][width - 1] / t[r][enter];
                let better = match leave {
                    None => true,
                    Some((lr, lv)) => ratio < lv - 1e-15 || (ratio <= lv + 1e-15 && basis[r] < basis[lr]),
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let (r, _) = leave.expect("transport LP is bounded");
        pivot(t, r, enter);
        basis[r] = enter;
    }
}

fn pivot(t: &mut [Vec<f64>], r: usize, col: usize) {
    let p = t[r][col];
    t[r].iter_mut().for_each(|v| *v /= p);
    let pivot_row = t[r].clone();
    for (k, row) in t.iter_mut().enumerate() {
        if k != r && row[col] != 0.0 {
            let f = row[col];
            row.iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
        }
    }
}

/// Positive weights summing to one over `len` slots; `integral` draws small
/// integer counts so ties and degenerate bases are common.
pub fn random_weights(rng: &mut ChaCha8Rng, len: usize, integral: bool) -> Vec<f64> {
    let raw: Vec<f64> = (0..len)
        .map(|_| if integral { rng.gen_range(1..4) as f64 } else { rng.gen_range(0.05..1.0) })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

pub fn random_rows(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}
