//! Word mover's distance and the content-preservation reward.
//!
//! Transport problems are solved exactly with a network simplex on the
//! bipartite transportation graph: the basis is a spanning tree of `m + n − 1`
//! cells, node potentials give reduced costs, and pivots follow Bland's rule
//! so degenerate instances cannot cycle.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::embedding::Embeddings;
use crate::error::{usage, Result};
use crate::sentence::{Sentence, BOS, EOS};

/// Marginal tolerance for user-supplied weights.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

/// Normalized bag of words.
#[derive(Debug, Clone, PartialEq)]
pub struct WordDistribution {
    support: Vec<(usize, f64)>,
}

impl WordDistribution {
    /// Normalized token frequencies, support sorted by index.
    pub fn from_tokens(tokens: &[usize]) -> Result<Self> {
        if tokens.is_empty() {
            return Err(usage!("word distribution needs at least one token"));
        }
        let mut sorted = tokens.to_vec();
        sorted.sort_unstable();
        let total = tokens.len() as f64;
        let mut support: Vec<(usize, f64)> = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let j = sorted[i..].iter().take_while(|&&t| t == sorted[i]).count();
            support.push((sorted[i], j as f64 / total));
            i += j;
        }
        Ok(Self { support })
    }

    /// Explicit weights; they must be positive, sum to one and have unique
    /// indices.
    pub fn from_weights(mut support: Vec<(usize, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(usage!("word distribution has empty support"));
        }
        support.sort_by_key(|&(i, _)| i);
        if support.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(usage!("duplicate support index"));
        }
        if support.iter().any(|&(_, w)| !(w > 0.0) || !w.is_finite()) {
            return Err(usage!("support weights must be positive"));
        }
        let sum: f64 = support.iter().map(|&(_, w)| w).sum();
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(usage!("support weights sum to {sum}, not 1"));
        }
        Ok(Self { support })
    }

    pub fn support(&self) -> &[(usize, f64)] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.support.iter().map(|&(i, _)| i)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.support.iter().map(|&(_, w)| w).collect()
    }
}

/// Optimal flow between two supports, rows follow the first distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub flows: Vec<Vec<f64>>,
    pub total_cost: f64,
}

/// Euclidean distance between two embedding rows.
pub fn ground_distance(i: usize, j: usize, embeddings: &Embeddings) -> f64 {
    if i == j {
        return 0.0;
    }
    let (a, b) = (embeddings.row(i), embeddings.row(j));
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Exact word mover's distance.
pub fn wmd(a: &WordDistribution, b: &WordDistribution, embeddings: &Embeddings) -> Result<f64> {
    Ok(wmd_plan(a, b, embeddings)?.total_cost)
}

/// Exact word mover's distance with its optimal plan.
///
/// The problem is always solved in one canonical orientation so that
/// `wmd(a, b)` and `wmd(b, a)` agree bit for bit.
pub fn wmd_plan(a: &WordDistribution, b: &WordDistribution, embeddings: &Embeddings) -> Result<TransportPlan> {
    if a.is_empty() || b.is_empty() {
        return Err(usage!("word distribution has empty support"));
    }
    if a == b {
        let n = a.len();
        let mut flows = vec![vec![0.0; n]; n];
        for (k, &(_, w)) in a.support.iter().enumerate() {
            flows[k][k] = w;
        }
        return Ok(TransportPlan { flows, total_cost: 0.0 });
    }
    let swap = canonical_order(b, a);
    let (src, dst) = if swap { (b, a) } else { (a, b) };
    let cost: Vec<f64> = src
        .indices()
        .flat_map(|i| dst.indices().map(move |j| (i, j)))
        .map(|(i, j)| ground_distance(i, j, embeddings))
        .collect();
    let plan = solve_transport(&src.weights(), &dst.weights(), &cost)?;
    Ok(if swap { transpose(plan) } else { plan })
}

fn canonical_order(x: &WordDistribution, y: &WordDistribution) -> bool {
    let key = |d: &WordDistribution| d.support.iter().map(|&(i, w)| (i, w.to_bits())).collect::<Vec<_>>();
    key(x) < key(y)
}

fn transpose(plan: TransportPlan) -> TransportPlan {
    let (m, n) = (plan.flows.len(), plan.flows[0].len());
    let flows = (0..n).map(|j| (0..m).map(|i| plan.flows[i][j]).collect()).collect();
    TransportPlan { flows, total_cost: plan.total_cost }
}

/// Minimum-cost transport from `supply` to `demand` with row-major `cost`.
///
/// Supplies and demands must be non-negative with equal totals (within
/// 1e-9).
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportPlan> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(usage!("transport problem has an empty side"));
    }
    if cost.len() != m * n {
        return Err(usage!("cost matrix has {} entries, expected {}", cost.len(), m * n));
    }
    if supply.iter().chain(demand).any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(usage!("transport masses must be finite and non-negative"));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(usage!("transport costs must be finite"));
    }
    let (ts, td): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if (ts - td).abs() > 1e-9 {
        return Err(usage!("supply {ts} and demand {td} differ"));
    }
    let mut simplex = Simplex::north_west(supply, demand, cost);
    simplex.optimize();
    let mut flows = vec![vec![0.0; n]; m];
    for &(i, j) in &simplex.basis {
        flows[i][j] = simplex.flow[i * n + j];
    }
    let total_cost = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| flows[i][j] * cost[i * n + j]).sum();
    Ok(TransportPlan { flows, total_cost })
}

struct Simplex<'c> {
    m: usize,
    n: usize,
    cost: &'c [f64],
    flow: Vec<f64>,
    /// Spanning-tree cells, kept sorted for Bland's rule on leaving ties.
    basis: Vec<(usize, usize)>,
    in_basis: Vec<bool>,
    eps: f64,
}

impl<'c> Simplex<'c> {
    /// North-west corner start; always emits exactly `m + n − 1` cells, so
    /// degenerate zero-flow cells keep the basis a spanning tree.
    fn north_west(supply: &[f64], demand: &[f64], cost: &'c [f64]) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let (mut a, mut b) = (supply.to_vec(), demand.to_vec());
        let mut flow = vec![0.0; m * n];
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = a[i].min(b[j]).max(0.0);
            flow[i * n + j] = x;
            basis.push((i, j));
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && a[i] <= b[j]) {
                b[j] -= x;
                a[i] = 0.0;
                i += 1;
            } else {
                a[i] -= x;
                b[j] = 0.0;
                j += 1;
            }
        }
        let mut in_basis = vec![false; m * n];
        for &(i, j) in &basis {
            in_basis[i * n + j] = true;
        }
        let scale = cost.iter().fold(0.0f64, |s, c| s.max(c.abs()));
        Self { m, n, cost, flow, basis, in_basis, eps: 1e-12 * scale.max(1.0) }
    }

    fn optimize(&mut self) {
        while let Some(enter) = self.entering() {
            self.pivot(enter);
        }
    }

    /// Node potentials `u` (rows) and `v` (columns) with `u_i + v_j = c_ij`
    /// on every basic cell.
    fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let (m, n) = (self.m, self.n);
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; m + n];
        pot[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &next in &adj[node] {
                if pot[next].is_nan() {
                    let (i, j) = if node < m { (node, next - m) } else { (next, node - m) };
                    pot[next] = self.cost[i * n + j] - pot[node];
                    stack.push(next);
                }
            }
        }
        let v = pot.split_off(m);
        (pot, v)
    }

    /// Nodes `0..m` are rows and `m..m+n` columns.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for &(i, j) in &self.basis {
            adj[i].push(self.m + j);
            adj[self.m + j].push(i);
        }
        adj
    }

    /// First non-basic cell (row-major) with a negative reduced cost.
    fn entering(&self) -> Option<(usize, usize)> {
        let (u, v) = self.potentials();
        (0..self.m)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .find(|&(i, j)| !self.in_basis[i * self.n + j] && self.cost[i * self.n + j] - u[i] - v[j] < -self.eps)
    }

    fn pivot(&mut self, (ei, ej): (usize, usize)) {
        let (m, n) = (self.m, self.n);
        // Tree path from column ej back to row ei closes the cycle.
        let adj = self.adjacency();
        let mut parent = vec![usize::MAX; m + n];
        parent[ei] = ei;
        let mut queue = alloc::collections::VecDeque::from([ei]);
        while let Some(node) = queue.pop_front() {
            if node == m + ej {
                break;
            }
            for &next in &adj[node] {
                if parent[next] == usize::MAX {
                    parent[next] = node;
                    queue.push_back(next);
                }
            }
        }
        let mut path = vec![m + ej];
        while *path.last().unwrap() != ei {
            let last = *path.last().unwrap();
            path.push(parent[last]);
        }
        // Cells along the cycle: entering (+), then alternating −, +, …
        let cell = |a: usize, b: usize| if a < m { (a, b - m) } else { (b, a - m) };
        let cycle: Vec<(usize, usize)> = path.windows(2).map(|w| cell(w[0], w[1])).collect();
        let leaving = cycle
            .iter()
            .step_by(2)
            .copied()
            .min_by(|&p, &q| {
                let (fp, fq) = (self.flow[p.0 * n + p.1], self.flow[q.0 * n + q.1]);
                fp.total_cmp(&fq).then(p.cmp(&q))
            })
            .expect("cycle has a decreasing cell");
        let theta = self.flow[leaving.0 * n + leaving.1];
        self.flow[ei * n + ej] = theta;
        for (k, &(i, j)) in cycle.iter().enumerate() {
            let f = &mut self.flow[i * n + j];
            if k % 2 == 0 {
                *f = (*f - theta).max(0.0);
            } else {
                *f += theta;
            }
        }
        self.flow[leaving.0 * n + leaving.1] = 0.0;
        self.in_basis[leaving.0 * n + leaving.1] = false;
        self.in_basis[ei * n + ej] = true;
        let pos = self.basis.iter().position(|&c| c == leaving).unwrap();
        self.basis[pos] = (ei, ej);
        self.basis.sort_unstable();
    }
}

/// Which tokens take part in the content comparison.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContentFilter {
    /// Extra token indices to drop, e.g. stopwords. Empty by default.
    pub stopwords: BTreeSet<usize>,
}

impl ContentFilter {
    pub fn keep(&self, token: usize) -> bool {
        token != BOS && token != EOS && !self.stopwords.contains(&token)
    }

    pub fn content(&self, sentence: &Sentence) -> Vec<usize> {
        sentence.tokens().iter().copied().filter(|&t| self.keep(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticScore {
    pub score: f64,
    pub distance: f64,
    /// A side was empty after filtering and its unfiltered tokens were used.
    pub degenerate: bool,
}

/// `−wmd(generated, source) / |generated content|`; 0 only for identical
/// bags of words.
pub fn semantic_score(
    generated: &Sentence,
    source: &Sentence,
    embeddings: &Embeddings,
    filter: &ContentFilter,
) -> Result<SemanticScore> {
    let mut degenerate = false;
    let mut side = |s: &Sentence| {
        let content = filter.content(s);
        if content.is_empty() {
            degenerate = true;
            s.tokens().to_vec()
        } else {
            content
        }
    };
    let (gen_tokens, src_tokens) = (side(generated), side(source));
    let distance = wmd(
        &WordDistribution::from_tokens(&gen_tokens)?,
        &WordDistribution::from_tokens(&src_tokens)?,
        embeddings,
    )?;
    Ok(SemanticScore { score: -distance / gen_tokens.len() as f64, distance, degenerate })
}
