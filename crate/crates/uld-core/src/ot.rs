//! Discrete optimal-transport solvers used as correctness oracles for the
//! sorted closed form and as the engine for transport with non-uniform
//! costs (edit-distance or embedding-distance cost matrices).
//!
//! The exact solver integerizes masses onto a fixed grid and runs integer
//! min-cost flow, so its plan is exact for the gridded masses and the
//! reported cost differs from the true optimum by at most the grid
//! resolution times the cost range.

mod flow;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use itertools::Itertools;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::distributions::ProbVector;
use crate::tokenizer::{levenshtein, Vocabulary};
use crate::{Error, Result};

/// Largest support size the exact oracle accepts.
pub const MAX_ORACLE_SUPPORT: usize = 4096;

/// Largest support size for the factorial brute-force alignment search.
pub const MAX_BRUTE_FORCE_SUPPORT: usize = 8;

/// Mass integerization grid: probabilities become units of 1e-15, which
/// keeps a total mass of 1 well inside `i64` and makes the value error of
/// the oracle at most `n * 5e-16 * max(C)`.
pub const MASS_UNITS: i64 = 1_000_000_000_000_000;

/// Cost integerization grid (power of two, so integer and half-integer
/// costs are represented exactly).
const COST_UNITS: f64 = (1u64 << 26) as f64;

/// How a cost matrix was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// 0 on the diagonal, 1 elsewhere; square only.
    Uniform01,
    /// Token edit distance between two vocabularies.
    Levenshtein,
    /// Euclidean distance between token embeddings.
    EmbeddingL2,
    /// Caller-supplied entries.
    Custom,
}

/// Dense pairwise transport costs, `rows x cols`, all finite and
/// non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Vec<f64>,
    rows: usize,
    cols: usize,
    kind: CostKind,
}

impl CostMatrix {
    /// Wraps caller-supplied entries (row-major).
    pub fn new(entries: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        Self::with_kind(entries, rows, cols, CostKind::Custom)
    }

    fn with_kind(entries: Vec<f64>, rows: usize, cols: usize, kind: CostKind) -> Result<Self> {
        if entries.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::parameter(format!(
                "cost matrix of {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        if let Some(i) = entries.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::input(format!(
                "cost entry {i} must be finite and non-negative, got {}",
                entries[i]
            )));
        }
        Ok(CostMatrix {
            entries,
            rows,
            cols,
            kind,
        })
    }

    /// The 0-1 cost: free to keep mass in place, unit cost to move it.
    pub fn uniform01(n: usize) -> Self {
        let mut entries = vec![1.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 0.0;
        }
        CostMatrix {
            entries,
            rows: n,
            cols: n,
            kind: CostKind::Uniform01,
        }
    }

    /// Cost `|i - j|` on an ordered integer support; used to cross-check
    /// the solver against the CDF identity.
    pub fn linear_distance(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[i * n + j] = (i as f64 - j as f64).abs();
            }
        }
        CostMatrix {
            entries,
            rows: n,
            cols: n,
            kind: CostKind::Custom,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// A feasible coupling between two distributions together with its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    flows: Vec<f64>,
    rows: usize,
    cols: usize,
    cost: f64,
}

impl TransportPlan {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Mass moved from source `i` to target `j`.
    pub fn flow_at(&self, i: usize, j: usize) -> f64 {
        self.flows[i * self.cols + j]
    }

    pub fn flows(&self) -> &[f64] {
        &self.flows
    }

    /// Total transport cost of the plan.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn row_marginals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[i] += self.flows[i * self.cols + j];
            }
        }
        out
    }

    pub fn col_marginals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j] += self.flows[i * self.cols + j];
            }
        }
        out
    }
}

/// Rounds a distribution onto the integer mass grid; any residual from
/// rounding is added to the largest entry so the units sum exactly to
/// [`MASS_UNITS`].
fn integer_masses(p: &ProbVector) -> Vec<i64> {
    let mut units: Vec<i64> = p
        .probs()
        .iter()
        .map(|&x| (x * MASS_UNITS as f64).round() as i64)
        .collect();
    let total: i64 = units.iter().sum();
    let residual = MASS_UNITS - total;
    if residual != 0 {
        let largest = (0..units.len())
            .max_by(|&a, &b| units[a].cmp(&units[b]))
            .expect("non-empty");
        units[largest] += residual;
    }
    units
}

/// Solves the discrete transport problem exactly (up to the mass grid):
/// a minimum-cost coupling of `p` and `q` under the pairwise costs `c`.
pub fn exact_ot(p: &ProbVector, q: &ProbVector, c: &CostMatrix) -> Result<TransportPlan> {
    let (n, m) = (p.len(), q.len());
    if c.rows() != n || c.cols() != m {
        return Err(Error::parameter(format!(
            "cost matrix is {}x{} but distributions have supports {n} and {m}",
            c.rows(),
            c.cols()
        )));
    }
    if n.max(m) > MAX_ORACLE_SUPPORT {
        return Err(Error::ScaleLimit {
            n: n.max(m),
            max: MAX_ORACLE_SUPPORT,
        });
    }

    let supply = integer_masses(p);
    let demand = integer_masses(q);

    // Node layout: source, n left nodes, m right nodes, sink.
    let source = 0;
    let sink = n + m + 1;
    let mut net = flow::MinCostFlow::new(n + m + 2);
    for (i, &s) in supply.iter().enumerate() {
        if s > 0 {
            net.add_edge(source, 1 + i, s, 0);
        }
    }
    for (j, &d) in demand.iter().enumerate() {
        if d > 0 {
            net.add_edge(1 + n + j, sink, d, 0);
        }
    }
    let mut transport_edges: Vec<(usize, usize, usize)> = Vec::new();
    for i in 0..n {
        if supply[i] == 0 {
            continue;
        }
        for j in 0..m {
            if demand[j] == 0 {
                continue;
            }
            let cost_int = (c.at(i, j) * COST_UNITS).round() as i64;
            let edge = net.add_edge(1 + i, 1 + n + j, supply[i], cost_int);
            transport_edges.push((i, j, edge));
        }
    }

    let shipped = net.solve(source, sink);
    debug_assert_eq!(shipped, MASS_UNITS, "transport instance must be feasible");

    let mut flows = vec![0.0; n * m];
    let mut cost = 0.0;
    for &(i, j, edge) in &transport_edges {
        let units = net.flow_on(edge);
        if units > 0 {
            let t = units as f64 / MASS_UNITS as f64;
            flows[i * m + j] = t;
            cost += t * c.at(i, j);
        }
    }
    Ok(TransportPlan {
        flows,
        rows: n,
        cols: m,
        cost,
    })
}

/// Independent 1-D Wasserstein oracle for the cost `|i - j|` on an ordered
/// integer support: the sum of absolute CDF differences.
pub fn w1_1d_cdf(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::parameter(format!(
            "CDF oracle needs equal supports, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut cdf_p = 0.0;
    let mut cdf_q = 0.0;
    let mut total = 0.0;
    for (&a, &b) in p.probs().iter().zip(q.probs()) {
        cdf_p += a;
        cdf_q += b;
        total += (cdf_p - cdf_q).abs();
    }
    Ok(total)
}

/// Minimum of `sum_i |p(i) - q(pi(i))|` over all `n!` one-to-one
/// alignments. Validates that sorted matching is optimal among
/// permutation alignments; only feasible for tiny supports.
pub fn brute_force_alignment_min(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::parameter(format!(
            "alignment search needs equal supports, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    if p.len() > MAX_BRUTE_FORCE_SUPPORT {
        return Err(Error::ScaleLimit {
            n: p.len(),
            max: MAX_BRUTE_FORCE_SUPPORT,
        });
    }
    let pv = p.probs();
    let qv = q.probs();
    let mut best = f64::INFINITY;
    for perm in (0..qv.len()).permutations(qv.len()) {
        let total: f64 = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| (pv[i] - qv[j]).abs())
            .sum();
        if total < best {
            best = total;
        }
    }
    Ok(best)
}

/// Result of a Sinkhorn run. Non-convergence within the iteration budget
/// is reported, not treated as a failure.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornOutcome {
    pub plan: TransportPlan,
    pub converged: bool,
    pub iterations: usize,
}

/// Entropic-regularized transport, iterated in the log domain so small
/// `epsilon` survives. Stops when the worst marginal violation drops below
/// `tol` or after `max_iter` sweeps.
pub fn sinkhorn(
    p: &ProbVector,
    q: &ProbVector,
    c: &CostMatrix,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornOutcome> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::parameter(format!(
            "sinkhorn epsilon must be positive, got {epsilon}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::parameter(format!(
            "sinkhorn tolerance must be positive, got {tol}"
        )));
    }
    let (n, m) = (p.len(), q.len());
    if c.rows() != n || c.cols() != m {
        return Err(Error::parameter(format!(
            "cost matrix is {}x{} but distributions have supports {n} and {m}",
            c.rows(),
            c.cols()
        )));
    }

    const MASS_FLOOR: f64 = 1e-30;
    let log_p: Vec<f64> = p.probs().iter().map(|&x| x.max(MASS_FLOOR).ln()).collect();
    let log_q: Vec<f64> = q.probs().iter().map(|&x| x.max(MASS_FLOOR).ln()).collect();

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;

    let log_sum_exp = |row: &mut dyn Iterator<Item = f64>| -> f64 {
        let vals: Vec<f64> = row.collect();
        let max = vals.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        if max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    };

    for iter in 1..=max_iter {
        for i in 0..n {
            let lse = log_sum_exp(&mut (0..m).map(|j| (g[j] - c.at(i, j)) / epsilon));
            f[i] = epsilon * (log_p[i] - lse);
        }
        for j in 0..m {
            let lse = log_sum_exp(&mut (0..n).map(|i| (f[i] - c.at(i, j)) / epsilon));
            g[j] = epsilon * (log_q[j] - lse);
        }
        iterations = iter;

        // After the column scaling the column marginals are exact; the
        // stopping rule watches the rows.
        let mut violation = 0.0f64;
        for i in 0..n {
            let mut row_mass = 0.0;
            for j in 0..m {
                row_mass += ((f[i] + g[j] - c.at(i, j)) / epsilon).exp();
            }
            violation = violation.max((row_mass - p.probs()[i]).abs());
        }
        if violation < tol {
            converged = true;
            break;
        }
    }

    let mut flows = vec![0.0; n * m];
    let mut cost = 0.0;
    for i in 0..n {
        for j in 0..m {
            let t = ((f[i] + g[j] - c.at(i, j)) / epsilon).exp();
            flows[i * m + j] = t;
            cost += t * c.at(i, j);
        }
    }
    Ok(SinkhornOutcome {
        plan: TransportPlan {
            flows,
            rows: n,
            cols: m,
            cost,
        },
        converged,
        iterations,
    })
}

/// Pairwise token edit distances between two vocabularies: entry `(i, j)`
/// is the Levenshtein distance between token `i` of `a` and token `j` of
/// `b`. Symmetric whenever the vocabularies coincide.
pub fn levenshtein_cost_matrix(a: &Vocabulary, b: &Vocabulary) -> CostMatrix {
    let rows = a.size();
    let cols = b.size();
    let mut entries = Vec::with_capacity(rows * cols);
    for ta in a.tokens() {
        for tb in b.tokens() {
            entries.push(levenshtein(ta, tb) as f64);
        }
    }
    CostMatrix {
        entries,
        rows,
        cols,
        kind: CostKind::Levenshtein,
    }
}

/// Pairwise Euclidean distances between two token-embedding tables.
/// Tables are row-per-token; both must share one embedding dimension.
pub fn embedding_l2_cost_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<CostMatrix> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::parameter("embedding tables must be non-empty"));
    }
    let dim = a[0].len();
    if let Some(bad) = a.iter().chain(b.iter()).find(|e| e.len() != dim) {
        return Err(Error::parameter(format!(
            "embedding dimension mismatch: expected {dim}, got {}",
            bad.len()
        )));
    }
    let mut entries = Vec::with_capacity(a.len() * b.len());
    for ea in a {
        for eb in b {
            let sq: f64 = ea.iter().zip(eb).map(|(x, y)| (x - y) * (x - y)).sum();
            entries.push(sq.sqrt());
        }
    }
    CostMatrix::with_kind(entries, a.len(), b.len(), CostKind::EmbeddingL2)
}

/// Recovers dual potentials `(u, v)` with `u_i + v_j = C_ij` on the
/// support of an optimal plan by propagating over each support component;
/// component roots get `v = 0`. By complementary slackness
/// `p . u + q . v` equals the plan cost, and `u` serves as the envelope
/// gradient of the transport cost with respect to the source masses.
pub fn transport_duals(plan: &TransportPlan, c: &CostMatrix) -> (Vec<f64>, Vec<f64>) {
    const SUPPORT_FLOOR: f64 = 1e-15;
    let (n, m) = (plan.rows(), plan.cols());
    let mut left_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut right_adj: Vec<Vec<usize>> = vec![Vec::new(); m];
    for i in 0..n {
        for j in 0..m {
            if plan.flow_at(i, j) > SUPPORT_FLOOR {
                left_adj[i].push(j);
                right_adj[j].push(i);
            }
        }
    }

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut seen_left = vec![false; n];
    let mut seen_right = vec![false; m];
    let mut queue: Vec<(bool, usize)> = Vec::new();

    for root in 0..n {
        if seen_left[root] || left_adj[root].is_empty() {
            continue;
        }
        seen_left[root] = true;
        u[root] = 0.0;
        queue.push((true, root));
        while let Some((is_left, node)) = queue.pop() {
            if is_left {
                for &j in &left_adj[node] {
                    if !seen_right[j] {
                        seen_right[j] = true;
                        v[j] = c.at(node, j) - u[node];
                        queue.push((false, j));
                    }
                }
            } else {
                for &i in &right_adj[node] {
                    if !seen_left[i] {
                        seen_left[i] = true;
                        u[i] = c.at(i, node) - v[node];
                        queue.push((true, i));
                    }
                }
            }
        }
    }
    (u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::ProbVector;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probs(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> ProbVector {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-4..1.0)).collect();
        let total: f64 = raw.iter().sum();
        ProbVector::new(raw.into_iter().map(|x| x / total).collect()).unwrap()
    }

    fn total_variation(p: &ProbVector, q: &ProbVector) -> f64 {
        0.5 * p
            .probs()
            .iter()
            .zip(q.probs())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    #[test]
    fn identity_transport_is_free() {
        let p = probs(&[0.5, 0.3, 0.2]);
        let plan = exact_ot(&p, &p, &CostMatrix::uniform01(3)).unwrap();
        assert_abs_diff_eq!(plan.cost(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn moving_all_mass_costs_one() {
        let p = probs(&[1.0, 0.0]);
        let q = probs(&[0.0, 1.0]);
        let plan = exact_ot(&p, &q, &CostMatrix::uniform01(2)).unwrap();
        assert_abs_diff_eq!(plan.cost(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_one_cost_equals_total_variation() {
        let p = probs(&[0.7, 0.3]);
        let q = probs(&[0.4, 0.6]);
        let plan = exact_ot(&p, &q, &CostMatrix::uniform01(2)).unwrap();
        assert_abs_diff_eq!(plan.cost(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let p = probs(&[0.5, 0.5]);
        let q = probs(&[0.5, 0.5]);
        assert!(matches!(
            exact_ot(&p, &q, &CostMatrix::uniform01(3)),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn rejects_oversize_support() {
        let p = ProbVector::uniform(MAX_ORACLE_SUPPORT + 1).unwrap();
        let c = CostMatrix::uniform01(MAX_ORACLE_SUPPORT + 1);
        assert!(matches!(
            exact_ot(&p, &p, &c),
            Err(Error::ScaleLimit { .. })
        ));
    }

    #[test]
    fn cdf_oracle_examples() {
        let p = probs(&[1.0, 0.0, 0.0]);
        let q = probs(&[0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(w1_1d_cdf(&p, &q).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w1_1d_cdf(&p, &p).unwrap(), 0.0, epsilon = 1e-15);
        let a = probs(&[0.5, 0.5, 0.0]);
        let b = probs(&[0.0, 0.5, 0.5]);
        assert_abs_diff_eq!(w1_1d_cdf(&a, &b).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn cdf_oracle_agrees_with_exact_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let n = rng.gen_range(2..12);
            let p = random_dist(&mut rng, n);
            let q = random_dist(&mut rng, n);
            let via_cdf = w1_1d_cdf(&p, &q).unwrap();
            let via_flow = exact_ot(&p, &q, &CostMatrix::linear_distance(n))
                .unwrap()
                .cost();
            assert_abs_diff_eq!(via_cdf, via_flow, epsilon = 1e-7);
        }
    }

    #[test]
    fn brute_force_examples() {
        let p = probs(&[0.7, 0.2, 0.1]);
        let q = probs(&[0.1, 0.5, 0.4]);
        assert_abs_diff_eq!(
            brute_force_alignment_min(&p, &q).unwrap(),
            0.4,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            brute_force_alignment_min(&p, &p).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        let one = probs(&[1.0]);
        assert_abs_diff_eq!(
            brute_force_alignment_min(&one, &one).unwrap(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn brute_force_rejects_large_supports() {
        let p = ProbVector::uniform(9).unwrap();
        assert!(matches!(
            brute_force_alignment_min(&p, &p),
            Err(Error::ScaleLimit { .. })
        ));
    }

    #[test]
    fn exact_plan_is_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let n = rng.gen_range(2..10);
            let m = rng.gen_range(2..10);
            let p = random_dist(&mut rng, n);
            let q = random_dist(&mut rng, m);
            let entries: Vec<f64> = (0..n * m).map(|_| rng.gen_range(0.0..4.0)).collect();
            let c = CostMatrix::new(entries, n, m).unwrap();
            let plan = exact_ot(&p, &q, &c).unwrap();
            for (got, want) in plan.row_marginals().iter().zip(p.probs()) {
                assert_abs_diff_eq!(got, want, epsilon = 1e-7);
            }
            for (got, want) in plan.col_marginals().iter().zip(q.probs()) {
                assert_abs_diff_eq!(got, want, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn duals_certify_the_plan_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let n = rng.gen_range(2..8);
            let m = rng.gen_range(2..8);
            let p = random_dist(&mut rng, n);
            let q = random_dist(&mut rng, m);
            let entries: Vec<f64> = (0..n * m).map(|_| rng.gen_range(0.0..3.0)).collect();
            let c = CostMatrix::new(entries, n, m).unwrap();
            let plan = exact_ot(&p, &q, &c).unwrap();
            let (u, v) = transport_duals(&plan, &c);
            let dual_value: f64 = p.probs().iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
                + q.probs().iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            assert_abs_diff_eq!(dual_value, plan.cost(), epsilon = 1e-7);
        }
    }

    #[test]
    fn sinkhorn_identity_is_near_free() {
        let p = ProbVector::uniform(8).unwrap();
        let out = sinkhorn(&p, &p, &CostMatrix::uniform01(8), 0.01, 5000, 1e-9).unwrap();
        assert!(out.plan.cost() <= 0.01 * (8.0f64).ln() + 1e-6);
    }

    #[test]
    fn sinkhorn_approaches_exact_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_dist(&mut rng, 16);
        let q = random_dist(&mut rng, 16);
        let c = CostMatrix::uniform01(16);
        let exact = exact_ot(&p, &q, &c).unwrap().cost();
        let approx = sinkhorn(&p, &q, &c, 1e-3, 20_000, 1e-9).unwrap();
        assert!(
            (approx.plan.cost() - exact).abs() < 1e-2,
            "sinkhorn {} vs exact {exact}",
            approx.plan.cost()
        );
    }

    #[test]
    fn sinkhorn_marginals_match_within_tol() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_dist(&mut rng, 6);
        let q = random_dist(&mut rng, 6);
        let tol = 1e-8;
        let out = sinkhorn(&p, &q, &CostMatrix::uniform01(6), 0.05, 10_000, tol).unwrap();
        assert!(out.converged);
        for (got, want) in out.plan.row_marginals().iter().zip(p.probs()) {
            assert!((got - want).abs() < tol * 10.0);
        }
        for (got, want) in out.plan.col_marginals().iter().zip(q.probs()) {
            assert!((got - want).abs() < tol * 10.0);
        }
    }

    #[test]
    fn sinkhorn_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_dist(&mut rng, 12);
        let q = random_dist(&mut rng, 12);
        let out = sinkhorn(&p, &q, &CostMatrix::uniform01(12), 1e-3, 2, 1e-12).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
    }

    #[test]
    fn sinkhorn_rejects_bad_epsilon() {
        let p = ProbVector::uniform(2).unwrap();
        assert!(matches!(
            sinkhorn(&p, &p, &CostMatrix::uniform01(2), 0.0, 10, 1e-6),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn levenshtein_matrix_values() {
        use crate::tokenizer::Vocabulary;
        let a = Vocabulary::from_regular_tokens(["cat", "kitten"]).unwrap();
        let b = Vocabulary::from_regular_tokens(["cats", "sitting"]).unwrap();
        let c = levenshtein_cost_matrix(&a, &b);
        let (ai, bi) = (a.id_of("cat").unwrap(), b.id_of("cats").unwrap());
        assert_eq!(c.at(ai, bi), 1.0);
        let (ai, bi) = (a.id_of("kitten").unwrap(), b.id_of("sitting").unwrap());
        assert_eq!(c.at(ai, bi), 3.0);

        let self_cost = levenshtein_cost_matrix(&a, &a);
        for i in 0..a.size() {
            assert_eq!(self_cost.at(i, i), 0.0);
            for j in 0..a.size() {
                assert_eq!(self_cost.at(i, j), self_cost.at(j, i));
            }
        }
    }

    #[test]
    fn embedding_matrix_values() {
        let a = alloc::vec![alloc::vec![0.0, 0.0]];
        let b = alloc::vec![alloc::vec![3.0, 4.0]];
        let c = embedding_l2_cost_matrix(&a, &b).unwrap();
        assert_abs_diff_eq!(c.at(0, 0), 5.0, epsilon = 1e-15);

        let self_cost = embedding_l2_cost_matrix(&a, &a).unwrap();
        assert_eq!(self_cost.at(0, 0), 0.0);
    }

    #[test]
    fn embedding_matrix_rejects_dim_mismatch() {
        let a = alloc::vec![alloc::vec![0.0, 0.0]];
        let b = alloc::vec![alloc::vec![1.0]];
        assert!(matches!(
            embedding_l2_cost_matrix(&a, &b),
            Err(Error::InvalidParameter(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn zero_one_cost_is_total_variation(
            raw_p in proptest::collection::vec(1e-4f64..1.0, 2..16),
            raw_q in proptest::collection::vec(1e-4f64..1.0, 2..16),
        ) {
            let n = raw_p.len().min(raw_q.len());
            let norm = |raw: &[f64]| {
                let total: f64 = raw[..n].iter().sum();
                ProbVector::new(raw[..n].iter().map(|x| x / total).collect()).unwrap()
            };
            let p = norm(&raw_p);
            let q = norm(&raw_q);
            let plan = exact_ot(&p, &q, &CostMatrix::uniform01(n)).unwrap();
            prop_assert!((plan.cost() - total_variation(&p, &q)).abs() < 1e-9);
        }
    }
}
