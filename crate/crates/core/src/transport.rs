//! Exact Wasserstein-1 distances between finitely supported measures,
//! transport plans, the block-fibered distance, and evaluators of the
//! recorded stability bounds.
//!
//! Two exact solvers back every distance: equal-size uniform-mass inputs
//! reduce to a min-cost perfect matching solved by the O(M^3) assignment
//! algorithm with potentials, and general rational-mass inputs go through a
//! transportation network simplex seeded with the north-west-corner rule.
//! Both are exact for the discrete problem; no entropic approximation is
//! involved. Ties are broken deterministically toward the lexicographically
//! smallest pairing so plans are reproducible.

use rayon::prelude::*;
use std::io::Write;

use crate::error::{CoreError, CoreResult};
use crate::meanfield::{
    FiberedPathMeasure, FiberedPointMeasure, LabeledPathMeasure, LabeledPointMeasure,
};
use crate::trajectory::fmt_f64;

/// Largest atom count accepted per measure by the exact solvers.
pub const ATOM_CAP: usize = 2048;

/// Ground metric on state-label pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductMetric {
    /// `d((zeta, x), (zeta', x')) = hypot(|zeta - zeta'|, |x - x'|)`; the
    /// label contributes through the Euclidean product.
    EuclideanProduct,
    /// State distance only; labels are ignored (the within-fiber metric).
    StateOnly,
}

fn state_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc.sqrt()
}

impl ProductMetric {
    fn combine(&self, state_d: f64, label_d: f64) -> f64 {
        match self {
            ProductMetric::EuclideanProduct => state_d.hypot(label_d),
            ProductMetric::StateOnly => state_d,
        }
    }

    /// Distance between two labeled point atoms.
    pub fn point_distance(&self, a: &[f64], xa: f64, b: &[f64], xb: f64) -> f64 {
        self.combine(state_distance(a, b), (xa - xb).abs())
    }
}

// ---------------------------------------------------------------------------
// Transport plans
// ---------------------------------------------------------------------------

/// One atom-to-atom shipment of a transport plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
    pub cost_contribution: f64,
}

/// Sparse coupling between two atomic measures together with its total cost.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    entries: Vec<PlanEntry>,
    cost: f64,
}

impl TransportPlan {
    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Row sums (mass leaving each source atom); length = source count.
    pub fn source_marginals(&self, n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n];
        for e in &self.entries {
            m[e.i] += e.mass;
        }
        m
    }

    /// Column sums (mass arriving at each target atom).
    pub fn target_marginals(&self, n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n];
        for e in &self.entries {
            m[e.j] += e.mass;
        }
        m
    }

    /// CSV rows `i,j,mass,cost_contribution` at full precision.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> CoreResult<()> {
        writeln!(out, "i,j,mass,cost_contribution")?;
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{}",
                e.i,
                e.j,
                fmt_f64(e.mass),
                fmt_f64(e.cost_contribution)
            )?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Assignment solver (equal-size uniform masses)
// ---------------------------------------------------------------------------

/// Min-cost perfect matching on an `m x m` cost matrix via the shortest
/// augmenting path algorithm with potentials. Returns row -> column.
fn solve_assignment(cost: &[f64], m: usize) -> Vec<usize> {
    let mut u = vec![0.0f64; m + 1];
    let mut v = vec![0.0f64; m + 1];
    // p[col] = row currently matched to col, 1-indexed; 0 = free.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=m {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; m];
    for j in 1..=m {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Deterministic tie canonicalization: repeatedly apply cost-neutral 2-swaps
/// that lower the pairing lexicographically, so among cost-equal matchings
/// the reported one prefers the lowest index pair.
fn canonicalize_ties(cost: &[f64], m: usize, sigma: &mut [usize]) {
    loop {
        let mut changed = false;
        for i in 0..m {
            for j in (i + 1)..m {
                let keep = cost[i * m + sigma[i]] + cost[j * m + sigma[j]];
                let swap = cost[i * m + sigma[j]] + cost[j * m + sigma[i]];
                if swap == keep && sigma[j] < sigma[i] {
                    sigma.swap(i, j);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// Transportation simplex (general masses)
// ---------------------------------------------------------------------------

struct BasisEdge {
    i: usize,
    j: usize,
    amount: f64,
}

/// North-west-corner seeded transportation simplex on the complete bipartite
/// graph, Bland's smallest-index rule for entering and leaving variables.
fn solve_simplex(
    cost: &[f64],
    supplies: &[f64],
    demands: &[f64],
) -> CoreResult<Vec<BasisEdge>> {
    let na = supplies.len();
    let nb = demands.len();
    let mut a = supplies.to_vec();
    let mut b = demands.to_vec();

    // Seed: north-west corner, exactly na + nb - 1 basis entries (degenerate
    // zero entries keep the spanning-tree structure when both sides exhaust).
    let mut basis: Vec<BasisEdge> = Vec::with_capacity(na + nb - 1);
    let (mut i, mut j) = (0usize, 0usize);
    loop {
        let q = a[i].min(b[j]);
        basis.push(BasisEdge { i, j, amount: q });
        if a[i] <= b[j] {
            b[j] -= q;
            a[i] = 0.0;
            if i + 1 < na {
                i += 1;
            } else if j + 1 < nb {
                j += 1;
            } else {
                break;
            }
        } else {
            a[i] -= q;
            b[j] = 0.0;
            if j + 1 < nb {
                j += 1;
            } else if i + 1 < na {
                i += 1;
            } else {
                break;
            }
        }
    }
    debug_assert_eq!(basis.len(), na + nb - 1);

    let max_cost = cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-12 * (1.0 + max_cost);
    // Bland's rule terminates; the cap only guards numerical pathologies.
    let iter_cap = 1000 * (na + nb) * (na + nb) + 10_000;

    for _ in 0..iter_cap {
        // Potentials from the spanning tree: nodes 0..na are sources,
        // na..na+nb targets.
        let n_nodes = na + nb;
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_nodes];
        for (e, edge) in basis.iter().enumerate() {
            adj[edge.i].push((na + edge.j, e));
            adj[na + edge.j].push((edge.i, e));
        }
        let mut potential = vec![f64::NAN; n_nodes];
        potential[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &(next, e) in &adj[node] {
                if potential[next].is_nan() {
                    // Basis edges satisfy u_i + v_j = c_ij, so the unknown
                    // endpoint is the complement of the known one.
                    potential[next] = cost[basis[e].i * nb + basis[e].j] - potential[node];
                    stack.push(next);
                }
            }
        }
        if potential.iter().any(|p| p.is_nan()) {
            return Err(CoreError::Validation(
                "transport basis lost connectivity (degenerate instance)".into(),
            ));
        }

        // Entering variable: lexicographically first with negative reduced
        // cost (Bland's rule).
        let mut entering = None;
        'search: for ei in 0..na {
            for ej in 0..nb {
                let r = cost[ei * nb + ej] - potential[ei] - potential[na + ej];
                if r < -tol {
                    entering = Some((ei, ej));
                    break 'search;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            return Ok(basis);
        };

        // Unique cycle: tree path from target node ej back to source node ei.
        let path_edges = tree_path(&basis, na, nb, ei, ej)?;
        // Signs alternate along the path starting with minus at the edge
        // adjacent to the entering column.
        let mut theta = f64::INFINITY;
        let mut leaving: Option<usize> = None;
        for (pos, &e) in path_edges.iter().enumerate() {
            if pos % 2 == 0 {
                let amt = basis[e].amount;
                let replace = match leaving {
                    None => true,
                    Some(cur) => {
                        amt < theta
                            || (amt == theta
                                && (basis[e].i, basis[e].j) < (basis[cur].i, basis[cur].j))
                    }
                };
                if replace {
                    theta = amt;
                    leaving = Some(e);
                }
            }
        }
        let leaving = leaving.ok_or_else(|| {
            CoreError::Validation("transport cycle without donor edge".into())
        })?;
        for (pos, &e) in path_edges.iter().enumerate() {
            if pos % 2 == 0 {
                basis[e].amount -= theta;
            } else {
                basis[e].amount += theta;
            }
        }
        basis[leaving] = BasisEdge {
            i: ei,
            j: ej,
            amount: theta,
        };
    }
    Err(CoreError::Validation(
        "transport simplex exceeded its iteration cap (numerically degenerate input)".into(),
    ))
}

/// Edges of the unique tree path from target node `ej` to source node `ei`,
/// ordered starting at the target side.
fn tree_path(
    basis: &[BasisEdge],
    na: usize,
    nb: usize,
    ei: usize,
    ej: usize,
) -> CoreResult<Vec<usize>> {
    let n_nodes = na + nb;
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_nodes];
    for (e, edge) in basis.iter().enumerate() {
        adj[edge.i].push((na + edge.j, e));
        adj[na + edge.j].push((edge.i, e));
    }
    let start = na + ej;
    let goal = ei;
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n_nodes];
    let mut seen = vec![false; n_nodes];
    seen[start] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == goal {
            break;
        }
        for &(next, e) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some((node, e));
                queue.push_back(next);
            }
        }
    }
    if !seen[goal] {
        return Err(CoreError::Validation(
            "transport basis lost connectivity (degenerate instance)".into(),
        ));
    }
    let mut path = Vec::new();
    let mut node = goal;
    while node != start {
        let (prev, e) = parent[node].expect("path reconstruction");
        path.push(e);
        node = prev;
    }
    path.reverse();
    Ok(path)
}

// ---------------------------------------------------------------------------
// Shared dispatch
// ---------------------------------------------------------------------------

fn check_cap(na: usize, nb: usize) -> CoreResult<()> {
    if na > ATOM_CAP || nb > ATOM_CAP {
        return Err(CoreError::Capacity(format!(
            "exact transport accepts at most {ATOM_CAP} atoms per measure (got {na} and {nb}); \
             use the sorted 1-d distance or subsample"
        )));
    }
    Ok(())
}

fn normalized_masses(masses: &[f64]) -> CoreResult<Vec<f64>> {
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(CoreError::Validation(format!(
            "measure masses must sum to 1 (defect {:e})",
            (total - 1.0).abs()
        )));
    }
    // Below-tolerance defects are absorbed by renormalization so the two
    // sides of the transport problem balance.
    Ok(masses.iter().map(|m| m / total).collect())
}

fn is_uniform(masses: &[f64]) -> bool {
    let m = masses.len() as f64;
    let u = 1.0 / m;
    masses.iter().all(|x| x.to_bits() == u.to_bits())
}

/// Exact discrete optimal transport on a dense cost matrix (`na x nb`,
/// row-major) with the given atom masses.
fn solve_discrete_ot(
    cost: &[f64],
    ma: &[f64],
    mb: &[f64],
) -> CoreResult<(f64, TransportPlan)> {
    let na = ma.len();
    let nb = mb.len();
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(CoreError::Validation(
            "transport cost matrix must be finite".into(),
        ));
    }
    if na == nb && is_uniform(ma) && is_uniform(mb) {
        let m = na;
        let mass = 1.0 / m as f64;
        let mut sigma = solve_assignment(cost, m);
        canonicalize_ties(cost, m, &mut sigma);
        let mut entries = Vec::with_capacity(m);
        let mut total = 0.0;
        for (i, &j) in sigma.iter().enumerate() {
            let contribution = mass * cost[i * m + j];
            total += contribution;
            entries.push(PlanEntry {
                i,
                j,
                mass,
                cost_contribution: contribution,
            });
        }
        return Ok((total, TransportPlan { entries, cost: total }));
    }
    let ma = normalized_masses(ma)?;
    let mb = normalized_masses(mb)?;
    let basis = solve_simplex(cost, &ma, &mb)?;
    let mut entries: Vec<PlanEntry> = basis
        .iter()
        .filter(|e| e.amount > 0.0)
        .map(|e| PlanEntry {
            i: e.i,
            j: e.j,
            mass: e.amount,
            cost_contribution: e.amount * cost[e.i * mb.len() + e.j],
        })
        .collect();
    entries.sort_by_key(|e| (e.i, e.j));
    let total = entries.iter().map(|e| e.cost_contribution).sum();
    Ok((total, TransportPlan { entries, cost: total }))
}

// ---------------------------------------------------------------------------
// Public distances
// ---------------------------------------------------------------------------

/// Exact Wasserstein-1 distance between two labeled point measures under the
/// chosen ground metric, with the optimal plan.
pub fn wasserstein1_exact(
    a: &LabeledPointMeasure,
    b: &LabeledPointMeasure,
    metric: ProductMetric,
) -> CoreResult<(f64, TransportPlan)> {
    if a.dim() != b.dim() {
        return Err(CoreError::Shape(format!(
            "state dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    check_cap(a.len(), b.len())?;
    let nb = b.len();
    let mut cost = vec![0.0f64; a.len() * nb];
    cost.par_chunks_mut(nb).enumerate().for_each(|(i, row)| {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = metric.point_distance(a.atom(i), a.label(i), b.atom(j), b.label(j));
        }
    });
    solve_discrete_ot(&cost, a.masses(), b.masses())
}

/// Exact 1-d equal-count uniform-mass Wasserstein-1 via the sorted coupling:
/// `(1/M) sum |a_(i) - b_(i)|`.
pub fn wasserstein1_sorted_1d(a: &[f64], b: &[f64]) -> CoreResult<f64> {
    if a.len() != b.len() {
        return Err(CoreError::Validation(format!(
            "sorted 1-d distance needs equal sample counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(CoreError::Domain("sorted 1-d distance needs >= 1 sample".into()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(CoreError::Validation("samples must be finite".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("finite samples"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("finite samples"));
    let m = xs.len() as f64;
    Ok(xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - y).abs() / m)
        .sum())
}

/// Exact Wasserstein-1 between labeled path measures: atom distance is the
/// sup-norm of the trajectory difference, combined with the label distance
/// through the metric.
pub fn path_wasserstein1(
    a: &LabeledPathMeasure,
    b: &LabeledPathMeasure,
    metric: ProductMetric,
) -> CoreResult<f64> {
    if a.grid() != b.grid() || a.dim() != b.dim() {
        return Err(CoreError::Shape(
            "path measures must share one grid and one dimension".into(),
        ));
    }
    check_cap(a.len(), b.len())?;
    let nb = b.len();
    let steps = a.grid().steps();
    let mut cost = vec![0.0f64; a.len() * nb];
    cost.par_chunks_mut(nb).enumerate().for_each(|(i, row)| {
        let ai = a.atom(i);
        for (j, slot) in row.iter_mut().enumerate() {
            let bj = b.atom(j);
            let mut sup = 0.0f64;
            for node in 0..=steps {
                sup = sup.max(state_distance(ai.node_values(node), bj.node_values(node)));
            }
            *slot = metric.combine(sup, (a.label(i) - b.label(j)).abs());
        }
    });
    let (value, _) = solve_discrete_ot(&cost, a.masses(), b.masses())?;
    Ok(value)
}

/// Block-fibered distance between point-measure families: the average over
/// blocks of the per-fiber Wasserstein-1 distance in the state metric.
pub fn dist_fibered(a: &FiberedPointMeasure, b: &FiberedPointMeasure) -> CoreResult<f64> {
    if a.n_blocks() != b.n_blocks() {
        return Err(CoreError::Validation(format!(
            "fibered measures need one common block partition, got {} vs {} blocks",
            a.n_blocks(),
            b.n_blocks()
        )));
    }
    let n = a.n_blocks();
    let mut acc = 0.0;
    for i in 0..n {
        let (w, _) = wasserstein1_exact(a.fiber(i), b.fiber(i), ProductMetric::StateOnly)?;
        acc += w / n as f64;
    }
    Ok(acc)
}

/// Block-fibered distance between path-measure families: the average over
/// blocks of the per-fiber path Wasserstein-1 in the sup-norm state metric.
pub fn dist_fibered_paths(a: &FiberedPathMeasure, b: &FiberedPathMeasure) -> CoreResult<f64> {
    if a.n_blocks() != b.n_blocks() {
        return Err(CoreError::Validation(format!(
            "fibered measures need one common block partition, got {} vs {} blocks",
            a.n_blocks(),
            b.n_blocks()
        )));
    }
    let n = a.n_blocks();
    let mut acc = 0.0;
    for i in 0..n {
        acc += path_wasserstein1(a.fiber(i), b.fiber(i), ProductMetric::StateOnly)? / n as f64;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Stability bound evaluators
// ---------------------------------------------------------------------------

/// Stability of the mean-field path measure in the initial measure:
/// `sqrt(2) * max(1, L_W) * d0 * 2 e^{2 L_K t}`.
pub fn dobrushin_bound(l_k: f64, l_w: f64, d0: f64, t: f64) -> f64 {
    std::f64::consts::SQRT_2 * l_w.max(1.0) * d0 * 2.0 * (2.0 * l_k * t).exp()
}

/// Stability in the block-fibered distance with a connectivity-profile
/// mismatch term: `2 dI0 e^{2 L_K t} + (1/2) |dW|_{L1} (e^{2 L_K t} - 1)`.
pub fn dobrushin_bound_nonlip(l_k: f64, di0: f64, w_l1_diff: f64, t: f64) -> f64 {
    let growth = (2.0 * l_k * t).exp();
    2.0 * di0 * growth + 0.5 * w_l1_diff * (growth - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{TimeGrid, Trajectory};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point_measure_1d(atoms: Vec<f64>, labels: Vec<f64>) -> LabeledPointMeasure {
        LabeledPointMeasure::uniform(1, atoms, labels).unwrap()
    }

    fn random_measure(rng: &mut ChaCha8Rng, m: usize, dim: usize) -> LabeledPointMeasure {
        let atoms: Vec<f64> = (0..m * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        LabeledPointMeasure::uniform(dim, atoms, labels).unwrap()
    }

    /// Brute-force optimum over all M! matchings, summed in row order with
    /// mass 1/M exactly as the plan evaluates it.
    fn brute_force_uniform(cost: &[f64], m: usize) -> f64 {
        fn go(cost: &[f64], m: usize, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
            if row == m {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            let mass = 1.0 / m as f64;
            for j in 0..m {
                if !used[j] {
                    used[j] = true;
                    go(cost, m, row + 1, used, acc + mass * cost[row * m + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        go(cost, m, 0, &mut vec![false; m], 0.0, &mut best);
        best
    }

    /// Exact 1-d Wasserstein-1 for general masses via the CDF formula.
    fn w1_1d_cdf(ap: &[f64], am: &[f64], bp: &[f64], bm: &[f64]) -> f64 {
        let mut events: Vec<(f64, f64, f64)> = ap
            .iter()
            .zip(am)
            .map(|(&p, &m)| (p, m, 0.0))
            .chain(bp.iter().zip(bm).map(|(&p, &m)| (p, 0.0, m)))
            .collect();
        events.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let (mut fa, mut fb, mut total) = (0.0f64, 0.0f64, 0.0f64);
        let mut last = events[0].0;
        for (pos, da, db) in events {
            total += (fa - fb).abs() * (pos - last);
            fa += da;
            fb += db;
            last = pos;
        }
        total
    }

    // -- frozen examples --------------------------------------------------------

    #[test]
    fn identical_measures_have_zero_distance_and_identity_plan() {
        let a = point_measure_1d(vec![0.3, -0.2, 0.9], vec![0.2, 0.5, 0.8]);
        let (w, plan) = wasserstein1_exact(&a, &a, ProductMetric::EuclideanProduct).unwrap();
        assert_eq!(w, 0.0);
        for (k, e) in plan.entries().iter().enumerate() {
            assert_eq!((e.i, e.j), (k, k));
        }
    }

    #[test]
    fn tied_matching_prefers_lowest_index_pairs() {
        // {0,1} vs {1,2}: both matchings cost 1; the canonical plan keeps
        // atom order (0 -> first target, 1 -> second).
        let a = point_measure_1d(vec![0.0, 1.0], vec![0.25, 0.75]);
        let b = point_measure_1d(vec![1.0, 2.0], vec![0.25, 0.75]);
        let (w, plan) = wasserstein1_exact(&a, &b, ProductMetric::StateOnly).unwrap();
        assert!((w - 1.0).abs() <= 1e-15);
        assert_eq!(plan.entries()[0].i, 0);
        assert_eq!(plan.entries()[0].j, 0);
        assert_eq!(plan.entries()[1].j, 1);
    }

    #[test]
    fn forced_crossing_instance() {
        let a = point_measure_1d(vec![0.0, 2.0], vec![0.25, 0.75]);
        let b = point_measure_1d(vec![1.0, 1.0], vec![0.25, 0.75]);
        let (w, _) = wasserstein1_exact(&a, &b, ProductMetric::StateOnly).unwrap();
        assert!((w - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn sorted_1d_examples() {
        assert_eq!(
            wasserstein1_sorted_1d(&[0.4, 0.1, 0.7], &[0.7, 0.4, 0.1]).unwrap(),
            0.0
        );
        let w = wasserstein1_sorted_1d(&[0.0, 1.0], &[0.5, 0.5]).unwrap();
        assert!((w - 0.5).abs() <= 1e-15);
        assert!(wasserstein1_sorted_1d(&[0.0], &[0.1, 0.2]).is_err());
    }

    // -- oracle equivalences ------------------------------------------------------

    #[test]
    fn assignment_matches_brute_force_up_to_seven_atoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..60 {
            let m = rng.gen_range(1..=7);
            let dim = rng.gen_range(1..=2);
            let a = random_measure(&mut rng, m, dim);
            let b = random_measure(&mut rng, m, dim);
            let metric = if trial % 2 == 0 {
                ProductMetric::StateOnly
            } else {
                ProductMetric::EuclideanProduct
            };
            let (w, _) = wasserstein1_exact(&a, &b, metric).unwrap();
            let mut cost = vec![0.0; m * m];
            for i in 0..m {
                for j in 0..m {
                    cost[i * m + j] =
                        metric.point_distance(a.atom(i), a.label(i), b.atom(j), b.label(j));
                }
            }
            let brute = brute_force_uniform(&cost, m);
            assert!(
                (w - brute).abs() <= 1e-12,
                "trial {trial}: assignment {w} vs brute {brute}"
            );
        }
    }

    #[test]
    fn sorted_1d_equals_exact_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..25 {
            let m = 64;
            let xs: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let ys: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let labels: Vec<f64> = (0..m).map(|k| (k as f64 + 0.5) / m as f64).collect();
            let a = point_measure_1d(xs.clone(), labels.clone());
            let b = point_measure_1d(ys.clone(), labels);
            let (exact, _) = wasserstein1_exact(&a, &b, ProductMetric::StateOnly).unwrap();
            let sorted = wasserstein1_sorted_1d(&xs, &ys).unwrap();
            assert!(
                (exact - sorted).abs() <= 1e-12,
                "exact {exact} vs sorted {sorted}"
            );
        }
    }

    #[test]
    fn simplex_matches_cdf_oracle_for_general_masses() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for trial in 0..40 {
            let na = rng.gen_range(1..=6);
            let nb = rng.gen_range(1..=6);
            let ap: Vec<f64> = (0..na).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bp: Vec<f64> = (0..nb).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let raw_am: Vec<f64> = (0..na).map(|_| rng.gen_range(0.1..1.0)).collect();
            let raw_bm: Vec<f64> = (0..nb).map(|_| rng.gen_range(0.1..1.0)).collect();
            let sa: f64 = raw_am.iter().sum();
            let sb: f64 = raw_bm.iter().sum();
            let am: Vec<f64> = raw_am.iter().map(|m| m / sa).collect();
            let bm: Vec<f64> = raw_bm.iter().map(|m| m / sb).collect();
            let labels_a: Vec<f64> = (0..na).map(|k| (k as f64 + 0.5) / na as f64).collect();
            let labels_b: Vec<f64> = (0..nb).map(|k| (k as f64 + 0.5) / nb as f64).collect();
            let a = LabeledPointMeasure::new(1, ap.clone(), labels_a, am.clone()).unwrap();
            let b = LabeledPointMeasure::new(1, bp.clone(), labels_b, bm.clone()).unwrap();
            let (w, plan) = wasserstein1_exact(&a, &b, ProductMetric::StateOnly).unwrap();
            let oracle = w1_1d_cdf(&ap, &am, &bp, &bm);
            assert!(
                (w - oracle).abs() <= 1e-10,
                "trial {trial}: simplex {w} vs cdf {oracle}"
            );
            // Plan marginals reproduce the input masses.
            for (k, s) in plan.source_marginals(na).iter().enumerate() {
                assert!((s - am[k]).abs() <= 1e-10);
            }
            for (k, s) in plan.target_marginals(nb).iter().enumerate() {
                assert!((s - bm[k]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn simplex_handles_zero_mass_atoms_and_unequal_counts() {
        let a = LabeledPointMeasure::new(1, vec![0.0, 5.0], vec![0.25, 0.75], vec![1.0, 0.0])
            .unwrap();
        let b = LabeledPointMeasure::new(1, vec![1.0], vec![0.5], vec![1.0]).unwrap();
        let (w, _) = wasserstein1_exact(&a, &b, ProductMetric::StateOnly).unwrap();
        assert!((w - 1.0).abs() <= 1e-12, "got {w}");
    }

    // -- metric axioms --------------------------------------------------------------

    #[test]
    fn metric_axioms_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..15 {
            let m = rng.gen_range(2..=9);
            let a = random_measure(&mut rng, m, 1);
            let b = random_measure(&mut rng, m, 1);
            let c = random_measure(&mut rng, m, 1);
            let metric = ProductMetric::EuclideanProduct;
            let (ab, _) = wasserstein1_exact(&a, &b, metric).unwrap();
            let (ba, _) = wasserstein1_exact(&b, &a, metric).unwrap();
            let (ac, _) = wasserstein1_exact(&a, &c, metric).unwrap();
            let (cb, _) = wasserstein1_exact(&c, &b, metric).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() <= 1e-12, "symmetry {ab} vs {ba}");
            assert!(ab <= ac + cb + 1e-10, "triangle {ab} > {ac} + {cb}");
        }
    }

    #[test]
    fn plan_cost_is_sum_of_contributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let a = random_measure(&mut rng, 12, 2);
        let b = random_measure(&mut rng, 12, 2);
        let (w, plan) = wasserstein1_exact(&a, &b, ProductMetric::EuclideanProduct).unwrap();
        let total: f64 = plan.entries().iter().map(|e| e.cost_contribution).sum();
        assert_eq!(w.to_bits(), plan.cost().to_bits());
        assert!((total - w).abs() <= 1e-15);
        let mut csv = Vec::new();
        plan.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("i,j,mass,cost_contribution\n"));
        assert_eq!(text.lines().count(), 1 + plan.entries().len());
    }

    #[test]
    fn capacity_and_shape_guards() {
        let m = ATOM_CAP + 1;
        let atoms: Vec<f64> = (0..m).map(|k| k as f64 * 1e-6).collect();
        let labels: Vec<f64> = (0..m).map(|k| (k as f64 + 0.5) / m as f64).collect();
        let big = LabeledPointMeasure::uniform(1, atoms, labels).unwrap();
        let small = point_measure_1d(vec![0.0], vec![0.5]);
        assert!(matches!(
            wasserstein1_exact(&big, &small, ProductMetric::StateOnly),
            Err(CoreError::Capacity(_))
        ));
        let d2 = LabeledPointMeasure::uniform(2, vec![0.0, 0.0], vec![0.5]).unwrap();
        assert!(matches!(
            wasserstein1_exact(&d2, &small, ProductMetric::StateOnly),
            Err(CoreError::Shape(_))
        ));
    }

    // -- path distances ---------------------------------------------------------------

    fn constant_path_measure(values: &[f64], labels: Vec<f64>) -> LabeledPathMeasure {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let atoms = values
            .iter()
            .map(|&v| Trajectory::constant(grid, &[v]).unwrap())
            .collect();
        LabeledPathMeasure::uniform(atoms, labels).unwrap()
    }

    #[test]
    fn path_distance_basics() {
        let a = constant_path_measure(&[0.0], vec![0.5]);
        let b = constant_path_measure(&[1.0], vec![0.5]);
        assert_eq!(path_wasserstein1(&a, &a, ProductMetric::StateOnly).unwrap(), 0.0);
        let w = path_wasserstein1(&a, &b, ProductMetric::StateOnly).unwrap();
        assert!((w - 1.0).abs() <= 1e-15);
        // Same paths, labels 0.2 vs 0.6: only the label term remains.
        let c = constant_path_measure(&[0.0], vec![0.2]);
        let d = constant_path_measure(&[0.0], vec![0.6]);
        let w = path_wasserstein1(&c, &d, ProductMetric::EuclideanProduct).unwrap();
        assert!((w - 0.4).abs() <= 1e-15);
    }

    #[test]
    fn path_distance_dominates_every_time_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let m = 5;
        let make = |rng: &mut ChaCha8Rng| {
            let atoms: Vec<Trajectory> = (0..m)
                .map(|_| {
                    let a: f64 = rng.gen_range(-1.0..1.0);
                    let b: f64 = rng.gen_range(-1.0..1.0);
                    Trajectory::from_scalar_fn(grid, |t| a + b * (3.0 * t).sin())
                })
                .collect();
            let labels: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
            LabeledPathMeasure::uniform(atoms, labels).unwrap()
        };
        for _ in 0..5 {
            let a = make(&mut rng);
            let b = make(&mut rng);
            let pw = path_wasserstein1(&a, &b, ProductMetric::EuclideanProduct).unwrap();
            for node in [0usize, 7, 20] {
                let (slice, _) = wasserstein1_exact(
                    &a.slice(node).unwrap(),
                    &b.slice(node).unwrap(),
                    ProductMetric::EuclideanProduct,
                )
                .unwrap();
                assert!(
                    slice <= pw + 1e-12,
                    "slice {slice} above path distance {pw} at node {node}"
                );
            }
        }
    }

    // -- fibered distances ---------------------------------------------------------------

    #[test]
    fn fibered_distance_averages_per_block_values() {
        let fiber = |v: f64| {
            LabeledPointMeasure::new(1, vec![v], vec![0.5], vec![1.0]).unwrap()
        };
        let a = FiberedPointMeasure::new(vec![fiber(0.0), fiber(0.0)]).unwrap();
        let b = FiberedPointMeasure::new(vec![fiber(0.2), fiber(0.4)]).unwrap();
        let d = dist_fibered(&a, &b).unwrap();
        assert!((d - 0.3).abs() <= 1e-15);
        assert_eq!(dist_fibered(&a, &a).unwrap(), 0.0);
        // Single block reduces to the plain distance.
        let a1 = FiberedPointMeasure::new(vec![fiber(0.0)]).unwrap();
        let b1 = FiberedPointMeasure::new(vec![fiber(0.7)]).unwrap();
        let (plain, _) =
            wasserstein1_exact(a1.fiber(0), b1.fiber(0), ProductMetric::StateOnly).unwrap();
        assert_eq!(dist_fibered(&a1, &b1).unwrap(), plain);
        // Partition mismatch rejected.
        assert!(dist_fibered(&a, &a1).is_err());
    }

    #[test]
    fn fibered_path_distance_matches_point_version_for_constant_paths() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let fiber = |v: f64| {
            LabeledPathMeasure::new(
                vec![Trajectory::constant(grid, &[v]).unwrap()],
                vec![0.5],
                vec![1.0],
            )
            .unwrap()
        };
        let a = FiberedPathMeasure::new(vec![fiber(0.1), fiber(0.5)]).unwrap();
        let b = FiberedPathMeasure::new(vec![fiber(0.3), fiber(0.1)]).unwrap();
        let d = dist_fibered_paths(&a, &b).unwrap();
        assert!((d - 0.3).abs() <= 1e-15);
        let d0 = dist_fibered(&a.slice(0).unwrap(), &b.slice(0).unwrap()).unwrap();
        assert!((d - d0).abs() <= 1e-15);
    }

    // -- bound evaluators ---------------------------------------------------------------

    #[test]
    fn dobrushin_bound_values() {
        assert_eq!(dobrushin_bound(3.0, 2.0, 0.0, 5.0), 0.0);
        let v = dobrushin_bound(7.0, 1.0, 0.1, 0.0);
        assert!((v - 0.282842712474619).abs() <= 1e-12, "got {v}");
        // sqrt(2) * 2 * 1 * 2 e^2
        let v = dobrushin_bound(1.0, 2.0, 1.0, 1.0);
        assert!((v - 41.79881339297344).abs() <= 1e-10, "got {v}");
        // Sub-unit graphon constants are clamped to 1.
        let v = dobrushin_bound(0.0, 0.5, 1.0, 1.0);
        assert!((v - 2.0 * std::f64::consts::SQRT_2).abs() <= 1e-12);
    }

    #[test]
    fn dobrushin_nonlip_values() {
        assert_eq!(dobrushin_bound_nonlip(2.0, 0.0, 0.0, 3.0), 0.0);
        let v = dobrushin_bound_nonlip(5.0, 0.3, 0.9, 0.0);
        assert!((v - 0.6).abs() <= 1e-15);
        let e2 = (2.0f64).exp();
        let v = dobrushin_bound_nonlip(1.0, 0.1, 0.2, 1.0);
        assert!((v - (0.2 * e2 + 0.1 * (e2 - 1.0))).abs() <= 1e-14);
        assert!((v - 2.1167168).abs() <= 1e-6, "got {v}");
    }
}
