//! Exact optimal transport between weighted point clouds with squared
//! Euclidean cost.
//!
//! Three solvers share one entry point:
//! * 1-D with uniform weights and equal sizes: sorting (monotone coupling).
//! * Uniform weights, equal sizes, `d ≥ 2`: auction with ε-scaling on a
//!   priced kd-tree, with a certified duality gap.
//! * General weights: successive shortest paths with potentials on the
//!   dense bipartite graph.

use crate::error::{Error, Result};

use super::assignment::auction;

/// Weighted point cloud in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

const WEIGHT_SUM_TOL: f64 = 1e-9;

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptyInput("point dimension"));
        }
        if coords.is_empty() {
            return Err(Error::EmptyInput("point cloud"));
        }
        if coords.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: coords.len() % dim,
            });
        }
        let n = coords.len() / dim;
        if weights.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: weights.len(),
            });
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                term: "point coordinates",
                index: i / dim,
            });
        }
        if let Some(bad) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidWeights(format!("point weight {bad}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!("point weights sum to {sum}")));
        }
        Ok(PointCloud { dim, coords, weights })
    }

    /// Equal weights `1/n`.
    pub fn uniform(dim: usize, coords: Vec<f64>) -> Result<Self> {
        let n = if dim == 0 { 0 } else { coords.len() / dim };
        let w = vec![1.0 / n.max(1) as f64; n];
        Self::new(dim, coords, w)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).ok_or(Error::EmptyInput("point cloud"))?;
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            coords.extend_from_slice(r);
        }
        Self::uniform(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn is_uniform(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|w| (w - w0).abs() <= 1e-12 * w0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Pick the fastest exact method for the inputs.
    Auto,
    Sorted1d,
    Auction,
    ShortestPath,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtOptions {
    pub solver: Solver,
    /// Auction tolerance on the duality gap, relative to the squared diameter.
    pub relative_gap: f64,
    /// ε reduction factor between auction phases.
    pub eps_scaling: f64,
}

impl Default for OtOptions {
    fn default() -> Self {
        OtOptions {
            solver: Solver::Auto,
            relative_gap: 1e-9,
            eps_scaling: 7.0,
        }
    }
}

/// Optimal coupling: total cost, sparse plan `(i, j, mass)` and the duality
/// gap certifying optimality (zero for the exact combinatorial solvers up to
/// rounding).
#[derive(Debug, Clone)]
pub struct DiscreteCoupling {
    pub cost: f64,
    pub plan: Vec<(usize, usize, f64)>,
    pub gap: f64,
    pub solver: Solver,
}

impl DiscreteCoupling {
    /// Row and column sums of the plan.
    pub fn marginals(&self, n_source: usize, n_target: usize) -> (Vec<f64>, Vec<f64>) {
        let mut a = vec![0.0; n_source];
        let mut b = vec![0.0; n_target];
        for &(i, j, m) in &self.plan {
            a[i] += m;
            b[j] += m;
        }
        (a, b)
    }
}

/// Squared 2-Wasserstein distance between two point clouds.
pub fn ot_discrete(source: &PointCloud, target: &PointCloud) -> Result<DiscreteCoupling> {
    ot_discrete_with(source, target, &OtOptions::default())
}

pub fn ot_discrete_with(source: &PointCloud, target: &PointCloud, opts: &OtOptions) -> Result<DiscreteCoupling> {
    if source.dim != target.dim {
        return Err(Error::DimensionMismatch {
            expected: source.dim,
            found: target.dim,
        });
    }
    let square_uniform = source.len() == target.len() && source.is_uniform() && target.is_uniform();
    let solver = match opts.solver {
        Solver::Auto if square_uniform && source.dim == 1 => Solver::Sorted1d,
        Solver::Auto if square_uniform => Solver::Auction,
        Solver::Auto => Solver::ShortestPath,
        s @ (Solver::Sorted1d | Solver::Auction) if !square_uniform => {
            return Err(Error::InvalidWeights(format!(
                "{s:?} needs uniform weights and equal sizes"
            )))
        }
        Solver::Sorted1d if source.dim != 1 => {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: source.dim,
            })
        }
        s => s,
    };
    Ok(match solver {
        Solver::Sorted1d => sorted_1d(source, target),
        Solver::Auction => auction_uniform(source, target, opts),
        _ => shortest_path(source, target),
    })
}

fn sorted_1d(source: &PointCloud, target: &PointCloud) -> DiscreteCoupling {
    let n = source.len();
    let argsort = |c: &[f64]| {
        let mut idx: Vec<usize> = (0..c.len()).collect();
        idx.sort_by(|&a, &b| c[a].total_cmp(&c[b]));
        idx
    };
    let sx = argsort(&source.coords);
    let sy = argsort(&target.coords);
    let m = 1.0 / n as f64;
    let mut cost = 0.0;
    let mut plan = Vec::with_capacity(n);
    for (&i, &j) in sx.iter().zip(&sy) {
        cost += (source.coords[i] - target.coords[j]).powi(2);
        plan.push((i, j, m));
    }
    DiscreteCoupling {
        cost: cost * m,
        plan,
        gap: 0.0,
        solver: Solver::Sorted1d,
    }
}

fn centered(p: &PointCloud) -> (Vec<f64>, Vec<f64>) {
    let d = p.dim;
    let n = p.len() as f64;
    let mut mean = vec![0.0; d];
    for c in p.coords.chunks(d) {
        for k in 0..d {
            mean[k] += c[k] / n;
        }
    }
    let mut out = p.coords.clone();
    for c in out.chunks_mut(d) {
        for k in 0..d {
            c[k] -= mean[k];
        }
    }
    (out, mean)
}

fn auction_uniform(source: &PointCloud, target: &PointCloud, opts: &OtOptions) -> DiscreteCoupling {
    // With equal uniform marginals the optimal plan is translation invariant
    // and the cost shifts by the squared mean difference.
    let (x, mx) = centered(source);
    let (y, my) = centered(target);
    let shift: f64 = mx.iter().zip(&my).map(|(a, b)| (a - b) * (a - b)).sum();
    let d = source.dim;
    let radius = |p: &[f64]| {
        p.chunks(d)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
            .sqrt()
    };
    let diam2 = (radius(&x) + radius(&y)).powi(2);
    let eps = opts.relative_gap * diam2;
    let a = auction(d, &x, &y, eps, opts.eps_scaling.max(1.5));
    let n = source.len();
    let m = 1.0 / n as f64;
    DiscreteCoupling {
        cost: a.cost + shift,
        plan: a.target.iter().enumerate().map(|(i, &j)| (i, j, m)).collect(),
        gap: a.gap,
        solver: Solver::Auction,
    }
}

/// Successive shortest paths with Dijkstra on reduced costs. Dense O(n²)
/// Dijkstra per augmentation; intended for a few hundred points per side.
fn shortest_path(source: &PointCloud, target: &PointCloud) -> DiscreteCoupling {
    let (m, n) = (source.len(), target.len());
    let mut cost = vec![0.0; m * n];
    for i in 0..m {
        let xi = source.point(i);
        for j in 0..n {
            cost[i * n + j] = xi.iter().zip(target.point(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    let mut supply = source.weights.clone();
    let total: f64 = supply.iter().sum();
    let tsum: f64 = target.weights.iter().sum();
    let mut demand: Vec<f64> = target.weights.iter().map(|b| b * total / tsum).collect();
    let tol = 1e-14 * total;

    let mut flow = vec![0.0; m * n];
    // Potentials: nodes 0..m are sources, m..m+n are targets.
    let mut pot = vec![0.0; m + n];
    let mut dist = vec![0.0; m + n];
    let mut done = vec![false; m + n];
    let mut pred = vec![usize::MAX; m + n];

    loop {
        if supply.iter().all(|&s| s <= tol) || demand.iter().all(|&s| s <= tol) {
            break;
        }
        dist.iter_mut().for_each(|v| *v = f64::INFINITY);
        done.iter_mut().for_each(|v| *v = false);
        pred.iter_mut().for_each(|v| *v = usize::MAX);
        for i in 0..m {
            if supply[i] > tol {
                dist[i] = 0.0;
            }
        }
        let mut sink = usize::MAX;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for (v, (&dv, &fin)) in dist.iter().zip(&done).enumerate() {
                if !fin && dv < best {
                    best = dv;
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= m && demand[u - m] > tol {
                sink = u;
                break;
            }
            if u < m {
                for j in 0..n {
                    let v = m + j;
                    if done[v] {
                        continue;
                    }
                    let rc = (cost[u * n + j] + pot[u] - pot[v]).max(0.0);
                    if dist[u] + rc < dist[v] {
                        dist[v] = dist[u] + rc;
                        pred[v] = u;
                    }
                }
            } else {
                let j = u - m;
                for i in 0..m {
                    if done[i] || flow[i * n + j] <= tol {
                        continue;
                    }
                    let rc = (-cost[i * n + j] + pot[u] - pot[i]).max(0.0);
                    if dist[u] + rc < dist[i] {
                        dist[i] = dist[u] + rc;
                        pred[i] = u;
                    }
                }
            }
        }
        if sink == usize::MAX {
            break;
        }
        let dt = dist[sink];
        for v in 0..m + n {
            pot[v] += dist[v].min(dt);
        }
        // Bottleneck along the path.
        let mut delta = demand[sink - m];
        let mut v = sink;
        while pred[v] != usize::MAX {
            let u = pred[v];
            if u >= m {
                delta = delta.min(flow[v * n + (u - m)]);
            }
            v = u;
        }
        delta = delta.min(supply[v]);
        let origin = v;
        let mut v = sink;
        while pred[v] != usize::MAX {
            let u = pred[v];
            if u < m {
                flow[u * n + (v - m)] += delta;
            } else {
                flow[v * n + (u - m)] -= delta;
            }
            v = u;
        }
        supply[origin] -= delta;
        demand[sink - m] -= delta;
    }

    let mut primal = 0.0;
    let mut plan = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let f = flow[i * n + j];
            if f > tol {
                primal += f * cost[i * n + j];
                plan.push((i, j, f));
            }
        }
    }
    // Dual feasible pair (u_i, v_j) = (−π_i + c, π_j + c') built from the
    // potentials, shifted so every constraint u_i + v_j ≤ c_ij holds exactly.
    let mut slack = f64::INFINITY;
    for i in 0..m {
        for j in 0..n {
            slack = slack.min(cost[i * n + j] + pot[i] - pot[m + j]);
        }
    }
    let dual: f64 = (0..n).map(|j| target.weights[j] * pot[m + j]).sum::<f64>()
        - (0..m).map(|i| source.weights[i] * pot[i]).sum::<f64>()
        + slack.min(0.0);
    DiscreteCoupling {
        cost: primal,
        plan,
        gap: (primal - dual).max(0.0),
        solver: Solver::ShortestPath,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed;
        move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    #[test]
    fn translated_cloud_costs_shift_squared() {
        let mut r = lcg(3);
        let x: Vec<f64> = (0..40 * 2).map(|_| r()).collect();
        let y: Vec<f64> = x.chunks(2).flat_map(|c| [c[0] + 3.0, c[1] - 4.0]).collect();
        let a = PointCloud::uniform(2, x).unwrap();
        let b = PointCloud::uniform(2, y).unwrap();
        let c = ot_discrete(&a, &b).unwrap();
        assert_eq!(c.solver, Solver::Auction);
        assert_relative_eq!(c.cost, 25.0, max_relative = 1e-9);
    }

    #[test]
    fn sorted_matches_shortest_path_in_1d() {
        let mut r = lcg(5);
        let a = PointCloud::uniform(1, (0..30).map(|_| r()).collect()).unwrap();
        let b = PointCloud::uniform(1, (0..30).map(|_| r() * 3.0).collect()).unwrap();
        let s = ot_discrete(&a, &b).unwrap();
        let opts = OtOptions {
            solver: Solver::ShortestPath,
            ..OtOptions::default()
        };
        let p = ot_discrete_with(&a, &b, &opts).unwrap();
        assert_eq!(s.solver, Solver::Sorted1d);
        assert_relative_eq!(s.cost, p.cost, max_relative = 1e-10);
    }

    #[test]
    fn auction_matches_shortest_path() {
        let mut r = lcg(11);
        let a = PointCloud::uniform(3, (0..60 * 3).map(|_| r()).collect()).unwrap();
        let b = PointCloud::uniform(3, (0..60 * 3).map(|_| r() * 1.5 + 0.2).collect()).unwrap();
        let auc = ot_discrete(&a, &b).unwrap();
        let opts = OtOptions {
            solver: Solver::ShortestPath,
            ..OtOptions::default()
        };
        let ssp = ot_discrete_with(&a, &b, &opts).unwrap();
        assert_relative_eq!(auc.cost, ssp.cost, max_relative = 1e-7);
        assert!(ssp.gap < 1e-10);
    }

    #[test]
    fn unequal_weights_two_points() {
        // All mass from one source point split between two targets.
        let a = PointCloud::new(1, vec![0.0], vec![1.0]).unwrap();
        let b = PointCloud::new(1, vec![1.0, 2.0], vec![0.25, 0.75]).unwrap();
        let c = ot_discrete(&a, &b).unwrap();
        assert_relative_eq!(c.cost, 0.25 + 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(PointCloud::new(2, vec![0.0; 3], vec![1.0]).is_err());
        assert!(PointCloud::new(1, vec![0.0, 1.0], vec![0.7, 0.7]).is_err());
        let a = PointCloud::uniform(1, vec![0.0, 1.0]).unwrap();
        let b = PointCloud::uniform(2, vec![0.0, 1.0]).unwrap();
        assert!(matches!(ot_discrete(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn general_plan_has_requested_marginals(
            (wa, wb, pts) in (
                proptest::collection::vec(0.05f64..1.0, 6),
                proptest::collection::vec(0.05f64..1.0, 9),
                proptest::collection::vec(-2.0f64..2.0, 30),
            )
        ) {
            let na: f64 = wa.iter().sum();
            let nb: f64 = wb.iter().sum();
            let a = PointCloud::new(2, pts[..12].to_vec(), wa.iter().map(|w| w / na).collect()).unwrap();
            let b = PointCloud::new(2, pts[12..].to_vec(), wb.iter().map(|w| w / nb).collect()).unwrap();
            let c = ot_discrete(&a, &b).unwrap();
            let (ra, rb) = c.marginals(6, 9);
            for (x, y) in ra.iter().zip(a.weights()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
            for (x, y) in rb.iter().zip(b.weights()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
            prop_assert!(c.gap < 1e-10);
            prop_assert!(c.cost >= 0.0);
        }
    }
}
