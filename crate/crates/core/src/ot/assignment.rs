//! Forward auction with ε-scaling for the squared-Euclidean assignment problem.

use nalgebra::DMatrix;

use super::kdtree::PricedKdTree;
use crate::linalg::SymEig;

const UNASSIGNED: usize = usize::MAX;

pub(crate) struct Assignment {
    /// `target[i]` is the object assigned to person `i`.
    pub target: Vec<usize>,
    /// Mean cost of the assignment.
    pub cost: f64,
    /// Primal minus dual objective, per unit mass. Bounded by the final ε.
    pub gap: f64,
}

/// Initial ε relative to the squared diameter.
const EPS_START: f64 = 1e-3;

/// Length of the per-person candidate list.
const CANDIDATES: usize = 16;

/// Best and second-best value over a candidate list.
fn scan_candidates(list: &[u32], xi: &[f64], y: &[f64], dim: usize, prices: &[f64]) -> (usize, f64, f64) {
    let (mut j, mut v1, mut v2) = (usize::MAX, f64::INFINITY, f64::INFINITY);
    for &c in list {
        let c = c as usize;
        let v = sq_dist(xi, &y[c * dim..(c + 1) * dim]) + prices[c];
        if v < v1 {
            v2 = v1;
            v1 = v;
            j = c;
        } else if v < v2 {
            v2 = v;
        }
    }
    (j, v1, v2)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Linear preconditioner for the bidding geometry. With `Λ` the inverse of
/// the Gaussian OT map fitted to the two clouds' second moments,
/// `‖x − y‖² + p = ‖Λ^{-½}x − Λ^{½}y‖² + g + κ(x)` where
/// `g = p + ‖y‖² − ‖Λ^{½}y‖²` is close to constant at equilibrium, which keeps
/// the priced kd-tree bounds tight. Falls back to the identity on degenerate
/// clouds.
fn preconditioner(dim: usize, x: &[f64], y: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let second_moment = |p: &[f64]| {
        let n = (p.len() / dim) as f64;
        let m = DMatrix::from_row_slice(p.len() / dim, dim, p);
        (m.transpose() * m) / n
    };
    let (sx, sy) = (second_moment(x), second_moment(y));
    let (ex, ey) = (SymEig::new(&sx), SymEig::new(&sy));
    let well_posed = |e: &SymEig| e.min_value() > 1e-10 * e.max_value().max(f64::MIN_POSITIVE);
    if dim == 1 || !well_posed(&ex) || !well_posed(&ey) {
        return (DMatrix::identity(dim, dim), DMatrix::identity(dim, dim));
    }
    let ry = ey.sqrt();
    let riy = ey.inv_sqrt();
    let mid = SymEig::new(&(&ry * &sx * &ry)).sqrt();
    let lambda = SymEig::new(&(&riy * mid * &riy));
    (lambda.sqrt(), lambda.inv_sqrt())
}

fn transform(dim: usize, p: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    for (src, dst) in p.chunks(dim).zip(out.chunks_mut(dim)) {
        for r in 0..dim {
            dst[r] = (0..dim).map(|c| m[(r, c)] * src[c]).sum();
        }
    }
    out
}

/// Solves `min_σ (1/n) Σ ‖x_i − y_σ(i)‖²` over permutations.
///
/// `eps_final` is the absolute per-unit-mass optimality tolerance.
pub(crate) fn auction(dim: usize, x: &[f64], y: &[f64], eps_final: f64, scaling: f64) -> Assignment {
    let n = x.len() / dim;
    if n == 1 {
        let cost = sq_dist(x, y);
        return Assignment {
            target: vec![0],
            cost,
            gap: 0.0,
        };
    }
    let radius = |p: &[f64]| {
        p.chunks(dim)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
            .sqrt()
    };
    let scale = (radius(x) + radius(y)).powi(2).max(f64::MIN_POSITIVE);
    let eps_final = eps_final.max(scale * 1e-13);
    let mut eps = (scale * EPS_START).max(eps_final);

    let (root, inv_root) = preconditioner(dim, x, y);
    let q = transform(dim, x, &inv_root);
    let u = transform(dim, y, &root);
    // Tree prices are g_j = p_j + offset_j. Starting from g = 0 puts the
    // prices at the Gaussian-approximate equilibrium.
    let offset: Vec<f64> = y
        .chunks(dim)
        .zip(u.chunks(dim))
        .map(|(a, b)| a.iter().map(|v| v * v).sum::<f64>() - b.iter().map(|v| v * v).sum::<f64>())
        .collect();
    let mut tree = PricedKdTree::new(dim, &u);

    let mut target = vec![UNASSIGNED; n];
    let mut owner = vec![UNASSIGNED; n];
    let mut queue: Vec<usize> = Vec::with_capacity(n);
    let mut phase = 0usize;
    // Cached candidates per person. Prices only rise, so any object outside a
    // list still has value at least the list's threshold.
    let m = CANDIDATES.min(n - 1);
    let mut cand = vec![0u32; n * m];
    let mut theta = vec![f64::NEG_INFINITY; n];
    let mut scratch = Vec::with_capacity(m + 1);
    loop {
        if phase > 0 {
            tree = PricedKdTree::with_prices(dim, &u, tree.prices());
        }
        phase += 1;
        target.iter_mut().for_each(|t| *t = UNASSIGNED);
        owner.iter_mut().for_each(|o| *o = UNASSIGNED);
        queue.clear();
        queue.extend((0..n).rev());
        while let Some(i) = queue.pop() {
            let qi = &q[i * dim..(i + 1) * dim];
            let (j, v1, v2) = match scan_candidates(&cand[i * m..(i + 1) * m], qi, &u, dim, tree.prices()) {
                (j, v1, v2) if v1 <= theta[i] => (j, v1, v2.min(theta[i])),
                _ => {
                    tree.best_k(qi, m + 1, &mut scratch);
                    for (c, e) in cand[i * m..(i + 1) * m].iter_mut().zip(&scratch) {
                        *c = e.1;
                    }
                    theta[i] = scratch.get(m).map_or(f64::INFINITY, |e| e.0);
                    (scratch[0].1 as usize, scratch[0].0, scratch[1].0)
                }
            };
            let p = tree.price(j) + (v2 - v1) + eps;
            tree.set_price(j, p);
            let prev = owner[j];
            if prev != UNASSIGNED {
                target[prev] = UNASSIGNED;
                queue.push(prev);
            }
            owner[j] = i;
            target[i] = j;
        }
        if eps <= eps_final {
            break;
        }
        eps = (eps / scaling).max(eps_final);
    }

    // Certificate in the original cost: π_i = min_j (c_ij + p_j) equals the
    // preconditioned minimum plus κ_i = ‖x_i‖² − ‖q_i‖².
    let mut primal = 0.0;
    let mut dual = 0.0;
    for i in 0..n {
        let xi = &x[i * dim..(i + 1) * dim];
        let qi = &q[i * dim..(i + 1) * dim];
        let j = target[i];
        primal += sq_dist(xi, &y[j * dim..(j + 1) * dim]);
        let kappa = xi.iter().map(|v| v * v).sum::<f64>() - qi.iter().map(|v| v * v).sum::<f64>();
        dual += tree.min_value(qi) + kappa;
    }
    dual -= tree.prices().iter().zip(&offset).map(|(g, o)| g - o).sum::<f64>();
    let nf = n as f64;
    Assignment {
        target,
        cost: primal / nf,
        gap: ((primal - dual) / nf).max(0.0),
    }
}
