//! kd-tree over the target points of an assignment problem, answering
//! "two smallest `‖x − y_j‖² + p_j`" queries while the prices `p_j` rise.
//!
//! Each node keeps the minimum price in its subtree, so `boxdist² + min_price`
//! is a valid lower bound for pruning. Prices are assumed nonnegative. Splits
//! also consider the lifted coordinate `√p_j` so that nodes group objects of
//! similar price; rebuilding after prices move keeps the bound tight.

const LEAF_SIZE: usize = 8;
const NONE: u32 = u32::MAX;

pub(crate) struct PricedKdTree {
    dim: usize,
    /// Point coordinates in tree order.
    coords: Vec<f64>,
    /// Tree position → original index.
    order: Vec<u32>,
    /// Original index → leaf node.
    leaf_of: Vec<u32>,
    prices: Vec<f64>,
    nodes: Vec<Node>,
    bmin: Vec<f64>,
    bmax: Vec<f64>,
    stack: Vec<(u32, f64)>,
}

struct Node {
    lo: u32,
    hi: u32,
    left: u32,
    right: u32,
    parent: u32,
    min_price: f64,
}

/// Result of a two-best query.
#[derive(Debug, Clone, Copy)]
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct Best2 {
    pub index: usize,
    pub best: f64,
    pub second: f64,
}

impl PricedKdTree {
    pub fn new(dim: usize, points: &[f64]) -> Self {
        Self::with_prices(dim, points, &vec![0.0; points.len() / dim])
    }

    pub fn with_prices(dim: usize, points: &[f64], prices: &[f64]) -> Self {
        let n = points.len() / dim;
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut tree = PricedKdTree {
            dim,
            coords: Vec::new(),
            order: Vec::new(),
            leaf_of: vec![NONE; n],
            prices: prices.to_vec(),
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 2),
            bmin: Vec::new(),
            bmax: Vec::new(),
            stack: Vec::with_capacity(64),
        };
        let lift: Vec<f64> = prices.iter().map(|p| p.max(0.0).sqrt()).collect();
        tree.build(points, &lift, &mut order, 0, n, NONE);
        tree.coords = Vec::with_capacity(n * dim);
        for &i in &order {
            let i = i as usize;
            tree.coords.extend_from_slice(&points[i * dim..(i + 1) * dim]);
        }
        tree.order = order;
        for (node_id, node) in tree.nodes.iter().enumerate() {
            if node.left == NONE {
                for pos in node.lo..node.hi {
                    tree.leaf_of[tree.order[pos as usize] as usize] = node_id as u32;
                }
            }
        }
        tree.refresh_minima();
        tree
    }

    /// Recomputes every subtree minimum price bottom-up (children follow parents).
    fn refresh_minima(&mut self) {
        for id in (0..self.nodes.len()).rev() {
            let nd = &self.nodes[id];
            let m = if nd.left == NONE {
                (nd.lo..nd.hi).fold(f64::INFINITY, |m, pos| m.min(self.prices[self.order[pos as usize] as usize]))
            } else {
                self.nodes[nd.left as usize].min_price.min(self.nodes[nd.right as usize].min_price)
            };
            self.nodes[id].min_price = m;
        }
    }

    fn build(&mut self, points: &[f64], lift: &[f64], order: &mut [u32], lo: usize, hi: usize, parent: u32) -> u32 {
        let dim = self.dim;
        let id = self.nodes.len() as u32;
        let mut mn = vec![f64::INFINITY; dim + 1];
        let mut mx = vec![f64::NEG_INFINITY; dim + 1];
        for &i in &order[lo..hi] {
            let i = i as usize;
            let p = &points[i * dim..(i + 1) * dim];
            for k in 0..dim {
                mn[k] = mn[k].min(p[k]);
                mx[k] = mx[k].max(p[k]);
            }
            mn[dim] = mn[dim].min(lift[i]);
            mx[dim] = mx[dim].max(lift[i]);
        }
        self.bmin.extend_from_slice(&mn[..dim]);
        self.bmax.extend_from_slice(&mx[..dim]);
        self.nodes.push(Node {
            lo: lo as u32,
            hi: hi as u32,
            left: NONE,
            right: NONE,
            parent,
            min_price: 0.0,
        });
        if hi - lo > LEAF_SIZE {
            let axis = (0..=dim)
                .max_by(|&a, &b| (mx[a] - mn[a]).total_cmp(&(mx[b] - mn[b])))
                .unwrap_or(0);
            let coord = |i: u32| {
                if axis == dim {
                    lift[i as usize]
                } else {
                    points[i as usize * dim + axis]
                }
            };
            let mid = lo + (hi - lo) / 2;
            order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| coord(a).total_cmp(&coord(b)));
            let left = self.build(points, lift, order, lo, mid, id);
            let right = self.build(points, lift, order, mid, hi, id);
            let node = &mut self.nodes[id as usize];
            node.left = left;
            node.right = right;
        }
        id
    }

    pub fn price(&self, j: usize) -> f64 {
        self.prices[j]
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    /// Raises the price of target `j` and refreshes subtree minima.
    pub fn set_price(&mut self, j: usize, p: f64) {
        self.prices[j] = p;
        let mut node = self.leaf_of[j];
        let leaf = &self.nodes[node as usize];
        let mut m = f64::INFINITY;
        for pos in leaf.lo..leaf.hi {
            m = m.min(self.prices[self.order[pos as usize] as usize]);
        }
        if self.nodes[node as usize].min_price == m {
            return;
        }
        self.nodes[node as usize].min_price = m;
        loop {
            let parent = self.nodes[node as usize].parent;
            if parent == NONE {
                break;
            }
            let pn = &self.nodes[parent as usize];
            let m = self.nodes[pn.left as usize]
                .min_price
                .min(self.nodes[pn.right as usize].min_price);
            if pn.min_price == m {
                break;
            }
            self.nodes[parent as usize].min_price = m;
            node = parent;
        }
    }

    fn box_dist2(&self, node: u32, x: &[f64]) -> f64 {
        let off = node as usize * self.dim;
        let mut s = 0.0;
        for k in 0..self.dim {
            let lo = self.bmin[off + k];
            let hi = self.bmax[off + k];
            let v = if x[k] < lo {
                lo - x[k]
            } else if x[k] > hi {
                x[k] - hi
            } else {
                0.0
            };
            s += v * v;
        }
        s
    }

    /// Smallest value of `‖x − y_j‖² + p_j`.
    pub fn min_value(&mut self, x: &[f64]) -> f64 {
        self.search(x, false).best
    }

    /// Two smallest values of `‖x − y_j‖² + p_j` and the argmin.
    #[cfg(test)]
    pub fn best_two(&mut self, x: &[f64]) -> Best2 {
        self.search(x, true)
    }

    fn search(&mut self, x: &[f64], two: bool) -> Best2 {
        let dim = self.dim;
        let mut best = f64::INFINITY;
        let mut second = f64::INFINITY;
        let mut index = usize::MAX;
        let mut stack = std::mem::take(&mut self.stack);
        stack.clear();
        stack.push((0, self.box_dist2(0, x) + self.nodes[0].min_price));
        while let Some((node, bound)) = stack.pop() {
            if bound >= if two { second } else { best } {
                continue;
            }
            let nd = &self.nodes[node as usize];
            if nd.left == NONE {
                for pos in nd.lo as usize..nd.hi as usize {
                    let y = &self.coords[pos * dim..(pos + 1) * dim];
                    let mut c = 0.0;
                    for k in 0..dim {
                        let t = x[k] - y[k];
                        c += t * t;
                    }
                    let j = self.order[pos] as usize;
                    let v = c + self.prices[j];
                    if v < best {
                        second = best;
                        best = v;
                        index = j;
                    } else if v < second {
                        second = v;
                    }
                }
            } else {
                let (l, r) = (nd.left, nd.right);
                let bl = self.box_dist2(l, x) + self.nodes[l as usize].min_price;
                let br = self.box_dist2(r, x) + self.nodes[r as usize].min_price;
                let cut = if two { second } else { best };
                // Push the farther child first so the nearer one is expanded next.
                if bl <= br {
                    if br < cut {
                        stack.push((r, br));
                    }
                    if bl < cut {
                        stack.push((l, bl));
                    }
                } else {
                    if bl < cut {
                        stack.push((l, bl));
                    }
                    if br < cut {
                        stack.push((r, br));
                    }
                }
            }
        }
        self.stack = stack;
        Best2 { index, best, second }
    }
}

impl PricedKdTree {
    /// The `k` smallest values of `‖x − y_j‖² + p_j`, ascending, written to `out`.
    pub fn best_k(&mut self, x: &[f64], k: usize, out: &mut Vec<(f64, u32)>) {
        let dim = self.dim;
        out.clear();
        let mut stack = std::mem::take(&mut self.stack);
        stack.clear();
        stack.push((0, self.box_dist2(0, x) + self.nodes[0].min_price));
        let bound = |out: &Vec<(f64, u32)>| if out.len() < k { f64::INFINITY } else { out[k - 1].0 };
        while let Some((node, lb)) = stack.pop() {
            if lb >= bound(out) {
                continue;
            }
            let nd = &self.nodes[node as usize];
            if nd.left == NONE {
                for pos in nd.lo as usize..nd.hi as usize {
                    let y = &self.coords[pos * dim..(pos + 1) * dim];
                    let mut c = 0.0;
                    for q in 0..dim {
                        let t = x[q] - y[q];
                        c += t * t;
                    }
                    let j = self.order[pos];
                    let v = c + self.prices[j as usize];
                    if v < bound(out) {
                        let at = out.partition_point(|e| e.0 <= v);
                        if out.len() == k {
                            out.pop();
                        }
                        out.insert(at, (v, j));
                    }
                }
            } else {
                let (l, r) = (nd.left, nd.right);
                let bl = self.box_dist2(l, x) + self.nodes[l as usize].min_price;
                let br = self.box_dist2(r, x) + self.nodes[r as usize].min_price;
                let lim = bound(out);
                let (near, far, bn, bf) = if bl <= br { (l, r, bl, br) } else { (r, l, br, bl) };
                if bf < lim {
                    stack.push((far, bf));
                }
                if bn < lim {
                    stack.push((near, bn));
                }
            }
        }
        self.stack = stack;
    }
}
