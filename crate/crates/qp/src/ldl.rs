//! Envelope (skyline) LDL^T factorization for quasi-definite KKT matrices.
//!
//! The matrix is symmetrically permuted with reverse Cuthill-McKee; nodes of
//! very high degree are moved to the end so that they do not widen the
//! envelope of every other row. No pivoting is done: the primal block is
//! expected to factor with positive and the dual block with negative pivots,
//! and pivots of the wrong sign or tiny magnitude are replaced by a small
//! regularization of the expected sign.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub(crate) struct EnvelopeLdl {
    n: usize,
    /// new index -> original index
    perm: Vec<usize>,
    /// original index -> new index
    iperm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    lvals: Vec<f64>,
    diag: Vec<f64>,
    /// expected pivot sign per new index
    signs: Vec<f64>,
    /// position in `lvals` of every off-diagonal pattern entry
    slots: Vec<usize>,
    pub(crate) dynamic_regularizations: usize,
}

impl EnvelopeLdl {
    /// Symbolic analysis. `pattern` lists off-diagonal entries `(i, j)` in
    /// original indices (either triangle, duplicates allowed); `positive[i]`
    /// gives the expected pivot sign of row `i`.
    pub(crate) fn analyze(n: usize, pattern: &[(usize, usize)], positive: &[bool]) -> Self {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in pattern {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        let perm = ordering(&adj);
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old in 0..n {
            let i = iperm[old];
            for &nb in &adj[old] {
                let j = iperm[nb];
                if j < first[i] {
                    first[i] = j;
                }
            }
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i]);
        }
        let slots = pattern
            .iter()
            .map(|&(a, b)| {
                let (ia, ib) = (iperm[a], iperm[b]);
                let (row, col) = if ia > ib { (ia, ib) } else { (ib, ia) };
                start[row] + (col - first[row])
            })
            .collect();
        let signs = perm.iter().map(|&old| if positive[old] { 1.0 } else { -1.0 }).collect();
        Self {
            n,
            lvals: vec![0.0; start[n]],
            diag: vec![0.0; n],
            perm,
            iperm,
            first,
            start,
            signs,
            slots,
            dynamic_regularizations: 0,
        }
    }

    /// Numeric factorization. `diag` is indexed by original index and
    /// `offdiag[k]` is the value of `pattern[k]` passed to [`Self::analyze`]
    /// (pattern entries must not repeat a symmetric position).
    pub(crate) fn factor(&mut self, diag: &[f64], offdiag: &[f64], dyn_eps: f64, dyn_reg: f64) {
        self.lvals.iter_mut().for_each(|v| *v = 0.0);
        for (k, &slot) in self.slots.iter().enumerate() {
            self.lvals[slot] += offdiag[k];
        }
        for old in 0..self.n {
            self.diag[self.iperm[old]] = diag[old];
        }
        self.dynamic_regularizations = 0;

        let mut tmp = vec![0.0f64; self.n];
        for i in 0..self.n {
            let fi = self.first[i];
            let si = self.start[i];
            let len = i - fi;
            // u_ij = a_ij - sum_k u_ik l_jk, with u_ik = l_ik d_k
            for jj in 0..len {
                let j = fi + jj;
                let fj = self.first[j];
                let lo = fi.max(fj);
                let mut s = self.lvals[si + jj];
                if lo < j {
                    let row_j = &self.lvals[self.start[j] + (lo - fj)..self.start[j] + (j - fj)];
                    let ui = &tmp[lo..j];
                    s -= dot(ui, row_j);
                }
                tmp[j] = s;
            }
            let mut d = self.diag[i];
            for jj in 0..len {
                let j = fi + jj;
                let l = tmp[j] / self.diag[j];
                d -= tmp[j] * l;
                self.lvals[si + jj] = l;
            }
            if self.signs[i] * d < dyn_eps {
                d = self.signs[i] * dyn_reg;
                self.dynamic_regularizations += 1;
            }
            self.diag[i] = d;
            for t in tmp[fi..i].iter_mut() {
                *t = 0.0;
            }
        }
    }

    /// Solves with the factored matrix; `rhs` and the result use original indices.
    pub(crate) fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z: Vec<f64> = (0..n).map(|i| rhs[self.perm[i]]).collect();
        for i in 0..n {
            let fi = self.first[i];
            if fi < i {
                let row = &self.lvals[self.start[i]..self.start[i + 1]];
                z[i] -= dot(row, &z[fi..i]);
            }
        }
        for i in 0..n {
            z[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let zi = z[i];
            if zi != 0.0 && fi < i {
                let row = &self.lvals[self.start[i]..self.start[i + 1]];
                for (zk, l) in z[fi..i].iter_mut().zip(row) {
                    *zk -= l * zi;
                }
            }
        }
        let mut out = vec![0.0; n];
        for i in 0..n {
            out[self.perm[i]] = z[i];
        }
        out
    }

    #[cfg(test)]
    pub(crate) fn envelope_size(&self) -> usize {
        self.lvals.len()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = c * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in chunks * 4..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Reverse Cuthill-McKee on the sparse part of the graph, with high-degree
/// nodes appended last in order of increasing degree.
fn ordering(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    if n == 0 {
        return Vec::new();
    }
    let total: usize = adj.iter().map(Vec::len).sum();
    let mean = total as f64 / n as f64;
    let threshold = (8.0 * mean).max(16.0) as usize;
    let dense: Vec<bool> = adj.iter().map(|a| a.len() > threshold).collect();
    let degree = |v: usize| adj[v].iter().filter(|&&w| !dense[w]).count();

    let mut visited = dense.clone();
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).filter(|&v| !dense[v]).collect();
    by_degree.sort_by_key(|&v| (degree(v), v));

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let root = pseudo_peripheral(adj, &dense, seed, &degree);
        let mut queue = VecDeque::new();
        visited[root] = true;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree(w), w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    let mut dense_nodes: Vec<usize> = (0..n).filter(|&v| dense[v]).collect();
    dense_nodes.sort_by_key(|&v| (adj[v].len(), v));
    order.extend(dense_nodes);
    order
}

fn pseudo_peripheral(adj: &[Vec<usize>], dense: &[bool], start: usize, degree: &dyn Fn(usize) -> usize) -> usize {
    let mut root = start;
    let mut ecc = 0usize;
    for _ in 0..4 {
        let levels = bfs_levels(adj, dense, root);
        let depth = *levels.iter().filter_map(|l| l.as_ref()).max().unwrap_or(&0);
        if depth <= ecc && ecc > 0 {
            break;
        }
        ecc = depth;
        let candidate = levels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(depth))
            .map(|(v, _)| v)
            .min_by_key(|&v| (degree(v), v));
        match candidate {
            Some(c) if c != root => root = c,
            _ => break,
        }
    }
    root
}

fn bfs_levels(adj: &[Vec<usize>], dense: &[bool], root: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    let mut queue = VecDeque::new();
    level[root] = Some(0);
    queue.push_back(root);
    while let Some(v) = queue.pop_front() {
        let lv = level[v].unwrap();
        for &w in &adj[v] {
            if !dense[w] && level[w].is_none() {
                level[w] = Some(lv + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(n: usize, diag: &[f64], pattern: &[(usize, usize)], off: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = (0..n).map(|i| diag[i] * x[i]).collect();
        for (k, &(i, j)) in pattern.iter().enumerate() {
            out[i] += off[k] * x[j];
            out[j] += off[k] * x[i];
        }
        out
    }

    #[test]
    fn quasi_definite_solve_matches_product() {
        // [[H, E^T], [E, -d]] with H = diag(2, 3, 4), E = [[1, 1, 0], [0, 1, 1]]
        let n = 5;
        let pattern = vec![(3, 0), (3, 1), (4, 1), (4, 2)];
        let off = vec![1.0, 1.0, 1.0, 1.0];
        let diag = vec![2.0, 3.0, 4.0, -1e-3, -1e-3];
        let positive = vec![true, true, true, false, false];
        let mut ldl = EnvelopeLdl::analyze(n, &pattern, &positive);
        ldl.factor(&diag, &off, 1e-14, 1e-8);
        let x_true = vec![1.0, -2.0, 0.5, 3.0, -1.0];
        let b = dense_mul(n, &diag, &pattern, &off, &x_true);
        let x = ldl.solve(&b);
        for (a, e) in x.iter().zip(&x_true) {
            assert!((a - e).abs() < 1e-10, "{a} vs {e}");
        }
    }

    #[test]
    fn banded_chain_keeps_envelope_small() {
        // path graph 0-1-2-...-99 given in scrambled labels
        let n = 100;
        let label = |k: usize| (k * 37) % n;
        let pattern: Vec<(usize, usize)> = (0..n - 1).map(|k| (label(k), label(k + 1))).collect();
        let positive = vec![true; n];
        let ldl = EnvelopeLdl::analyze(n, &pattern, &positive);
        assert!(ldl.envelope_size() <= n, "envelope {}", ldl.envelope_size());
    }

    #[test]
    fn dense_node_goes_last() {
        // star: node 0 linked to everything, plus a chain among the rest
        let n = 60;
        let mut pattern: Vec<(usize, usize)> = (1..n).map(|k| (0, k)).collect();
        pattern.extend((1..n - 1).map(|k| (k, k + 1)));
        let ldl = EnvelopeLdl::analyze(n, &pattern, &vec![true; n]);
        assert_eq!(*ldl.perm.last().unwrap(), 0);
        let off = vec![0.1; pattern.len()];
        let diag = vec![10.0; n];
        let mut ldl = ldl;
        ldl.factor(&diag, &off, 1e-14, 1e-8);
        let x_true: Vec<f64> = (0..n).map(|k| (k as f64).sin()).collect();
        let b = dense_mul(n, &diag, &pattern, &off, &x_true);
        let x = ldl.solve(&b);
        for (a, e) in x.iter().zip(&x_true) {
            assert!((a - e).abs() < 1e-10);
        }
    }
}
