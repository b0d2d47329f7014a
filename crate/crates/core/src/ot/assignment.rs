//! Minimum-cost perfect matching on a square cost matrix.
//!
//! Shortest augmenting paths with row/column potentials (the Hungarian method in
//! its O(n³) Jonker–Volgenant-style formulation). One row is inserted per
//! phase; a Dijkstra-like sweep over reduced costs finds the cheapest
//! augmenting path.

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn(n: usize, mut cost: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(cost(i, j));
            }
        }
        Self { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Total cost of assigning row `i` to column `perm[i]`.
    pub fn total(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

/// A solver returns `perm` with row `i` assigned to column `perm[i]`.
pub type AssignmentSolver = fn(&CostMatrix) -> Vec<usize>;

/// Exact minimum-cost assignment.
pub fn hungarian(cost: &CostMatrix) -> Vec<usize> {
    let n = cost.size();
    if n == 0 {
        return Vec::new();
    }
    // 1-based internally; index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_to = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        min_to.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|u| *u = false);
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            let ui0 = u[i0];
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost.get(i0 - 1, j - 1) - ui0 - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[col_owner[j] - 1] = j - 1;
    }
    perm
}

/// Minimum over all `n!` permutations, by enumeration (Heap's algorithm).
/// Only for small `n`; used as an independent reference.
pub fn brute_force(cost: &CostMatrix) -> (f64, Vec<usize>) {
    let n = cost.size();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (cost.total(&perm), perm.clone());
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let total = cost.total(&perm);
            if total < best.0 {
                best = (total, perm.clone());
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// A deliberately wrong solver (identity assignment) used to check that the
/// verification suite catches a broken solver.
pub fn identity_solver(cost: &CostMatrix) -> Vec<usize> {
    (0..cost.size()).collect()
}
