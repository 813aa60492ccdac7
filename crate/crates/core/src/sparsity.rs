//! Structural Jacobian patterns, column grouping for compressed finite
//! differences, and bandwidth-reducing orderings.

use std::collections::{BTreeSet, VecDeque};

/// Structurally nonzero entries of a square matrix, stored row-wise with
/// sorted, de-duplicated column indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n: usize,
    rows: Vec<Vec<usize>>,
}

impl SparsityPattern {
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut sets = vec![BTreeSet::new(); n];
        for (i, j) in pairs {
            assert!(i < n && j < n, "pattern entry ({i}, {j}) out of range for n = {n}");
            sets[i].insert(j);
        }
        Self {
            n,
            rows: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }

    pub fn dense(n: usize) -> Self {
        Self {
            n,
            rows: vec![(0..n).collect(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.n * self.n) as f64
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.rows[i].binary_search(&j).is_ok()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&j| (i, j)))
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries().all(|(i, j)| self.contains(j, i))
    }

    /// Row indices touched by each column.
    pub fn columns(&self) -> Vec<Vec<usize>> {
        let mut cols = vec![Vec::new(); self.n];
        for (i, j) in self.entries() {
            cols[j].push(i);
        }
        cols
    }

    /// `(lower, upper)` bandwidths.
    pub fn bandwidth(&self) -> (usize, usize) {
        self.entries().fold((0, 0), |(kl, ku), (i, j)| {
            if i > j {
                (kl.max(i - j), ku)
            } else {
                (kl, ku.max(j - i))
            }
        })
    }

    /// Sub-pattern over the listed coordinates, renumbered in list order.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let mut new_index = vec![usize::MAX; self.n];
        for (k, &old) in keep.iter().enumerate() {
            new_index[old] = k;
        }
        let pairs = keep.iter().enumerate().flat_map(|(k, &old)| {
            let new_index = &new_index;
            self.rows[old]
                .iter()
                .filter_map(move |&j| (new_index[j] != usize::MAX).then(|| (k, new_index[j])))
        });
        Self::from_pairs(keep.len(), pairs.collect::<Vec<_>>())
    }

    /// Pattern of `P A Pᵀ` where `perm[new] = old`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; self.n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        Self::from_pairs(self.n, self.entries().map(|(i, j)| (inverse[i], inverse[j])))
    }

    /// Greedy partition of columns into structurally orthogonal groups: no
    /// two columns of a group share a nonzero row.
    pub fn column_groups(&self) -> Vec<Vec<usize>> {
        let cols = self.columns();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut row_owner: Vec<Vec<bool>> = Vec::new();
        for (j, rows) in cols.iter().enumerate() {
            let slot = row_owner
                .iter()
                .position(|used| rows.iter().all(|&i| !used[i]));
            let g = slot.unwrap_or_else(|| {
                groups.push(Vec::new());
                row_owner.push(vec![false; self.n]);
                groups.len() - 1
            });
            groups[g].push(j);
            for &i in rows {
                row_owner[g][i] = true;
            }
        }
        groups
    }

    /// Reverse Cuthill–McKee ordering of the symmetrized graph. Returns
    /// `perm` with `perm[new] = old`.
    pub fn reverse_cuthill_mckee(&self) -> Vec<usize> {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.n];
        for (i, j) in self.entries() {
            if i != j {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
        let degree: Vec<usize> = adj.iter().map(BTreeSet::len).collect();
        let mut visited = vec![false; self.n];
        let mut order = Vec::with_capacity(self.n);
        while order.len() < self.n {
            let start = (0..self.n)
                .filter(|&v| !visited[v])
                .min_by_key(|&v| (degree[v], v))
                .expect("unvisited vertex remains");
            visited[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                order.push(v);
                let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
                next.sort_by_key(|&w| (degree[w], w));
                for w in next {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
        order.reverse();
        order
    }

    /// The ordering (identity or RCM) with the smaller total bandwidth.
    pub fn banded_ordering(&self) -> Option<Vec<usize>> {
        let (kl, ku) = self.bandwidth();
        let perm = self.reverse_cuthill_mckee();
        let (pl, pu) = self.permuted(&perm).bandwidth();
        (pl + pu < kl + ku).then_some(perm)
    }
}

/// Accumulates symmetric block couplings between coordinate ranges.
#[derive(Debug, Default)]
pub struct PatternBuilder {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl PatternBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, pairs: Vec::new() }
    }

    /// Couple every coordinate in `a` with every coordinate in `b`, both
    /// ways, and add both diagonal blocks.
    pub fn couple(&mut self, a: std::ops::Range<usize>, b: std::ops::Range<usize>) {
        for i in a.clone() {
            for j in b.clone() {
                self.pairs.push((i, j));
                self.pairs.push((j, i));
            }
        }
        self.block(a);
        self.block(b);
    }

    pub fn block(&mut self, a: std::ops::Range<usize>) {
        for i in a.clone() {
            for j in a.clone() {
                self.pairs.push((i, j));
            }
        }
    }

    pub fn build(self) -> SparsityPattern {
        SparsityPattern::from_pairs(self.n, self.pairs)
    }
}

/// Coordinate range of node `i` of a rod with `n` points in the interleaved
/// layout: seven scalars, three for the last node.
pub fn rod_node_range(i: usize, n: usize) -> std::ops::Range<usize> {
    let start = 7 * i;
    if i + 1 < n {
        start..start + 7
    } else {
        start..start + 3
    }
}

/// Block-tridiagonal pattern over the per-node blocks of an `n`-point rod:
/// each node couples to itself and its immediate neighbours.
pub fn single_rod_sparsity(n: usize) -> SparsityPattern {
    assert!(n >= 3, "a rod needs at least 3 points");
    let mut b = PatternBuilder::new(7 * n - 4);
    for i in 0..n - 1 {
        b.couple(rod_node_range(i, n), rod_node_range(i + 1, n));
    }
    b.build()
}
