//! Disjoint-set forest for turning pairwise match verdicts into duplicate
//! groups.

use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: alloc::vec![1; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        // path compression
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// Merges the sets of `a` and `b`; false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            core::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    pub fn connected(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }

    /// Sets with at least `min_size` members. Members ascend within a set;
    /// sets are ordered by their smallest member.
    pub fn groups(&mut self, min_size: usize) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut by_root: Vec<Vec<usize>> = alloc::vec![Vec::new(); n];
        for x in 0..n {
            let r = self.find(x);
            by_root[r].push(x);
        }
        let mut out: Vec<Vec<usize>> = by_root.into_iter().filter(|g| !g.is_empty() && g.len() >= min_size).collect();
        out.sort_by_key(|g| g[0]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn transitive_closure() {
        let mut uf = UnionFind::new(6);
        assert!(uf.union(0, 1));
        assert!(uf.union(1, 2));
        assert!(!uf.union(0, 2));
        assert!(uf.union(4, 5));
        assert!(uf.connected(0, 2));
        assert!(!uf.connected(2, 3));
        assert_eq!(uf.groups(2), vec![vec![0, 1, 2], vec![4, 5]]);
        assert_eq!(uf.groups(1).len(), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn groups_partition_and_match_naive_closure(edges in proptest::collection::vec((0usize..30, 0usize..30), 0..60)) {
                let mut uf = UnionFind::new(30);
                for &(a, b) in &edges {
                    uf.union(a, b);
                }
                // naive closure by repeated relabeling
                let mut label: Vec<usize> = (0..30).collect();
                loop {
                    let mut changed = false;
                    for &(a, b) in &edges {
                        let m = label[a].min(label[b]);
                        if label[a] != m || label[b] != m {
                            label[a] = m;
                            label[b] = m;
                            changed = true;
                        }
                    }
                    if !changed { break; }
                }
                let groups = uf.groups(1);
                let total: usize = groups.iter().map(|g| g.len()).sum();
                prop_assert_eq!(total, 30);
                for g in &groups {
                    for &x in g {
                        prop_assert_eq!(label[x], label[g[0]]);
                    }
                }
                for a in 0..30 {
                    for b in 0..30 {
                        prop_assert_eq!(uf.connected(a, b), label[a] == label[b]);
                    }
                }
            }
        }
    }
}
