//! Rooted trees: Kesten's tree truncated at a generation cap, and finite
//! Galton-Watson trees.

mod generate;
mod io;
mod offspring;

pub use generate::{generate_gw, generate_kesten, GwOutcome, DEFAULT_VERTEX_CAP};
pub use io::{read_tree, write_tree};
pub(crate) use io::read_tree_prefix as io_read_prefix;
pub use offspring::{Family, OffspringDistribution, TAIL_CUT};

use std::collections::VecDeque;

use crate::error::{Error, Result};

pub type VertexId = u32;

const NO_PARENT: VertexId = VertexId::MAX;

/// Metadata carried in the serialized header.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TreeInfo {
    pub family: String,
    pub seed: Option<u64>,
    /// Generation cap; `None` for a fully generated finite tree.
    pub radius: Option<u32>,
}

/// Immutable arena tree. Ids are dense and assigned in generation order, so
/// depth is nondecreasing in id and the root is vertex 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    parent: Vec<VertexId>,
    depth: Vec<u32>,
    child_start: Vec<u32>,
    children: Vec<VertexId>,
    backbone: Vec<bool>,
    frontier: Vec<bool>,
    backbone_ids: Vec<VertexId>,
    info: TreeInfo,
}

impl Tree {
    /// Builds a tree from a parent array. `parents[0]` must be `None` and
    /// every other parent must have a smaller id and depth no larger than the
    /// vertex's predecessor's depth allows (generation order).
    pub fn from_parents(
        parents: &[Option<VertexId>],
        backbone: Vec<bool>,
        frontier: Vec<bool>,
        info: TreeInfo,
    ) -> Result<Self> {
        let n = parents.len();
        if n == 0 || parents[0].is_some() {
            return Err(Error::InvalidParameter("vertex 0 must be the root".into()));
        }
        if n > NO_PARENT as usize {
            return Err(Error::SizeLimit {
                cap: NO_PARENT as usize,
            });
        }
        if backbone.len() != n || frontier.len() != n {
            return Err(Error::InvalidParameter("flag arrays must match vertex count".into()));
        }
        let mut parent = Vec::with_capacity(n);
        let mut depth = Vec::with_capacity(n);
        let mut counts = vec![0u32; n + 1];
        parent.push(NO_PARENT);
        depth.push(0u32);
        for (v, p) in parents.iter().enumerate().skip(1) {
            let p = p.ok_or_else(|| Error::InvalidParameter(format!("vertex {v} has no parent")))?;
            if p as usize >= v {
                return Err(Error::InvalidParameter(format!(
                    "parent {p} of vertex {v} is not earlier in generation order"
                )));
            }
            if frontier[p as usize] {
                return Err(Error::InvalidParameter(format!(
                    "frontier vertex {p} has children"
                )));
            }
            let dv = depth[p as usize] + 1;
            if dv < depth[v - 1] {
                return Err(Error::InvalidParameter(format!(
                    "vertex {v} breaks generation order"
                )));
            }
            parent.push(p);
            depth.push(dv);
            counts[p as usize + 1] += 1;
        }
        let mut child_start = counts;
        for i in 0..n {
            child_start[i + 1] += child_start[i];
        }
        let mut fill = child_start.clone();
        let mut children = vec![0; n - 1];
        for v in 1..n {
            let p = parent[v] as usize;
            children[fill[p] as usize] = v as VertexId;
            fill[p] += 1;
        }

        let backbone_ids: Vec<VertexId> = (0..n)
            .filter(|&v| backbone[v])
            .map(|v| v as VertexId)
            .collect();
        if !backbone_ids.is_empty() {
            for (g, &s) in backbone_ids.iter().enumerate() {
                if depth[s as usize] as usize != g {
                    return Err(Error::InvalidParameter(
                        "backbone must have exactly one vertex per generation".into(),
                    ));
                }
                if g > 0 && parent[s as usize] != backbone_ids[g - 1] {
                    return Err(Error::InvalidParameter("backbone is not a path".into()));
                }
            }
            let top = depth[n - 1] as usize;
            if backbone_ids.len() != top + 1 {
                return Err(Error::InvalidParameter(
                    "backbone must reach the last generation".into(),
                ));
            }
        }

        Ok(Self {
            parent,
            depth,
            child_start,
            children,
            backbone,
            frontier,
            backbone_ids,
            info,
        })
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn root(&self) -> VertexId {
        0
    }

    pub fn info(&self) -> &TreeInfo {
        &self.info
    }

    pub fn set_seed(&mut self, seed: Option<u64>) {
        self.info.seed = seed;
    }

    pub fn radius(&self) -> Option<u32> {
        self.info.radius
    }

    pub fn contains(&self, v: VertexId) -> bool {
        (v as usize) < self.len()
    }

    fn check(&self, v: VertexId) -> Result<usize> {
        if self.contains(v) {
            Ok(v as usize)
        } else {
            Err(Error::UnknownVertex(v))
        }
    }

    pub fn parent(&self, v: VertexId) -> Option<VertexId> {
        match self.parent[v as usize] {
            NO_PARENT => None,
            p => Some(p),
        }
    }

    pub fn depth(&self, v: VertexId) -> u32 {
        self.depth[v as usize]
    }

    pub fn max_depth(&self) -> u32 {
        self.depth.last().copied().unwrap_or(0)
    }

    /// Children in sampling order. Empty for frontier vertices.
    pub fn children(&self, v: VertexId) -> &[VertexId] {
        let v = v as usize;
        &self.children[self.child_start[v] as usize..self.child_start[v + 1] as usize]
    }

    pub fn n_children(&self, v: VertexId) -> u32 {
        let v = v as usize;
        self.child_start[v + 1] - self.child_start[v]
    }

    pub fn is_backbone(&self, v: VertexId) -> bool {
        self.backbone[v as usize]
    }

    pub fn is_frontier(&self, v: VertexId) -> bool {
        self.frontier[v as usize]
    }

    /// `s_0, s_1, ...`; empty for trees without a spine.
    pub fn backbone(&self) -> &[VertexId] {
        &self.backbone_ids
    }

    fn frontier_error(&self, v: VertexId, extra: u64) -> Error {
        Error::FrontierViolation {
            vertex: v,
            required_radius: u64::from(self.depth(v)) + extra.max(1),
        }
    }

    /// Graph degree. Unknown (an error) on the frontier.
    pub fn degree(&self, v: VertexId) -> Result<u32> {
        self.check(v)?;
        if self.is_frontier(v) {
            return Err(self.frontier_error(v, 1));
        }
        Ok(self.n_children(v) + u32::from(v != 0))
    }

    /// Neighbours of an expanded vertex: parent first, then children.
    pub fn neighbours(&self, v: VertexId) -> Result<impl Iterator<Item = VertexId> + '_> {
        self.check(v)?;
        if self.is_frontier(v) {
            return Err(self.frontier_error(v, 1));
        }
        Ok(self.parent(v).into_iter().chain(self.children(v).iter().copied()))
    }

    /// Closed ball `B(center, r)` sorted by id. Frontier vertices may lie in
    /// the ball, but not strictly inside it.
    pub fn ball(&self, center: VertexId, r: u32) -> Result<Vec<VertexId>> {
        let c = self.check(center)?;
        if c == 0 {
            let end = self.depth.partition_point(|&d| d <= r);
            if let Some(v) = (0..end).find(|&v| self.frontier[v] && self.depth[v] < r) {
                return Err(self.frontier_error(v as VertexId, u64::from(r - self.depth[v])));
            }
            return Ok((0..end as VertexId).collect());
        }
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        queue.push_back((center, NO_PARENT, 0u32));
        while let Some((v, from, dist)) = queue.pop_front() {
            out.push(v);
            if dist == r {
                continue;
            }
            if self.is_frontier(v) {
                return Err(self.frontier_error(v, u64::from(r - dist)));
            }
            for w in self.parent(v).into_iter().chain(self.children(v).iter().copied()) {
                if w != from {
                    queue.push_back((w, v, dist + 1));
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// `#B_r` around the root.
    pub fn volume(&self, r: u32) -> Result<usize> {
        Ok(self.ball(0, r)?.len())
    }

    /// `D_r`, the largest degree in `B_r`. Needs the ball to avoid the
    /// frontier entirely.
    pub fn max_degree(&self, r: u32) -> Result<u32> {
        let mut best = 0;
        for v in self.ball(0, r)? {
            best = best.max(self.degree(v)?);
        }
        Ok(best)
    }

    pub fn lca(&self, u: VertexId, v: VertexId) -> Result<VertexId> {
        self.check(u)?;
        self.check(v)?;
        let (mut a, mut b) = (u, v);
        while self.depth(a) > self.depth(b) {
            a = self.parent[a as usize];
        }
        while self.depth(b) > self.depth(a) {
            b = self.parent[b as usize];
        }
        while a != b {
            a = self.parent[a as usize];
            b = self.parent[b as usize];
        }
        Ok(a)
    }

    pub fn distance(&self, u: VertexId, v: VertexId) -> Result<u32> {
        let l = self.lca(u, v)?;
        Ok(self.depth(u) + self.depth(v) - 2 * self.depth(l))
    }

    /// Distances from `v` to every vertex with id below `end`. Linear in
    /// `end`, unlike repeated [`Tree::distance`] calls.
    pub fn distances_to_prefix(&self, v: VertexId, end: usize) -> Result<Vec<u32>> {
        self.check(v)?;
        let end = end.min(self.len());
        let dv = self.depth(v);
        let mut anc = vec![0; dv as usize + 1];
        let mut a = v;
        loop {
            anc[self.depth(a) as usize] = a;
            match self.parent(a) {
                Some(p) => a = p,
                None => break,
            }
        }
        let mut lca_depth = vec![0u32; end];
        for y in 1..end {
            let d = self.depth[y];
            lca_depth[y] = if d <= dv && anc[d as usize] == y as VertexId {
                d
            } else {
                lca_depth[self.parent[y] as usize]
            };
        }
        Ok((0..end)
            .map(|y| dv + self.depth[y] - 2 * lca_depth[y])
            .collect())
    }

    /// The unique simple path from `u` to `v`, endpoints included.
    pub fn direct_path(&self, u: VertexId, v: VertexId) -> Result<Vec<VertexId>> {
        let l = self.lca(u, v)?;
        let mut up = vec![u];
        let mut a = u;
        while a != l {
            a = self.parent[a as usize];
            up.push(a);
        }
        let mut down = Vec::new();
        let mut b = v;
        while b != l {
            down.push(b);
            b = self.parent[b as usize];
        }
        up.extend(down.into_iter().rev());
        Ok(up)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Small hand-built tree:
    /// ```text
    ///        0
    ///      / | \
    ///     1  2  3
    ///    / \     \
    ///   4   5     6
    /// ```
    pub(crate) fn sample_tree() -> Tree {
        let parents = [None, Some(0), Some(0), Some(0), Some(1), Some(1), Some(3)];
        Tree::from_parents(&parents, vec![false; 7], vec![false; 7], TreeInfo::default()).unwrap()
    }

    #[test]
    fn degrees_and_depths() {
        let t = sample_tree();
        assert_eq!(t.degree(0).unwrap(), 3);
        assert_eq!(t.degree(1).unwrap(), 3);
        assert_eq!(t.degree(4).unwrap(), 1);
        assert_eq!(t.depth(6), 2);
        assert_eq!(t.children(1), &[4, 5]);
        assert_eq!(t.neighbours(3).unwrap().collect::<Vec<_>>(), vec![0, 6]);
    }

    #[test]
    fn balls_and_paths() {
        let t = sample_tree();
        assert_eq!(t.ball(4, 0).unwrap(), vec![4]);
        assert_eq!(t.ball(4, 2).unwrap(), vec![0, 1, 4, 5]);
        assert_eq!(t.volume(1).unwrap(), 4);
        assert_eq!(t.distance(4, 6).unwrap(), 4);
        assert_eq!(t.direct_path(4, 6).unwrap(), vec![4, 1, 0, 3, 6]);
        assert_eq!(t.direct_path(2, 2).unwrap(), vec![2]);
        assert_eq!(t.distance(0, 5).unwrap(), 2);
        assert_eq!(t.max_degree(2).unwrap(), 3);
        let d = t.distances_to_prefix(4, 7).unwrap();
        let brute: Vec<u32> = (0..7).map(|y| t.distance(4, y).unwrap()).collect();
        assert_eq!(d, brute);
    }

    #[test]
    fn degree_sum_is_twice_edges() {
        let t = sample_tree();
        let sum: u32 = (0..7).map(|v| t.degree(v).unwrap()).sum();
        assert_eq!(sum, 2 * 6);
    }

    #[test]
    fn rejects_out_of_order_parents() {
        let parents = [None, Some(0), Some(2), Some(0)];
        assert!(Tree::from_parents(&parents, vec![false; 4], vec![false; 4], TreeInfo::default()).is_err());
        assert!(matches!(sample_tree().degree(99), Err(Error::UnknownVertex(99))));
    }

    #[test]
    fn kesten_radius_one() {
        for mu in [
            OffspringDistribution::poisson1(),
            OffspringDistribution::geometric_half(),
            OffspringDistribution::binary(),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let t = generate_kesten(&mu, 1, &mut rng, DEFAULT_VERTEX_CAP).unwrap();
            assert!(t.n_children(0) >= 1);
            assert_eq!(t.backbone().len(), 2);
            assert!(t.is_frontier(t.backbone()[1]));
        }
    }

    #[test]
    fn binary_backbone_has_two_children() {
        let mu = OffspringDistribution::binary();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = generate_kesten(&mu, 3, &mut rng, DEFAULT_VERTEX_CAP).unwrap();
        for &s in &t.backbone()[..3] {
            assert_eq!(t.n_children(s), 2);
        }
        assert_eq!(t.volume(1).unwrap(), 3);
        for v in 0..t.len() as VertexId {
            if !t.is_frontier(v) {
                assert!(matches!(t.n_children(v), 0 | 2));
            }
        }
    }

    #[test]
    fn frontier_is_guarded() {
        let mu = OffspringDistribution::poisson1();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = generate_kesten(&mu, 4, &mut rng, DEFAULT_VERTEX_CAP).unwrap();
        let s4 = t.backbone()[4];
        assert!(matches!(t.degree(s4), Err(Error::FrontierViolation { .. })));
        assert!(t.ball(0, 4).is_ok());
        assert!(matches!(
            t.ball(0, 5),
            Err(Error::FrontierViolation { required_radius: 5, .. })
        ));
        assert!(t.max_degree(4).is_err());
        assert!(t.max_degree(3).is_ok());
    }

    #[test]
    fn kesten_is_deterministic() {
        let mu = OffspringDistribution::poisson1();
        let a = generate_kesten(&mu, 60, &mut ChaCha8Rng::seed_from_u64(42), DEFAULT_VERTEX_CAP).unwrap();
        let b = generate_kesten(&mu, 60, &mut ChaCha8Rng::seed_from_u64(42), DEFAULT_VERTEX_CAP).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kesten_size_cap() {
        let mu = OffspringDistribution::binary();
        let r = generate_kesten(&mu, 500, &mut ChaCha8Rng::seed_from_u64(2), 50);
        assert!(matches!(r, Err(Error::SizeLimit { cap: 50 })));
    }

    #[test]
    fn gw_binary_is_odd() {
        let mu = OffspringDistribution::binary();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            if let GwOutcome::Finite(t) = generate_gw(&mu, &mut rng, 10_000).unwrap() {
                assert_eq!(t.len() % 2, 1);
            }
        }
    }

    proptest! {
        #[test]
        fn metric_axioms(seed in 0u64..500, a in 0usize..10_000, b in 0usize..10_000, c in 0usize..10_000) {
            let mu = OffspringDistribution::geometric_half();
            let t = generate_kesten(&mu, 12, &mut ChaCha8Rng::seed_from_u64(seed), DEFAULT_VERTEX_CAP).unwrap();
            let n = t.len();
            let (u, v, w) = ((a % n) as VertexId, (b % n) as VertexId, (c % n) as VertexId);
            let duv = t.distance(u, v).unwrap();
            prop_assert_eq!(duv, t.distance(v, u).unwrap());
            prop_assert!(duv <= t.distance(u, w).unwrap() + t.distance(w, v).unwrap());
            let path = t.direct_path(u, v).unwrap();
            prop_assert_eq!(path.len() as u32, duv + 1);
            for pair in path.windows(2) {
                prop_assert_eq!(t.distance(pair[0], pair[1]).unwrap(), 1);
            }
        }

        #[test]
        fn ball_matches_distance(seed in 0u64..200, a in 0usize..10_000, r in 0u32..4) {
            let mu = OffspringDistribution::poisson1();
            let t = generate_kesten(&mu, 14, &mut ChaCha8Rng::seed_from_u64(seed), DEFAULT_VERTEX_CAP).unwrap();
            let c = (a % t.len()) as VertexId;
            if let Ok(ball) = t.ball(c, r) {
                let brute: Vec<VertexId> = (0..t.len() as VertexId)
                    .filter(|&v| t.distance(c, v).unwrap() <= r)
                    .collect();
                prop_assert_eq!(ball, brute);
            } else {
                prop_assert!(t.depth(c) + r > 14);
            }
        }
    }
}
