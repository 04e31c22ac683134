//! Lazily realized marked Galton-Watson tree (the environment).
//!
//! Nodes live in an arena with contiguous child ranges. Id 0 is reserved
//! for `e*` (the root's parent, not a tree vertex), id 1 for the root `e`.
//! A node's children are realized on first access: the offspring count and
//! the children's marks `omega` are drawn from a per-node stream keyed on
//! the node's position, so the realized environment does not depend on the
//! access order.

use rand::Rng;
use rand_distr::Distribution;

use crate::env_model::{EnvSpec, IncrementFamily};
use crate::error::{Error, Result};
use crate::rng::{node_stream, NodeKey};

/// Dense node handle. 0 is `e*`, 1 is the root `e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

pub const ROOT_PARENT: NodeId = NodeId(0);
pub const ROOT: NodeId = NodeId(1);

const UNREALIZED: u32 = u32::MAX;

/// Default arena cap: fast-regime walks realize huge trees.
pub const DEFAULT_NODE_CAP: usize = 200_000_000;

#[derive(Debug, Clone)]
struct Node {
    parent: u32,
    /// Index of the first child, or UNREALIZED.
    first_child: u32,
    nu: u16,
    depth: u32,
    omega: f64,
    v: f64,
    /// e^{-omega}: this node's weight seen from its parent.
    weight: f64,
    /// Sum of the realized children's weights (valid once realized).
    child_weight_sum: f64,
    key: NodeKey,
}

/// The environment: a marked tree realized on demand.
pub struct EnvTree {
    spec: EnvSpec,
    master_seed: u64,
    nodes: Vec<Node>,
    node_cap: usize,
    /// Nodes at this depth get no children (used by truncated studies and
    /// the backend-equivalence oracle). None = unbounded.
    max_depth: Option<u32>,
}

/// Quenched hitting quantities of a vertex:
/// `H_x = sum_{y <= x} e^{V(y) - V(x)}`, `a_x = P_e(T_x < T_{e*}) =
/// e^{-V(x)} / H_x` and `b_x = P_{x*}(T_x < T_{e*}) = 1 - 1/H_x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingQuantities {
    pub h: f64,
    pub a: f64,
    pub b: f64,
}

impl EnvTree {
    /// Fresh tree with only `e*` and `e` realized.
    pub fn new(spec: EnvSpec, master_seed: u64) -> Self {
        Self::with_limits(spec, master_seed, DEFAULT_NODE_CAP, None)
    }

    pub fn with_limits(
        spec: EnvSpec,
        master_seed: u64,
        node_cap: usize,
        max_depth: Option<u32>,
    ) -> Self {
        let root_key = NodeKey::root();
        let e_star = Node {
            parent: UNREALIZED,
            first_child: 1,
            nu: 1,
            depth: 0,
            omega: f64::NAN,
            v: f64::NAN,
            weight: f64::NAN,
            child_weight_sum: f64::NAN,
            key: root_key,
        };
        let root = Node {
            parent: 0,
            first_child: UNREALIZED,
            nu: 0,
            depth: 0,
            omega: f64::NAN,
            v: 0.0,
            weight: f64::NAN,
            child_weight_sum: f64::NAN,
            key: root_key,
        };
        EnvTree {
            spec,
            master_seed,
            nodes: vec![e_star, root],
            node_cap,
            max_depth,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Number of realized nodes, including `e*`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn parent(&self, x: NodeId) -> NodeId {
        debug_assert!(x != ROOT_PARENT, "e* has no parent");
        NodeId(self.nodes[x.0 as usize].parent)
    }

    pub fn depth(&self, x: NodeId) -> u32 {
        self.nodes[x.0 as usize].depth
    }

    /// V(x); V(e) = 0 and V(x) = V(x*) + omega_x.
    pub fn potential(&self, x: NodeId) -> f64 {
        debug_assert!(x != ROOT_PARENT, "e* carries no potential");
        self.nodes[x.0 as usize].v
    }

    pub fn omega(&self, x: NodeId) -> f64 {
        self.nodes[x.0 as usize].omega
    }

    /// rho = (1 + e^{-omega})^{-1}.
    pub fn rho(&self, x: NodeId) -> f64 {
        1.0 / (1.0 + self.nodes[x.0 as usize].weight)
    }

    /// e^{-omega_x}.
    pub fn weight(&self, x: NodeId) -> f64 {
        self.nodes[x.0 as usize].weight
    }

    pub fn nu(&self, x: NodeId) -> u32 {
        debug_assert!(self.nodes[x.0 as usize].first_child != UNREALIZED);
        u32::from(self.nodes[x.0 as usize].nu)
    }

    pub fn children_realized(&self, x: NodeId) -> bool {
        self.nodes[x.0 as usize].first_child != UNREALIZED
    }

    /// Sum of e^{-omega} over the realized children (the walk kernel's
    /// normalizer is 1 + this).
    pub fn child_weight_sum(&self, x: NodeId) -> f64 {
        debug_assert!(self.children_realized(x));
        self.nodes[x.0 as usize].child_weight_sum
    }

    /// Children of `x` as a contiguous id range, realizing them on first
    /// access. Idempotent: a second call returns the same range and marks.
    pub fn children(&mut self, x: NodeId) -> Result<std::ops::Range<u32>> {
        let xi = x.0 as usize;
        if self.nodes[xi].first_child != UNREALIZED {
            let start = self.nodes[xi].first_child;
            return Ok(start..start + u32::from(self.nodes[xi].nu));
        }
        debug_assert!(x != ROOT_PARENT, "e* has exactly one child, the root");

        let depth = self.nodes[xi].depth;
        let key = self.nodes[xi].key;
        let truncated = self.max_depth.is_some_and(|d| depth >= d);
        let mut marks = ChildMarks::default();
        if !truncated {
            draw_child_marks(&self.spec, self.master_seed, key, &mut marks);
        }

        if self.nodes.len() + marks.omegas.len() > self.node_cap {
            return Err(Error::CapacityExceeded(
                self.nodes.len() + marks.omegas.len(),
                self.node_cap,
            ));
        }

        let start = self.nodes.len() as u32;
        let v_parent = self.nodes[xi].v;
        let mut weight_sum = 0.0;
        for (i, &omega) in marks.omegas.iter().enumerate() {
            let weight = (-omega).exp();
            weight_sum += weight;
            self.nodes.push(Node {
                parent: x.0,
                first_child: UNREALIZED,
                nu: 0,
                depth: depth + 1,
                omega,
                v: v_parent + omega,
                weight,
                child_weight_sum: f64::NAN,
                key: key.child(i as u32),
            });
        }
        let node = &mut self.nodes[xi];
        node.first_child = start;
        node.nu = marks.omegas.len() as u16;
        node.child_weight_sum = weight_sum;
        Ok(start..start + u32::from(node.nu))
    }

    /// H_x, a_x, b_x along the ancestor path. Uses the stable recursion
    /// H_x = 1 + e^{-omega_x} H_{x*} with H_e = 1.
    pub fn hitting_quantities(&self, x: NodeId) -> HittingQuantities {
        debug_assert!(x != ROOT_PARENT);
        let mut path = Vec::with_capacity(self.depth(x) as usize + 1);
        let mut cur = x;
        while cur != ROOT {
            path.push(cur);
            cur = self.parent(cur);
        }
        let mut h = 1.0; // H_e
        for &y in path.iter().rev() {
            h = 1.0 + self.weight(y) * h;
        }
        HittingQuantities {
            h,
            a: (-self.potential(x)).exp() / h,
            b: 1.0 - 1.0 / h,
        }
    }

    /// Whether the offspring skeleton survives, growing it breadth-first.
    /// Survival is certified once `frontier_goal` nodes are alive at once
    /// or the frontier passes `depth_goal`; extinction is exact.
    ///
    /// Realizes nodes, so call it on a throwaway clone of an unexplored
    /// tree or accept the growth.
    pub fn skeleton_survives(&mut self, frontier_goal: usize, depth_goal: u32) -> Result<bool> {
        let mut frontier = vec![ROOT];
        let mut depth = 0u32;
        while !frontier.is_empty() {
            if frontier.len() >= frontier_goal || depth >= depth_goal {
                return Ok(true);
            }
            let mut next = Vec::with_capacity(frontier.len() * 2);
            for x in frontier {
                for c in self.children(x)? {
                    next.push(NodeId(c));
                }
            }
            frontier = next;
            depth += 1;
        }
        Ok(false)
    }
}

/// Marks drawn for one node's children.
#[derive(Default)]
pub(crate) struct ChildMarks {
    pub omegas: Vec<f64>,
}

/// Draw (nu, omega_1..omega_nu) for the children of the node identified by
/// `key`, from its dedicated stream. Shared by the arena tree and the
/// arena-free streaming sampler so both realize the same environment.
pub(crate) fn draw_child_marks(
    spec: &EnvSpec,
    master_seed: u64,
    key: NodeKey,
    out: &mut ChildMarks,
) {
    out.omegas.clear();
    let mut rng = node_stream(master_seed, key);
    let nu = spec.offspring.sample(rng.random::<f64>());
    match spec.increment {
        IncrementFamily::BetaRho { a, c } => {
            let beta = rand_distr::Beta::new(a, c).expect("validated shapes");
            for _ in 0..nu {
                let rho: f64 = beta.sample(&mut rng);
                out.omegas.push((rho / (1.0 - rho)).ln());
            }
        }
        IncrementFamily::TwoPoint {
            omega_hi,
            omega_lo,
            p_hi,
        } => {
            for _ in 0..nu {
                let u: f64 = rng.random();
                out.omegas.push(if u < p_hi { omega_hi } else { omega_lo });
            }
        }
        IncrementFamily::Deterministic { omega } => {
            for _ in 0..nu {
                out.omegas.push(omega);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::OffspringLaw;

    fn det_tree(omega: f64, seed: u64) -> EnvTree {
        let spec = EnvSpec::new(
            OffspringLaw::constant(2),
            IncrementFamily::Deterministic { omega },
        )
        .unwrap();
        EnvTree::new(spec, seed)
    }

    fn beta_tree(a: f64, c: f64, seed: u64) -> EnvTree {
        let spec =
            EnvSpec::new(OffspringLaw::constant(2), IncrementFamily::BetaRho { a, c }).unwrap();
        EnvTree::new(spec, seed)
    }

    #[test]
    fn new_realizes_only_root_pair() {
        let t = det_tree(0.3, 1);
        assert_eq!(t.len(), 2);
        assert_eq!(t.potential(ROOT), 0.0);
    }

    #[test]
    fn deterministic_marks_and_nu() {
        let mut t = det_tree(0.3, 1);
        let kids = t.children(ROOT).unwrap();
        assert_eq!(kids.len(), 2);
        for c in kids {
            assert_eq!(t.omega(NodeId(c)), 0.3);
            assert!((t.potential(NodeId(c)) - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn realization_is_access_order_independent() {
        // depth-first vs breadth-first exploration of the same seed
        let collect_marks = |mut t: EnvTree, bfs: bool| -> Vec<(u32, u64)> {
            // (depth, bits of omega) for all nodes realized to depth 3,
            // sorted by the omega bits to compare as multisets per depth
            let mut acc: Vec<(u32, u64)> = Vec::new();
            if bfs {
                let mut frontier = vec![ROOT];
                for _ in 0..3 {
                    let mut next = vec![];
                    for x in frontier {
                        for c in t.children(x).unwrap() {
                            next.push(NodeId(c));
                        }
                    }
                    for &x in &next {
                        acc.push((t.depth(x), t.omega(x).to_bits()));
                    }
                    frontier = next;
                }
            } else {
                fn dfs(t: &mut EnvTree, x: NodeId, depth: u32, acc: &mut Vec<(u32, u64)>) {
                    if depth == 3 {
                        return;
                    }
                    let kids: Vec<NodeId> =
                        t.children(x).unwrap().map(NodeId).collect();
                    // visit second child before first to scramble order
                    for &c in kids.iter().rev() {
                        acc.push((t.depth(c), t.omega(c).to_bits()));
                        dfs(t, c, depth + 1, acc);
                    }
                }
                dfs(&mut t, ROOT, 0, &mut acc);
            }
            acc.sort_unstable();
            acc
        };
        let a = collect_marks(beta_tree(3.0, 1.0, 99), true);
        let b = collect_marks(beta_tree(3.0, 1.0, 99), false);
        assert_eq!(a, b);
    }

    #[test]
    fn children_idempotent() {
        let mut t = beta_tree(3.0, 1.0, 5);
        let r1 = t.children(ROOT).unwrap();
        let marks1: Vec<f64> = r1.clone().map(|c| t.omega(NodeId(c))).collect();
        let r2 = t.children(ROOT).unwrap();
        let marks2: Vec<f64> = r2.clone().map(|c| t.omega(NodeId(c))).collect();
        assert_eq!(r1, r2);
        assert_eq!(marks1, marks2);
    }

    #[test]
    fn binary_tree_node_count_to_depth() {
        // depth-first enumeration to depth d of a nu=2 tree realizes
        // exactly 2^{d+1} - 1 nodes plus e*
        let mut t = det_tree(0.1, 7);
        let mut stack = vec![(ROOT, 0u32)];
        let d = 4;
        while let Some((x, depth)) = stack.pop() {
            if depth == d {
                continue;
            }
            for c in t.children(x).unwrap() {
                stack.push((NodeId(c), depth + 1));
            }
        }
        assert_eq!(t.len(), (1 << (d + 1)) - 1 + 1);
    }

    #[test]
    fn rho_values() {
        let mut t = det_tree(0.0, 3);
        let c = t.children(ROOT).unwrap().start;
        assert!((t.rho(NodeId(c)) - 0.5).abs() < 1e-15);

        let mut t = det_tree(3.0_f64.ln(), 3);
        let c = t.children(ROOT).unwrap().start;
        assert!((t.rho(NodeId(c)) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn hitting_quantities_examples() {
        // root: H = 1, a = 1, b = 0
        let t = det_tree(0.5, 2);
        let hq = t.hitting_quantities(ROOT);
        assert_eq!((hq.h, hq.a, hq.b), (1.0, 1.0, 0.0));

        // path V = (0, log 2): H = 3/2, a = 1/3, b = 1/3
        let mut t = det_tree(2.0_f64.ln(), 2);
        let c = t.children(ROOT).unwrap().start;
        let hq = t.hitting_quantities(NodeId(c));
        assert!((hq.h - 1.5).abs() < 1e-12);
        assert!((hq.a - 1.0 / 3.0).abs() < 1e-12);
        assert!((hq.b - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn hitting_recursion_and_identity() {
        let mut t = beta_tree(5.0, 2.0, 11);
        // realize a few generations
        let mut frontier = vec![ROOT];
        for _ in 0..5 {
            let mut next = vec![];
            for x in frontier {
                for c in t.children(x).unwrap() {
                    next.push(NodeId(c));
                }
            }
            frontier = next;
        }
        for id in 2..t.len() as u32 {
            let x = NodeId(id);
            let hq = t.hitting_quantities(x);
            let hq_parent = t.hitting_quantities(t.parent(x));
            let h_parent = if t.parent(x) == ROOT { 1.0 } else { hq_parent.h };
            assert!((hq.h - (1.0 + t.weight(x) * h_parent)).abs() < 1e-9 * hq.h);
            // a/(1-b) = e^{-V(x)}
            assert!(
                (hq.a / (1.0 - hq.b) - (-t.potential(x)).exp()).abs()
                    < 1e-12 * (-t.potential(x)).exp().max(1.0)
            );
            assert!(hq.a > 0.0 && hq.a <= 1.0);
            assert!((0.0..1.0).contains(&hq.b));
            assert!(hq.a <= (-t.potential(x)).exp() + 1e-15);
        }
    }

    #[test]
    fn capacity_cap_is_enforced() {
        let spec = EnvSpec::new(
            OffspringLaw::constant(2),
            IncrementFamily::Deterministic { omega: 0.1 },
        )
        .unwrap();
        let mut t = EnvTree::with_limits(spec, 1, 8, None);
        let mut frontier = vec![ROOT];
        let mut hit_cap = false;
        'outer: for _ in 0..5 {
            let mut next = vec![];
            for x in frontier {
                match t.children(x) {
                    Ok(r) => next.extend(r.map(NodeId)),
                    Err(Error::CapacityExceeded(_, _)) => {
                        hit_cap = true;
                        break 'outer;
                    }
                    Err(e) => panic!("unexpected error {e}"),
                }
            }
            frontier = next;
        }
        assert!(hit_cap);
    }

    #[test]
    fn max_depth_truncates() {
        let spec = EnvSpec::new(
            OffspringLaw::constant(2),
            IncrementFamily::Deterministic { omega: 2.0_f64.ln() },
        )
        .unwrap();
        let mut t = EnvTree::with_limits(spec, 1, 1 << 20, Some(2));
        let kids: Vec<NodeId> = t.children(ROOT).unwrap().map(NodeId).collect();
        let grandkids: Vec<NodeId> = kids
            .iter()
            .flat_map(|&k| t.children(k).unwrap().map(NodeId).collect::<Vec<_>>())
            .collect();
        assert_eq!(grandkids.len(), 4);
        for g in grandkids {
            assert_eq!(t.children(g).unwrap().len(), 0);
        }
    }

    #[test]
    fn extinction_detection() {
        // subcritical would be rejected by EnvSpec, so use a supercritical
        // law with heavy extinction: P(0) = 0.4, P(3) = 0.6, mean 1.8
        let spec = EnvSpec::new(
            OffspringLaw::new(vec![0.4, 0.0, 0.0, 0.6]).unwrap(),
            IncrementFamily::Deterministic { omega: 0.1 },
        )
        .unwrap();
        let (mut dead, mut alive) = (0, 0);
        for seed in 0..200 {
            let mut t = EnvTree::new(spec.clone(), seed);
            if t.skeleton_survives(256, 4096).unwrap() {
                alive += 1;
            } else {
                dead += 1;
            }
        }
        // extinction probability solves q = 0.4 + 0.6 q^3 => q ~ 0.468
        assert!(dead > 50 && alive > 50, "dead={dead} alive={alive}");
    }
}
