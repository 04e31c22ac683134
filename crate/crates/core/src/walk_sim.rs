//! Exact step-level simulation of the quenched Markov chain on the lazily
//! realized tree, with excursion bookkeeping. This is the ground-truth
//! oracle backend.
//!
//! Transition kernel: from `e*` the walk moves to `e` with probability 1;
//! from a vertex `x` it moves to `x*` with probability
//! `1 / (1 + sum_i e^{-omega_{x_i}})` and to the child `x_j` with
//! probability `e^{-omega_{x_j}} / (1 + sum_i e^{-omega_{x_i}})`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::localtime::{Backend, LocalTimeField};
use crate::tree_env::{EnvTree, NodeId, ROOT, ROOT_PARENT};

/// Default per-replica step budget; fast-regime return times grow like
/// n^min(kappa,2).
pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000_000;

/// Result of a walk: the edge local-time field plus step bookkeeping.
#[derive(Debug, Clone)]
pub struct WalkRun {
    pub field: LocalTimeField,
    /// Total number of transitions simulated.
    pub steps: u64,
    pub n_excursions: u64,
    /// Largest generation visited.
    pub max_generation: u32,
    /// Step count of each excursion, when requested.
    pub excursion_steps: Option<Vec<u64>>,
}

/// One transition of the chain, realizing children on demand.
pub fn step(tree: &mut EnvTree, current: NodeId, rng: &mut impl Rng) -> Result<NodeId> {
    if current == ROOT_PARENT {
        return Ok(ROOT);
    }
    let kids = tree.children(current)?;
    if kids.is_empty() {
        return Ok(tree.parent(current));
    }
    let total = 1.0 + tree.child_weight_sum(current);
    let u: f64 = rng.random::<f64>() * total;
    if u < 1.0 {
        return Ok(tree.parent(current));
    }
    let mut acc = 1.0;
    let mut last = kids.start;
    for c in kids {
        acc += tree.weight(NodeId(c));
        last = c;
        if u < acc {
            return Ok(NodeId(c));
        }
    }
    // float round-off at the top of the CDF
    Ok(NodeId(last))
}

struct Crossings {
    counts: Vec<u64>,
    max_generation: u32,
}

impl Crossings {
    fn new() -> Self {
        Crossings {
            counts: Vec::new(),
            max_generation: 0,
        }
    }

    #[inline]
    fn record_down(&mut self, tree: &EnvTree, to: NodeId) {
        let idx = to.0 as usize;
        if idx >= self.counts.len() {
            self.counts.resize(tree.len(), 0);
        }
        self.counts[idx] += 1;
        self.max_generation = self.max_generation.max(tree.depth(to));
    }
}

/// Simulate until the n-th return to `e*`, accumulating downward edge
/// crossings. The chain starts at `e*`, so every excursion crosses the
/// root edge exactly once downward and `N_e = n`.
pub fn run_excursions(
    tree: &mut EnvTree,
    n: u64,
    rng: &mut impl Rng,
    step_budget: u64,
    record_excursions: bool,
) -> Result<WalkRun> {
    assert!(n >= 1, "need at least one excursion");
    let mut crossings = Crossings::new();
    let mut cur = ROOT_PARENT;
    let mut steps = 0u64;
    let mut excursions_done = 0u64;
    let mut excursion_start = 0u64;
    let mut per_excursion = record_excursions.then(Vec::new);

    while excursions_done < n {
        let prev = cur;
        cur = step(tree, cur, rng)?;
        steps += 1;
        if steps > step_budget {
            return Err(Error::StepBudgetExceeded(step_budget));
        }
        if cur != ROOT_PARENT && tree.parent(cur) == prev {
            crossings.record_down(tree, cur);
        }
        if cur == ROOT_PARENT {
            excursions_done += 1;
            if let Some(v) = per_excursion.as_mut() {
                v.push(steps - excursion_start);
            }
            excursion_start = steps;
        }
    }

    let field = LocalTimeField::from_tree_counts(tree, &crossings.counts, n, Backend::Step)?;
    debug_assert_eq!(2 * field.total_count(), u128::from(steps));
    Ok(WalkRun {
        field,
        steps,
        n_excursions: n,
        max_generation: crossings.max_generation,
        excursion_steps: per_excursion,
    })
}

/// Exactly `n_steps` transitions from X_0 = e; the field counts downward
/// crossings within [1, n_steps].
pub fn run_steps(tree: &mut EnvTree, n_steps: u64, rng: &mut impl Rng) -> Result<WalkRun> {
    let mut crossings = Crossings::new();
    let mut cur = ROOT;
    let mut excursions = 0u64;
    for _ in 0..n_steps {
        let prev = cur;
        cur = step(tree, cur, rng)?;
        if cur != ROOT_PARENT && tree.parent(cur) == prev {
            crossings.record_down(tree, cur);
        }
        if cur == ROOT_PARENT {
            excursions += 1;
        }
    }
    let n_root = crossings.counts.get(ROOT.0 as usize).copied().unwrap_or(0);
    let field = LocalTimeField::from_tree_counts(tree, &crossings.counts, n_root, Backend::Step)?;
    Ok(WalkRun {
        field,
        steps: n_steps,
        n_excursions: excursions,
        max_generation: crossings.max_generation,
        excursion_steps: None,
    })
}
