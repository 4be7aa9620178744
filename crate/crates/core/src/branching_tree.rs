//! Random marked branching trees and marked Yule trees.
//!
//! Trees are grown breadth first: branches of one generation are processed
//! in label-lexicographic order and each draws its lifetime when processed.
//! Together with a per-sample random stream this makes a tree a pure
//! function of `(seed, sample_index)`.

use std::collections::VecDeque;
use std::fmt;

use rand::RngCore;
use thiserror::Error;

use crate::lifetime_densities::{DensityError, LifetimeDensity};

pub const DEFAULT_NODE_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("tree exceeded the node cap of {cap} branches")]
    Explosion { cap: usize },
    #[error("horizon {horizon} is outside [0, {limit}]")]
    Horizon { horizon: f64, limit: f64 },
    #[error("invalid tree parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Density(#[from] DensityError),
}

/// Path from the root over `{1, 2}`; the empty path is the root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Label(Vec<u8>);

impl Label {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn from_path(path: &[u8]) -> Self {
        Self(path.to_vec())
    }

    pub fn path(&self) -> &[u8] {
        &self.0
    }

    pub fn child(&self, which: u8) -> Self {
        let mut p = self.0.clone();
        p.push(which);
        Self(p)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(Self(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn generation(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("-");
        }
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

pub fn generation(label: &Label) -> usize {
    label.generation()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Base {
    F,
    G,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mark {
    Identity,
    /// `∇^order f` or `∇^order g`.
    Deriv { base: Base, order: usize },
}

impl Mark {
    pub const F: Mark = Mark::Deriv { base: Base::F, order: 0 };
    pub const G: Mark = Mark::Deriv { base: Base::G, order: 0 };

    /// Marks of the offspring created when a branch with this mark splits.
    pub fn offspring(self) -> Vec<Mark> {
        match self {
            Mark::Identity => vec![Mark::F],
            Mark::Deriv { base, order } => vec![
                Mark::F,
                Mark::Deriv {
                    base,
                    order: order + 1,
                },
            ],
        }
    }
}

impl fmt::Display for Mark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mark::Identity => f.write_str("Id"),
            Mark::Deriv { base: Base::F, order } => write!(f, "F{order}"),
            Mark::Deriv { base: Base::G, order } => write!(f, "G{order}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkClass {
    FClass,
    GClass,
    Identity,
}

pub fn class_of(branch: &Branch) -> MarkClass {
    match branch.mark {
        Mark::Identity => MarkClass::Identity,
        Mark::Deriv { base: Base::F, .. } => MarkClass::FClass,
        Mark::Deriv { base: Base::G, .. } => MarkClass::GClass,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub label: Label,
    pub mark: Mark,
    pub birth: f64,
    pub lifetime: f64,
    pub death: f64,
    /// Arena index of the parent branch.
    pub parent: Option<usize>,
    /// Arena indices of the offspring, in label order.
    pub children: Vec<usize>,
}

impl Branch {
    pub fn generation(&self) -> usize {
        self.label.generation()
    }
}

/// One realised tree on `[0, horizon]`.
///
/// `branches` is the arena in breadth-first order (index 0 is the root);
/// `interior` and `boundary` index into it.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSample {
    pub horizon: f64,
    pub root_mark: Mark,
    pub branches: Vec<Branch>,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
}

impl TreeSample {
    pub fn root(&self) -> &Branch {
        &self.branches[0]
    }

    pub fn interior_branches(&self) -> impl Iterator<Item = &Branch> {
        self.interior.iter().map(|&i| &self.branches[i])
    }

    pub fn boundary_branches(&self) -> impl Iterator<Item = &Branch> {
        self.boundary.iter().map(|&i| &self.branches[i])
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn max_generation(&self) -> usize {
        self.branches.iter().map(Branch::generation).max().unwrap_or(0)
    }

    /// One branch per line: `label<TAB>mark<TAB>birth<TAB>death`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for b in &self.branches {
            out.push_str(&format!("{}\t{}\t{:e}\t{:e}\n", b.label, b.mark, b.birth, b.death));
        }
        out
    }
}

struct Node<M> {
    label: Label,
    mark: M,
    birth: f64,
    lifetime: f64,
    parent: Option<usize>,
    children: Vec<usize>,
}

/// Breadth-first growth shared by both tree kinds.
fn grow<M: Copy>(
    root_mark: M,
    horizon: f64,
    node_cap: usize,
    offspring: impl Fn(M) -> Vec<M>,
    mut lifetime: impl FnMut(&Label) -> f64,
) -> Result<(Vec<Node<M>>, Vec<usize>, Vec<usize>), TreeError> {
    if node_cap == 0 {
        return Err(TreeError::Parameter("node cap must be at least 1".into()));
    }
    let root_label = Label::root();
    let first = lifetime(&root_label);
    let mut nodes = vec![Node {
        label: root_label,
        mark: root_mark,
        birth: 0.0,
        lifetime: first,
        parent: None,
        children: Vec::new(),
    }];
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let death = nodes[i].birth + nodes[i].lifetime;
        if death > horizon {
            boundary.push(i);
            continue;
        }
        interior.push(i);
        let marks = offspring(nodes[i].mark);
        for (which, mark) in marks.into_iter().enumerate() {
            if nodes.len() >= node_cap {
                return Err(TreeError::Explosion { cap: node_cap });
            }
            let label = nodes[i].label.child(which as u8 + 1);
            let life = lifetime(&label);
            let idx = nodes.len();
            nodes.push(Node {
                label,
                mark,
                birth: death,
                lifetime: life,
                parent: Some(i),
                children: Vec::new(),
            });
            nodes[i].children.push(idx);
            queue.push_back(idx);
        }
    }
    Ok((nodes, interior, boundary))
}

/// Grows a tree with lifetimes supplied by `next_lifetime`, called once per
/// branch in breadth-first order.
pub fn sample_tree_with(
    horizon: f64,
    root_mark: Mark,
    node_cap: usize,
    next_lifetime: impl FnMut(&Label) -> f64,
) -> Result<TreeSample, TreeError> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(TreeError::Horizon {
            horizon,
            limit: f64::INFINITY,
        });
    }
    let (nodes, interior, boundary) = grow(root_mark, horizon, node_cap, Mark::offspring, next_lifetime)?;
    let branches = nodes
        .into_iter()
        .map(|n| Branch {
            label: n.label,
            mark: n.mark,
            birth: n.birth,
            lifetime: n.lifetime,
            death: n.birth + n.lifetime,
            parent: n.parent,
            children: n.children,
        })
        .collect();
    Ok(TreeSample {
        horizon,
        root_mark,
        branches,
        interior,
        boundary,
    })
}

/// Samples the marked branching tree started from `root_mark` on `[0, horizon]`.
pub fn sample_tree<R: RngCore + ?Sized>(
    density: &LifetimeDensity,
    horizon: f64,
    root_mark: Mark,
    rng: &mut R,
    node_cap: usize,
) -> Result<TreeSample, TreeError> {
    if horizon > density.horizon() {
        return Err(TreeError::Horizon {
            horizon,
            limit: density.horizon(),
        });
    }
    sample_tree_with(horizon, root_mark, node_cap, |_| density.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct YuleBranch {
    pub label: Label,
    pub mark: usize,
    pub birth: f64,
    pub death: f64,
    pub parent: Option<usize>,
}

/// Marked Yule tree: exponential lifetimes, a split of mark `i` yields
/// offspring marked `0` and `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedYuleSample {
    pub horizon: f64,
    pub branches: Vec<YuleBranch>,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
}

impl MarkedYuleSample {
    /// Total progeny `|K_t|`.
    pub fn total_progeny(&self) -> usize {
        self.branches.len()
    }

    /// `∏_k σ(mark_k)` over every branch of the tree.
    pub fn mark_product(&self, sigma: impl Fn(usize) -> f64) -> f64 {
        self.branches.iter().map(|b| sigma(b.mark)).product()
    }
}

fn yule_offspring(mark: usize) -> Vec<usize> {
    vec![0, mark + 1]
}

pub fn sample_marked_yule<R: RngCore + ?Sized>(
    lambda: f64,
    horizon: f64,
    j: usize,
    rng: &mut R,
    node_cap: usize,
) -> Result<MarkedYuleSample, TreeError> {
    let density = LifetimeDensity::exponential(lambda)?;
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(TreeError::Horizon {
            horizon,
            limit: f64::INFINITY,
        });
    }
    let (nodes, interior, boundary) = grow(j, horizon, node_cap, yule_offspring, |_| density.sample(rng))?;
    let branches = nodes
        .into_iter()
        .map(|n| YuleBranch {
            label: n.label,
            mark: n.mark,
            birth: n.birth,
            death: n.birth + n.lifetime,
            parent: n.parent,
        })
        .collect();
    Ok(MarkedYuleSample {
        horizon,
        branches,
        interior,
        boundary,
    })
}
