//! Labeled Butcher trees, their extraction from branching-tree samples,
//! elementary differentials and truncated Butcher series.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::branching_tree::{Base, Mark, TreeSample};
use crate::tensor::{AnchoredDerivatives, DerivativeOracle, OracleError};

/// Largest order accepted by [`enumerate_trees`].
pub const MAX_CATALOG_ORDER: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ButcherError {
    #[error("graft label {label} out of range for a tree of order {order}")]
    GraftLabel { label: usize, order: usize },
    #[error("malformed tree sample: {0}")]
    Structure(String),
    #[error("catalog order {0} exceeds the budget of {MAX_CATALOG_ORDER}")]
    OrderBudget(usize),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vertex {
    pub base: Base,
    /// Derivative order `m` of the mark `∇^m base`.
    pub order: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Labeled rooted tree; the vertex at index `i` carries label `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ButcherTree {
    vertices: Vec<Vertex>,
}

impl ButcherTree {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn dot(base: Base) -> Self {
        Self {
            vertices: vec![Vertex {
                base,
                order: 0,
                parent: None,
                children: Vec::new(),
            }],
        }
    }

    pub fn order(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    /// Vertex with the given 1-based label.
    pub fn vertex(&self, label: usize) -> Option<&Vertex> {
        label.checked_sub(1).and_then(|i| self.vertices.get(i))
    }

    /// Every vertex has as many children as its mark order, parents carry
    /// smaller labels, and parent/child links agree.
    pub fn satisfies_mark_rule(&self) -> bool {
        self.vertices.iter().enumerate().all(|(i, v)| {
            v.children.len() == v.order
                && v.children.iter().all(|&c| c > i && self.vertices[c].parent == Some(i))
                && (i == 0) == v.parent.is_none()
        })
    }

    /// Nested-bracket rendering, children in label order; `[]` is the dot.
    pub fn render(&self) -> String {
        fn go(t: &ButcherTree, i: usize, out: &mut String) {
            out.push('[');
            for (n, &c) in t.vertices[i].children.iter().enumerate() {
                if n > 0 {
                    out.push(',');
                }
                go(t, c, out);
            }
            out.push(']');
        }
        let mut out = String::new();
        if !self.is_empty() {
            go(self, 0, &mut out);
        }
        out
    }

    /// Unlabeled shape, used to compare trees up to relabeling.
    pub fn shape(&self) -> Shape {
        fn go(t: &ButcherTree, i: usize) -> Shape {
            Shape::new(t.vertices[i].children.iter().map(|&c| go(t, c)).collect())
        }
        if self.is_empty() {
            Shape(Vec::new())
        } else {
            go(self, 0)
        }
    }

    #[cfg(test)]
    fn bump_order(&mut self, label: usize) {
        self.vertices[label - 1].order += 1;
    }

    /// In-place `self *_l dot(f)` followed by raising the order of vertex `l`;
    /// returns the label of the new vertex.
    fn attach_leaf(&mut self, label: usize) -> usize {
        let idx = self.vertices.len();
        self.vertices.push(Vertex {
            base: Base::F,
            order: 0,
            parent: Some(label - 1),
            children: Vec::new(),
        });
        let v = &mut self.vertices[label - 1];
        v.children.push(idx);
        v.order += 1;
        idx + 1
    }
}

impl fmt::Display for ButcherTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// `tau1 *_l tau2`: attaches the root of `tau2` under vertex `l` of `tau1`
/// and shifts the labels of `tau2` by `|tau1|`. Marks are left untouched.
pub fn graft(tau1: &ButcherTree, l: usize, tau2: &ButcherTree) -> Result<ButcherTree, ButcherError> {
    let n1 = tau1.order();
    let valid = if n1 == 0 { l == 0 } else { l <= n1 };
    if !valid {
        return Err(ButcherError::GraftLabel { label: l, order: n1 });
    }
    if tau2.is_empty() {
        return Ok(tau1.clone());
    }
    if n1 == 0 {
        return Ok(tau2.clone());
    }
    if l == 0 {
        return Err(ButcherError::GraftLabel { label: l, order: n1 });
    }
    let mut out = tau1.clone();
    for (i, v) in tau2.vertices.iter().enumerate() {
        out.vertices.push(Vertex {
            base: v.base,
            order: v.order,
            parent: if i == 0 { Some(l - 1) } else { v.parent.map(|p| p + n1) },
            children: v.children.iter().map(|c| c + n1).collect(),
        });
    }
    out.vertices[l - 1].children.push(n1);
    Ok(out)
}

/// Builds the labeled Butcher tree of a sample by replaying its splits in
/// increasing death-time order.
///
/// Roots marked `Identity` follow the recursive construction directly. A
/// root marked `∇^0 g` (or `f`) starts from a dot carrying that base, so
/// the vertex descending from the root keeps it.
pub fn extract_butcher(sample: &TreeSample) -> Result<ButcherTree, ButcherError> {
    let mut owner: Vec<Option<usize>> = vec![None; sample.branches.len()];
    let mut tree = match sample.root_mark {
        Mark::Identity => ButcherTree::empty(),
        Mark::Deriv { base, order: 0 } => {
            owner[0] = Some(1);
            ButcherTree::dot(base)
        }
        Mark::Deriv { order, .. } => {
            return Err(ButcherError::Structure(format!(
                "root mark of order {order} has no tree representation"
            )))
        }
    };
    let mut splits = sample.interior.clone();
    splits.sort_by(|&a, &b| sample.branches[a].death.total_cmp(&sample.branches[b].death));
    for k in splits {
        let branch = &sample.branches[k];
        match branch.mark {
            Mark::Identity => {
                let [child] = branch.children[..] else {
                    return Err(ButcherError::Structure("identity branch must have one offspring".into()));
                };
                if !tree.is_empty() {
                    return Err(ButcherError::Structure("identity branch split twice".into()));
                }
                tree = ButcherTree::dot(Base::F);
                owner[child] = Some(1);
            }
            Mark::Deriv { .. } => {
                let [first, second] = branch.children[..] else {
                    return Err(ButcherError::Structure(format!(
                        "branch {} must have two offspring",
                        branch.label
                    )));
                };
                let l = owner[k].ok_or_else(|| {
                    ButcherError::Structure(format!("split of branch {} precedes its birth", branch.label))
                })?;
                owner[first] = Some(tree.attach_leaf(l));
                owner[second] = Some(l);
            }
        }
    }
    Ok(tree)
}

/// Derivatives of `f` (and optionally `g`) anchored at `x0`.
pub struct DifferentialContext<'a> {
    f: AnchoredDerivatives<'a>,
    g: Option<AnchoredDerivatives<'a>>,
}

impl<'a> DifferentialContext<'a> {
    pub fn new(
        oracle_f: &'a dyn DerivativeOracle,
        oracle_g: Option<&'a dyn DerivativeOracle>,
        x0: &[f64],
    ) -> Result<Self, OracleError> {
        Ok(Self {
            f: AnchoredDerivatives::new(oracle_f, x0)?,
            g: oracle_g.map(|g| AnchoredDerivatives::new(g, x0)).transpose()?,
        })
    }

    pub fn x0(&self) -> &[f64] {
        self.f.x0()
    }

    /// The raw oracle behind `base`, if one was supplied.
    pub fn oracle(&self, base: Base) -> Option<&'a dyn DerivativeOracle> {
        match base {
            Base::F => Some(self.f.oracle()),
            Base::G => self.g.as_ref().map(AnchoredDerivatives::oracle),
        }
    }

    /// `∇^k base(x0)` applied to `args`, `k = args.len()`.
    pub fn apply(&self, base: Base, args: &[&[f64]]) -> Result<Vec<f64>, OracleError> {
        match base {
            Base::F => self.f.apply(args),
            Base::G => self.g.as_ref().ok_or(OracleError::Missing("g"))?.apply(args),
        }
    }
}

/// `F(τ)(x0)` computed from a prepared context.
pub fn elementary_differential_in(tau: &ButcherTree, ctx: &DifferentialContext<'_>) -> Result<Vec<f64>, ButcherError> {
    if tau.is_empty() {
        return Ok(ctx.x0().to_vec());
    }
    // children always carry larger labels than their parent
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); tau.order()];
    for i in (0..tau.order()).rev() {
        let v = &tau.vertices[i];
        if v.children.len() != v.order {
            return Err(ButcherError::Structure(format!(
                "vertex {} has mark order {} but {} children",
                i + 1,
                v.order,
                v.children.len()
            )));
        }
        let args: Vec<&[f64]> = v.children.iter().map(|&c| values[c].as_slice()).collect();
        values[i] = ctx.apply(v.base, &args)?;
    }
    Ok(values.swap_remove(0))
}

/// `F(τ)(x0)`: `F(∅) = x0`, and a vertex marked `∇^m h` with subtrees
/// `τ1..τm` evaluates to `∇^m h(x0)(F(τ1), .., F(τm))`.
pub fn elementary_differential(
    tau: &ButcherTree,
    oracle_f: &dyn DerivativeOracle,
    oracle_g: Option<&dyn DerivativeOracle>,
    x0: &[f64],
) -> Result<Vec<f64>, ButcherError> {
    let ctx = DifferentialContext::new(oracle_f, oracle_g, x0)?;
    elementary_differential_in(tau, &ctx)
}

/// Canonical unlabeled rooted tree: subtrees sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Shape(Vec<Shape>);

impl Shape {
    pub fn new(mut children: Vec<Shape>) -> Self {
        children.sort();
        Self(children)
    }

    pub fn dot() -> Self {
        Self(Vec::new())
    }

    pub fn children(&self) -> &[Shape] {
        &self.0
    }

    pub fn order(&self) -> usize {
        1 + self.0.iter().map(Shape::order).sum::<usize>()
    }

    /// Tree factorial `τ!`: product of all subtree orders.
    pub fn density(&self) -> u64 {
        self.order() as u64 * self.0.iter().map(Shape::density).product::<u64>()
    }

    /// Symmetry `ζ(τ)`: size of the root-fixing automorphism group.
    pub fn symmetry(&self) -> u64 {
        let mut total = 1u64;
        let mut i = 0;
        while i < self.0.len() {
            let mut j = i;
            while j < self.0.len() && self.0[j] == self.0[i] {
                j += 1;
            }
            let m = (j - i) as u64;
            total *= (1..=m).product::<u64>() * self.0[i].symmetry().pow(m as u32);
            i = j;
        }
        total
    }

    /// All trees obtained by attaching one new leaf somewhere.
    fn extensions(&self) -> Vec<Shape> {
        let mut out = vec![Shape::new(
            self.0.iter().cloned().chain(std::iter::once(Shape::dot())).collect(),
        )];
        for i in 0..self.0.len() {
            for ext in self.0[i].extensions() {
                let mut kids = self.0.clone();
                kids[i] = ext;
                out.push(Shape::new(kids));
            }
        }
        out
    }

    /// Labeled `f`-tree with this shape, labels assigned depth first.
    pub fn to_tree(&self) -> ButcherTree {
        fn go(s: &Shape, parent: Option<usize>, out: &mut Vec<Vertex>) -> usize {
            let idx = out.len();
            out.push(Vertex {
                base: Base::F,
                order: s.0.len(),
                parent,
                children: Vec::new(),
            });
            for c in &s.0 {
                let ci = go(c, Some(idx), out);
                out[idx].children.push(ci);
            }
            idx
        }
        let mut vertices = Vec::new();
        go(self, None, &mut vertices);
        ButcherTree { vertices }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub shape: Shape,
    pub order: usize,
    pub density: u64,
    pub symmetry: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootedTreeCatalog {
    /// `by_order[n - 1]` lists the trees of order `n`.
    by_order: Vec<Vec<CatalogEntry>>,
}

impl RootedTreeCatalog {
    pub fn max_order(&self) -> usize {
        self.by_order.len()
    }

    pub fn trees_of_order(&self, n: usize) -> &[CatalogEntry] {
        n.checked_sub(1)
            .and_then(|i| self.by_order.get(i))
            .map_or(&[], Vec::as_slice)
    }

    pub fn counts(&self) -> Vec<usize> {
        self.by_order.iter().map(Vec::len).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.by_order.iter().flatten()
    }
}

pub fn enumerate_trees(max_order: usize) -> Result<RootedTreeCatalog, ButcherError> {
    if max_order > MAX_CATALOG_ORDER {
        return Err(ButcherError::OrderBudget(max_order));
    }
    let mut by_order: Vec<Vec<CatalogEntry>> = Vec::with_capacity(max_order);
    let mut level: BTreeSet<Shape> = BTreeSet::from([Shape::dot()]);
    for n in 1..=max_order {
        if n > 1 {
            level = level.iter().flat_map(Shape::extensions).collect();
        }
        by_order.push(
            level
                .iter()
                .map(|s| CatalogEntry {
                    shape: s.clone(),
                    order: n,
                    density: s.density(),
                    symmetry: s.symmetry(),
                })
                .collect(),
        );
    }
    Ok(RootedTreeCatalog { by_order })
}

/// `x0 + Σ_{|τ| <= max_order} t^{|τ|} / (τ! ζ(τ)) F(τ)(x0)`.
pub fn butcher_series(
    oracle: &dyn DerivativeOracle,
    x0: &[f64],
    t: f64,
    max_order: usize,
) -> Result<Vec<f64>, ButcherError> {
    let catalog = enumerate_trees(max_order)?;
    let ctx = DifferentialContext::new(oracle, None, x0)?;
    let mut sum = x0.to_vec();
    for entry in catalog.iter() {
        let coeff = t.powi(entry.order as i32) / (entry.density as f64 * entry.symmetry as f64);
        let value = elementary_differential_in(&entry.shape.to_tree(), &ctx)?;
        for (s, v) in sum.iter_mut().zip(value) {
            *s += coeff * v;
        }
    }
    Ok(sum)
}
