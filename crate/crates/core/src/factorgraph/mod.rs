//! Compilation of a grammar into a factor graph over binary variables.
//!
//! Three factor families, all stored factor-major with contiguous scopes:
//! - one noisy-or factor per brick, scope `[X(A,ω), G-inputs…]`;
//! - one rule-selection categorical per brick whose symbol has rules, scope
//!   `[X(A,ω), R(A,ω,r)…]`;
//! - one pose-selection categorical per (brick, rule, slot) with nonempty
//!   support, scope `[R(A,ω,r), G(A,ω,r,i,z)…]`.
//!
//! Categorical factors follow the switch convention: with the switch on,
//! exactly one outcome is on and contributes `θ_i`; with the switch off, all
//! outcomes must be off and the factor is 1.

mod layout;

use std::fmt::Write as _;

use thiserror::Error;

pub use layout::{SlotVars, VarId, VarKind, VarLayout, VariableBudgetExceeded};

use crate::grammar::{BrickId, Grammar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FactorKind {
    /// `P(z = 0 | y) = (1 - leak) · exp(-beta · Σ y)`.
    NoisyOr { leak: f64, beta: f64 },
    /// Switched categorical with outcome probabilities `theta`.
    Categorical,
}

/// Borrowed view of one factor. `scope[0]` is the noisy-or output or the
/// categorical switch; the remaining entries are inputs or outcomes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Factor<'a> {
    pub kind: FactorKind,
    pub scope: &'a [VarId],
    /// Outcome probabilities, aligned with `scope[1..]`; empty for noisy-or.
    pub theta: &'a [f64],
}

impl<'a> Factor<'a> {
    pub fn head(&self) -> VarId {
        self.scope[0]
    }

    pub fn tail(&self) -> &'a [VarId] {
        &self.scope[1..]
    }

    pub fn degree(&self) -> usize {
        self.scope.len() - 1
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("assignment has {got} values, factor scope has {expected}")]
pub struct ScopeMismatch {
    pub expected: usize,
    pub got: usize,
}

/// `β = -ln(1 - ρ)`; infinite for `ρ = 1`.
pub fn noisy_or_strength(rho: f64) -> f64 {
    -(-rho).ln_1p()
}

/// `exp(-β·c)` with the convention `exp(-∞·0) = 1`.
pub(crate) fn all_fail(beta: f64, active: usize) -> f64 {
    if active == 0 {
        1.0
    } else {
        (-beta * active as f64).exp()
    }
}

/// Exact table value of a factor; `values` is aligned with `f.scope`.
pub fn eval_factor(f: &Factor<'_>, values: &[bool]) -> Result<f64, ScopeMismatch> {
    if values.len() != f.scope.len() {
        return Err(ScopeMismatch { expected: f.scope.len(), got: values.len() });
    }
    let head = values[0];
    let tail = &values[1..];
    let on = tail.iter().filter(|&&v| v).count();
    Ok(match f.kind {
        FactorKind::NoisyOr { leak, beta } => {
            let off = (1.0 - leak) * all_fail(beta, on);
            if head {
                1.0 - off
            } else {
                off
            }
        }
        FactorKind::Categorical => match (head, on) {
            (false, 0) => 1.0,
            (true, 1) => f.theta[tail.iter().position(|&v| v).unwrap()],
            _ => 0.0,
        },
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompileError {
    #[error(transparent)]
    CapacityExceeded(#[from] VariableBudgetExceeded),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FactorCounts {
    pub noisy_or: usize,
    pub rule_select: usize,
    pub pose_select: usize,
}

impl FactorCounts {
    pub fn total(&self) -> usize {
        self.noisy_or + self.rule_select + self.pose_select
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorGraph {
    layout: VarLayout,
    kinds: Vec<FactorKind>,
    // factor f owns edges edge_start[f]..edge_start[f+1]
    edge_start: Vec<u32>,
    edge_var: Vec<VarId>,
    // categorical outcome probabilities, indexed by edge (0 for heads and noisy-or)
    edge_theta: Vec<f64>,
    // variable v touches edges var_edges[var_start[v]..var_start[v+1]]
    var_start: Vec<u32>,
    var_edges: Vec<u32>,
    counts: FactorCounts,
}

/// Compiles with no variable budget.
pub fn compile(g: &Grammar) -> FactorGraph {
    compile_with_budget(g, usize::MAX).expect("unbounded budget")
}

pub fn compile_with_budget(g: &Grammar, max_variables: usize) -> Result<FactorGraph, CompileError> {
    let layout = VarLayout::with_budget(g, max_variables)?;
    let nb = layout.num_bricks();
    let beta = noisy_or_strength(g.rho());
    let mut kinds = Vec::new();
    let mut edge_start = vec![0u32];
    let mut edge_var = Vec::new();
    let mut edge_theta = Vec::new();
    let mut counts = FactorCounts::default();

    for b in 0..nb as u32 {
        let brick = BrickId(b);
        let leak = g.symbol(g.bricks().symbol_of(brick)).self_rooting;
        kinds.push(FactorKind::NoisyOr { leak, beta });
        edge_var.push(layout.x(brick));
        edge_var.extend(layout.inputs(brick));
        edge_theta.resize(edge_var.len(), 0.0);
        edge_start.push(edge_var.len() as u32);
        counts.noisy_or += 1;
    }
    for b in 0..nb as u32 {
        let brick = BrickId(b);
        let rules = g.rules_for(g.bricks().symbol_of(brick));
        if rules.is_empty() {
            continue;
        }
        kinds.push(FactorKind::Categorical);
        edge_var.push(layout.x(brick));
        edge_theta.push(0.0);
        for (v, &r) in layout.r_vars(brick).zip(rules) {
            edge_var.push(v);
            edge_theta.push(g.rule(r).probability);
        }
        edge_start.push(edge_var.len() as u32);
        counts.rule_select += 1;
    }
    for block in layout.all_slots() {
        if block.len == 0 {
            continue;
        }
        kinds.push(FactorKind::Categorical);
        edge_var.push(block.switch);
        edge_theta.push(0.0);
        for j in 0..block.len as u32 {
            let v = VarId(block.first.0 + j);
            edge_var.push(v);
            edge_theta.push(layout.g_probability(v));
        }
        edge_start.push(edge_var.len() as u32);
        counts.pose_select += 1;
    }

    let nv = layout.num_vars();
    let mut var_start = vec![0u32; nv + 1];
    for v in &edge_var {
        var_start[v.index() + 1] += 1;
    }
    for v in 0..nv {
        var_start[v + 1] += var_start[v];
    }
    let mut fill = var_start.clone();
    let mut var_edges = vec![0u32; edge_var.len()];
    for (e, v) in edge_var.iter().enumerate() {
        var_edges[fill[v.index()] as usize] = e as u32;
        fill[v.index()] += 1;
    }

    Ok(FactorGraph { layout, kinds, edge_start, edge_var, edge_theta, var_start, var_edges, counts })
}

impl FactorGraph {
    pub fn layout(&self) -> &VarLayout {
        &self.layout
    }

    pub fn num_vars(&self) -> usize {
        self.layout.num_vars()
    }

    pub fn num_factors(&self) -> usize {
        self.kinds.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_var.len()
    }

    pub fn counts(&self) -> FactorCounts {
        self.counts
    }

    pub fn factor(&self, f: usize) -> Factor<'_> {
        let range = self.edges_of(f);
        let theta = match self.kinds[f] {
            FactorKind::NoisyOr { .. } => &[][..],
            FactorKind::Categorical => &self.edge_theta[range.start + 1..range.end],
        };
        Factor { kind: self.kinds[f], scope: &self.edge_var[range], theta }
    }

    pub fn factors(&self) -> impl Iterator<Item = Factor<'_>> + '_ {
        (0..self.num_factors()).map(|f| self.factor(f))
    }

    /// Edge ids of factor `f`, in scope order.
    pub fn edges_of(&self, f: usize) -> std::ops::Range<usize> {
        self.edge_start[f] as usize..self.edge_start[f + 1] as usize
    }

    pub fn edge_var(&self, e: usize) -> VarId {
        self.edge_var[e]
    }

    pub(crate) fn edge_starts(&self) -> &[u32] {
        &self.edge_start
    }

    /// Edge ids incident to variable `v`.
    pub fn var_edges(&self, v: VarId) -> &[u32] {
        &self.var_edges[self.var_start[v.index()] as usize..self.var_start[v.index() + 1] as usize]
    }

    pub fn var_degree(&self, v: VarId) -> usize {
        (self.var_start[v.index() + 1] - self.var_start[v.index()]) as usize
    }

    /// Text dump for differential testing: one `v` line per variable and one
    /// `f` line per factor.
    pub fn dump(&self, g: &Grammar) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# variables {} factors {} edges {}", self.num_vars(), self.num_factors(), self.num_edges());
        let name = |b: BrickId| {
            let (s, p) = g.brick_pose(b);
            format!("{}({p})", g.symbol(s).name)
        };
        for v in 0..self.num_vars() as u32 {
            let _ = match self.layout.kind(VarId(v)) {
                VarKind::X { brick } => writeln!(out, "v {v} X {}", name(brick)),
                VarKind::R { brick, rule } => writeln!(out, "v {v} R {} rule={}", name(brick), rule.0),
                VarKind::G { brick, rule, slot, child } => {
                    writeln!(out, "v {v} G {} rule={} slot={slot} child={}", name(brick), rule.0, name(child))
                }
            };
        }
        for (i, f) in self.factors().enumerate() {
            let tail: Vec<String> = f.tail().iter().map(|v| v.0.to_string()).collect();
            let _ = match f.kind {
                FactorKind::NoisyOr { leak, beta } => writeln!(
                    out,
                    "f {i} noisy-or out={} leak={leak} beta={beta} in=[{}]",
                    f.head().0,
                    tail.join(",")
                ),
                FactorKind::Categorical => {
                    let theta: Vec<String> = f.theta.iter().map(f64::to_string).collect();
                    writeln!(
                        out,
                        "f {i} categorical switch={} out=[{}] theta=[{}]",
                        f.head().0,
                        tail.join(","),
                        theta.join(",")
                    )
                }
            };
        }
        out
    }
}
