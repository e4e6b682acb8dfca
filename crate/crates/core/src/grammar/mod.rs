//! Probabilistic scene grammars: symbols with finite pose spaces, production
//! rules with geometry kernels, self-rooting probabilities and the noisy-or
//! survival parameter.

mod bricks;
mod expansion;
pub mod format;
mod kernel;
mod pose;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bricks::{Brick, BrickId, BrickTable};
pub use expansion::{topological_order, CapacityExceeded, CycleReport, ExpansionGraph};
pub use format::ParseError;
pub use kernel::{rotate_offset, GeometryKernel, Support};
pub use pose::{Pose, PoseSpace};

/// Tolerance for probability sums.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Above this many bricks, kernel normalization is checked on a strided
/// sample of parent poses rather than all of them.
const FULL_KERNEL_CHECK_LIMIT: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymbolId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RuleId(pub u32);

impl SymbolId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RuleId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GrammarError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("duplicate symbol `{0}`")]
    DuplicateSymbol(String),
    #[error("rule probabilities for `{symbol}` sum to {sum}, expected 1")]
    RuleProbabilityMismatch { symbol: String, sum: f64 },
    #[error("kernel for rule {rule} slot {slot} is not normalized at parent pose {pose}: sum {sum}")]
    KernelUnnormalized { rule: usize, slot: usize, pose: u32, sum: f64 },
    #[error("pose space of `{0}` is empty")]
    EmptyPoseSpace(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A symbol with its pose space and self-rooting probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Symbol {
    pub name: String,
    pub poses: PoseSpace,
    pub self_rooting: f64,
}

/// One right-hand-side slot: the child symbol and its geometry kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub symbol: SymbolId,
    pub kernel: GeometryKernel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub lhs: SymbolId,
    pub rhs: Vec<Slot>,
    pub probability: f64,
}

/// Unvalidated grammar description, symbols referenced by name.
#[derive(Clone, Debug, PartialEq)]
pub struct GrammarSpec {
    pub symbols: Vec<Symbol>,
    pub rules: Vec<RuleSpec>,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleSpec {
    pub lhs: String,
    pub probability: f64,
    pub rhs: Vec<(String, GeometryKernel)>,
}

/// A validated grammar. Immutable; parameters are changed by building a new
/// grammar through [`Grammar::with_parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grammar {
    symbols: Vec<Symbol>,
    rules: Vec<Rule>,
    rho: f64,
    rules_by_lhs: Vec<Vec<RuleId>>,
    bricks: BrickTable,
}

/// Checks every invariant and builds the indexed grammar.
pub fn validate_grammar(spec: GrammarSpec) -> Result<Grammar, GrammarError> {
    if !(spec.rho > 0.0 && spec.rho <= 1.0) {
        return Err(GrammarError::InvalidParameter(format!("rho = {} not in (0, 1]", spec.rho)));
    }
    let mut seen = std::collections::HashSet::new();
    for s in &spec.symbols {
        if !seen.insert(s.name.as_str()) {
            return Err(GrammarError::DuplicateSymbol(s.name.clone()));
        }
        if s.poses.is_empty() {
            return Err(GrammarError::EmptyPoseSpace(s.name.clone()));
        }
        if !(0.0..=1.0).contains(&s.self_rooting) {
            return Err(GrammarError::InvalidParameter(format!(
                "self-rooting probability of `{}` = {} not in [0, 1]",
                s.name, s.self_rooting
            )));
        }
        if s.poses.scales().iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(GrammarError::InvalidParameter(format!("non-positive scale in `{}`", s.name)));
        }
    }
    let lookup = |name: &str| -> Result<SymbolId, GrammarError> {
        spec.symbols
            .iter()
            .position(|s| s.name == name)
            .map(|i| SymbolId(i as u32))
            .ok_or_else(|| GrammarError::UnknownSymbol(name.to_string()))
    };

    let mut rules = Vec::with_capacity(spec.rules.len());
    for r in &spec.rules {
        let lhs = lookup(&r.lhs)?;
        if !(0.0..=1.0).contains(&r.probability) {
            return Err(GrammarError::InvalidParameter(format!(
                "rule probability {} for `{}` not in [0, 1]",
                r.probability, r.lhs
            )));
        }
        let mut rhs = Vec::with_capacity(r.rhs.len());
        for (name, kernel) in &r.rhs {
            rhs.push(Slot { symbol: lookup(name)?, kernel: kernel.clone() });
        }
        rules.push(Rule { lhs, rhs, probability: r.probability });
    }

    let mut rules_by_lhs = vec![Vec::new(); spec.symbols.len()];
    for (i, r) in rules.iter().enumerate() {
        rules_by_lhs[r.lhs.index()].push(RuleId(i as u32));
    }
    for (a, ids) in rules_by_lhs.iter().enumerate() {
        if ids.is_empty() {
            continue;
        }
        let sum: f64 = ids.iter().map(|r| rules[r.index()].probability).sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(GrammarError::RuleProbabilityMismatch { symbol: spec.symbols[a].name.clone(), sum });
        }
    }

    let bricks = BrickTable::new(spec.symbols.iter().map(|s| s.poses.len()));
    let grammar = Grammar { symbols: spec.symbols, rules, rho: spec.rho, rules_by_lhs, bricks };
    grammar.check_kernels()?;
    Ok(grammar)
}

impl Grammar {
    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn symbol(&self, id: SymbolId) -> &Symbol {
        &self.symbols[id.index()]
    }

    pub fn symbol_id(&self, name: &str) -> Option<SymbolId> {
        self.symbols.iter().position(|s| s.name == name).map(|i| SymbolId(i as u32))
    }

    pub fn num_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, id: RuleId) -> &Rule {
        &self.rules[id.index()]
    }

    /// Rules with `symbol` on the left-hand side, in declaration order.
    pub fn rules_for(&self, symbol: SymbolId) -> &[RuleId] {
        &self.rules_by_lhs[symbol.index()]
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn bricks(&self) -> &BrickTable {
        &self.bricks
    }

    pub fn num_bricks(&self) -> usize {
        self.bricks.len()
    }

    pub fn brick_id(&self, symbol: SymbolId, pose: Pose) -> Option<BrickId> {
        let idx = self.symbol(symbol).poses.index(pose)?;
        Some(self.bricks.id(symbol, idx))
    }

    pub fn brick_pose(&self, brick: BrickId) -> (SymbolId, Pose) {
        let b = self.bricks.brick(brick);
        (b.symbol, self.symbol(b.symbol).poses.pose(b.pose))
    }

    /// Normalized in-bounds support of `g_{rule,slot}(· | parent)`, as
    /// `(child pose index, probability)` pairs.
    pub fn support_into(&self, rule: RuleId, slot: usize, parent_pose: Pose, out: &mut Support) {
        let r = self.rule(rule);
        let s = &r.rhs[slot];
        s.kernel.support_into(
            &self.symbol(r.lhs).poses,
            parent_pose,
            &self.symbol(s.symbol).poses,
            out,
        );
    }

    pub fn support(&self, rule: RuleId, slot: usize, parent_pose: Pose) -> Support {
        let mut out = Vec::new();
        self.support_into(rule, slot, parent_pose, &mut out);
        out
    }

    /// Converts back to an unvalidated description, e.g. for writing.
    pub fn to_spec(&self) -> GrammarSpec {
        GrammarSpec {
            symbols: self.symbols.clone(),
            rules: self
                .rules
                .iter()
                .map(|r| RuleSpec {
                    lhs: self.symbol(r.lhs).name.clone(),
                    probability: r.probability,
                    rhs: r
                        .rhs
                        .iter()
                        .map(|s| (self.symbol(s.symbol).name.clone(), s.kernel.clone()))
                        .collect(),
                })
                .collect(),
            rho: self.rho,
        }
    }

    /// Same structure with new rule probabilities (indexed by rule id) and
    /// self-rooting probabilities (indexed by symbol id).
    pub fn with_parameters(&self, rule_probs: &[f64], self_rooting: &[f64]) -> Result<Grammar, GrammarError> {
        assert_eq!(rule_probs.len(), self.rules.len());
        assert_eq!(self_rooting.len(), self.symbols.len());
        let mut spec = self.to_spec();
        for (r, &p) in spec.rules.iter_mut().zip(rule_probs) {
            r.probability = p;
        }
        for (s, &e) in spec.symbols.iter_mut().zip(self_rooting) {
            s.self_rooting = e;
        }
        validate_grammar(spec)
    }

    pub fn rule_probabilities(&self) -> Vec<f64> {
        self.rules.iter().map(|r| r.probability).collect()
    }

    pub fn self_rooting_probabilities(&self) -> Vec<f64> {
        self.symbols.iter().map(|s| s.self_rooting).collect()
    }

    fn check_kernels(&self) -> Result<(), GrammarError> {
        let stride = if self.bricks.len() <= FULL_KERNEL_CHECK_LIMIT {
            1
        } else {
            self.bricks.len().div_ceil(FULL_KERNEL_CHECK_LIMIT)
        };
        let mut buf = Vec::new();
        for (ri, rule) in self.rules.iter().enumerate() {
            let parent_space = &self.symbol(rule.lhs).poses;
            for (si, slot) in rule.rhs.iter().enumerate() {
                if let GeometryKernel::Table(table) = &slot.kernel {
                    // Explicit tables must already be normalized and in range.
                    let child_len = self.symbol(slot.symbol).poses.len();
                    for (&pose, row) in table {
                        let sum: f64 = row.iter().map(|&(_, p)| p).sum();
                        let bad_entry = row.iter().any(|&(z, p)| z as usize >= child_len || p < 0.0);
                        if pose as usize >= parent_space.len() || bad_entry || (sum - 1.0).abs() > SUM_TOLERANCE {
                            return Err(GrammarError::KernelUnnormalized { rule: ri, slot: si, pose, sum });
                        }
                    }
                }
                if let GeometryKernel::Region { scale_steps, radius, .. } = &slot.kernel {
                    let sum: f64 = scale_steps.iter().map(|&(_, p)| p).sum();
                    if (sum - 1.0).abs() > SUM_TOLERANCE || scale_steps.iter().any(|&(_, p)| p < 0.0) {
                        return Err(GrammarError::KernelUnnormalized { rule: ri, slot: si, pose: 0, sum });
                    }
                    if radius.0 < 0.0 || radius.1 < 0.0 {
                        return Err(GrammarError::InvalidParameter(format!(
                            "negative region radius in rule {ri} slot {si}"
                        )));
                    }
                }
                if let GeometryKernel::Offsets { offsets, .. } = &slot.kernel {
                    if offsets.is_empty() {
                        return Err(GrammarError::KernelUnnormalized { rule: ri, slot: si, pose: 0, sum: 0.0 });
                    }
                }
                for pose_idx in (0..parent_space.len() as u32).step_by(stride) {
                    self.support_into(RuleId(ri as u32), si, parent_space.pose(pose_idx), &mut buf);
                    if buf.is_empty() {
                        continue;
                    }
                    let sum: f64 = buf.iter().map(|&(_, p)| p).sum();
                    if (sum - 1.0).abs() > SUM_TOLERANCE {
                        return Err(GrammarError::KernelUnnormalized { rule: ri, slot: si, pose: pose_idx, sum });
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_symbol(rules: Vec<RuleSpec>) -> GrammarSpec {
        GrammarSpec {
            symbols: vec![Symbol { name: "A".into(), poses: PoseSpace::singleton(), self_rooting: 0.0 }],
            rules,
            rho: 0.9,
        }
    }

    #[test]
    fn degenerate_grammar_is_valid() {
        let g = validate_grammar(one_symbol(vec![RuleSpec { lhs: "A".into(), probability: 1.0, rhs: vec![] }])).unwrap();
        assert_eq!(g.num_bricks(), 1);
        assert_eq!(g.rules_for(SymbolId(0)), &[RuleId(0)]);
    }

    #[test]
    fn rule_sums_must_be_one() {
        let err = validate_grammar(one_symbol(vec![
            RuleSpec { lhs: "A".into(), probability: 0.5, rhs: vec![] },
            RuleSpec { lhs: "A".into(), probability: 0.4, rhs: vec![] },
        ]))
        .unwrap_err();
        assert!(matches!(err, GrammarError::RuleProbabilityMismatch { sum, .. } if (sum - 0.9).abs() < 1e-12));
    }

    #[test]
    fn unknown_rhs_symbol() {
        let err = validate_grammar(one_symbol(vec![RuleSpec {
            lhs: "A".into(),
            probability: 1.0,
            rhs: vec![("B".into(), GeometryKernel::offset(0, 0))],
        }]))
        .unwrap_err();
        assert_eq!(err, GrammarError::UnknownSymbol("B".into()));
    }

    #[test]
    fn empty_pose_space_rejected() {
        let mut spec = one_symbol(vec![]);
        spec.symbols[0].poses = PoseSpace::grid(0, 3);
        assert_eq!(validate_grammar(spec).unwrap_err(), GrammarError::EmptyPoseSpace("A".into()));
    }

    #[test]
    fn unnormalized_table_rejected() {
        let mut table = std::collections::BTreeMap::new();
        table.insert(0, vec![(0, 0.3)]);
        let err = validate_grammar(one_symbol(vec![RuleSpec {
            lhs: "A".into(),
            probability: 1.0,
            rhs: vec![("A".into(), GeometryKernel::Table(table))],
        }]))
        .unwrap_err();
        assert!(matches!(err, GrammarError::KernelUnnormalized { .. }));
    }

    #[test]
    fn parameters_out_of_range() {
        let mut spec = one_symbol(vec![]);
        spec.rho = 0.0;
        assert!(matches!(validate_grammar(spec).unwrap_err(), GrammarError::InvalidParameter(_)));
        let mut spec = one_symbol(vec![]);
        spec.symbols[0].self_rooting = 1.5;
        assert!(matches!(validate_grammar(spec).unwrap_err(), GrammarError::InvalidParameter(_)));
    }

    #[test]
    fn validation_is_idempotent() {
        let g = validate_grammar(one_symbol(vec![RuleSpec { lhs: "A".into(), probability: 1.0, rhs: vec![] }])).unwrap();
        assert_eq!(validate_grammar(g.to_spec()).unwrap(), g);
    }
}
