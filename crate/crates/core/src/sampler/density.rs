//! Exact joint probability of a full X/R/G assignment, computed directly
//! from the grammar's conditional distributions (survival noisy-or, rule
//! choice, pose choice). Independent of the compiled factors, so it serves
//! as an oracle for them.

use thiserror::Error;

use super::Scene;
use crate::factorgraph::{VarId, VarLayout};
use crate::grammar::{BrickId, Grammar};

/// Values of every X/R/G variable, indexed by [`VarId`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub values: Vec<bool>,
}

impl Assignment {
    pub fn zeros(layout: &VarLayout) -> Self {
        Assignment { values: vec![false; layout.num_vars()] }
    }

    pub fn get(&self, v: VarId) -> bool {
        self.values[v.index()]
    }

    pub fn set(&mut self, v: VarId, value: bool) {
        self.values[v.index()] = value;
    }

    /// One-hot R per present brick (for symbols with rules), one-hot G per
    /// active nonempty slot, and everything off under an absent brick.
    pub fn is_structurally_valid(&self, g: &Grammar, layout: &VarLayout) -> bool {
        for b in 0..layout.num_bricks() as u32 {
            let brick = BrickId(b);
            let x = self.get(layout.x(brick));
            let has_rules = !g.rules_for(g.bricks().symbol_of(brick)).is_empty();
            let on_rules = layout.r_vars(brick).filter(|&r| self.get(r)).count();
            let expected = if x && has_rules { 1 } else { 0 };
            if on_rules != expected {
                return false;
            }
            for r in layout.r_vars(brick) {
                let switch = self.get(r);
                for block in layout.slots(r) {
                    let on = (0..block.len as u32).filter(|&j| self.get(VarId(block.first.0 + j))).count();
                    let expected = if switch && block.len > 0 { 1 } else { 0 };
                    if on != expected {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// A log-probability, with an explicit marker for probability zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LogProb {
    Finite(f64),
    Impossible,
}

impl LogProb {
    pub fn from_prob(p: f64) -> Self {
        if p > 0.0 {
            LogProb::Finite(p.ln())
        } else {
            LogProb::Impossible
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            LogProb::Finite(v) => Some(v),
            LogProb::Impossible => None,
        }
    }

    pub fn prob(self) -> f64 {
        match self {
            LogProb::Finite(v) => v.exp(),
            LogProb::Impossible => 0.0,
        }
    }

    pub fn is_impossible(self) -> bool {
        matches!(self, LogProb::Impossible)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("assignment has {got} values but the grammar has {expected} variables")]
pub struct DimensionMismatch {
    pub expected: usize,
    pub got: usize,
}

/// Sets X for present bricks, R for their rules and G for chosen child poses.
pub fn scene_to_assignment(scene: &Scene, g: &Grammar, layout: &VarLayout) -> Assignment {
    let mut a = Assignment::zeros(layout);
    for (brick, expansion) in scene.iter() {
        a.set(layout.x(brick), true);
        let Some(rule) = expansion.rule else { continue };
        let symbol = g.bricks().symbol_of(brick);
        let k = g.rules_for(symbol).iter().position(|&r| r == rule).expect("rule belongs to the brick's symbol");
        let r = layout.r_vars(brick).nth(k).unwrap();
        a.set(r, true);
        for (block, child) in layout.slots(r).zip(&expansion.children) {
            if let Some(child) = child {
                let v = layout.find_g(&block, child.brick).expect("child pose lies in the kernel support");
                a.set(v, true);
            }
        }
    }
    a
}

/// `ln P(X, R, G)` as the sum over bricks of the survival, rule-choice and
/// pose-choice log-terms.
pub fn joint_log_prob(a: &Assignment, g: &Grammar, layout: &VarLayout) -> Result<LogProb, DimensionMismatch> {
    if a.values.len() != layout.num_vars() {
        return Err(DimensionMismatch { expected: layout.num_vars(), got: a.values.len() });
    }
    let rho = g.rho();
    let mut total = 0.0;
    for b in 0..layout.num_bricks() as u32 {
        let brick = BrickId(b);
        let symbol = g.bricks().symbol_of(brick);
        let eps = g.symbol(symbol).self_rooting;
        let x = a.get(layout.x(brick));

        // survival: P(X = 0 | c active causes) = (1 - ρ)^c (1 - ε)
        let c = layout.inputs(brick).filter(|&v| a.get(v)).count() as i32;
        let off = (1.0 - rho).powi(c) * (1.0 - eps);
        let p = if x { 1.0 - off } else { off };
        if p <= 0.0 {
            return Ok(LogProb::Impossible);
        }
        total += p.ln();

        // rule choice
        let rules = g.rules_for(symbol);
        let on: Vec<usize> = layout.r_vars(brick).enumerate().filter(|&(_, v)| a.get(v)).map(|(k, _)| k).collect();
        if !rules.is_empty() {
            match (x, on.as_slice()) {
                (false, []) => {}
                (true, [k]) => {
                    let p = g.rule(rules[*k]).probability;
                    if p <= 0.0 {
                        return Ok(LogProb::Impossible);
                    }
                    total += p.ln();
                }
                _ => return Ok(LogProb::Impossible),
            }
        }

        // pose choice per slot
        for r in layout.r_vars(brick) {
            let switch = a.get(r);
            for block in layout.slots(r) {
                if block.len == 0 {
                    continue;
                }
                let mut chosen = None;
                let mut count = 0;
                for j in 0..block.len as u32 {
                    let v = VarId(block.first.0 + j);
                    if a.get(v) {
                        count += 1;
                        chosen = Some(v);
                    }
                }
                match (switch, count) {
                    (false, 0) => {}
                    (true, 1) => total += layout.g_probability(chosen.unwrap()).ln(),
                    _ => return Ok(LogProb::Impossible),
                }
            }
        }
    }
    Ok(LogProb::Finite(total))
}
