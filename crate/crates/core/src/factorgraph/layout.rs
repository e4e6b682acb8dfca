//! Enumeration of the binary variables `X(A,ω)`, `R(A,ω,r)` and
//! `G(A,ω,r,i,z)` of a grammar.
//!
//! Ids are dense: X variables first (id = brick id), then R variables grouped
//! by brick, then G variables grouped by (brick, rule, slot) with children in
//! ascending pose order. Slots whose in-bounds support is empty get no G
//! variables.

use serde::{Deserialize, Serialize};

use crate::grammar::{BrickId, Grammar, RuleId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(transparent)]
pub struct VarId(pub u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    /// Brick present.
    X { brick: BrickId },
    /// Brick expanded with `rule`.
    R { brick: BrickId, rule: RuleId },
    /// Slot `slot` of `rule` at `brick` placed its child at brick `child`.
    G { brick: BrickId, rule: RuleId, slot: usize, child: BrickId },
}

/// A block of G variables for one (brick, rule, slot).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotVars {
    /// The R variable switching this slot.
    pub switch: VarId,
    pub slot: usize,
    pub first: VarId,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("grammar needs more than {budget} variables")]
pub struct VariableBudgetExceeded {
    pub budget: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarLayout {
    num_bricks: usize,
    // R vars of brick b: relative indices r_start[b]..r_start[b+1]
    r_start: Vec<u32>,
    r_brick: Vec<BrickId>,
    r_rule: Vec<RuleId>,
    // slot entries of R var k: slot_start[k]..slot_start[k+1]
    slot_start: Vec<u32>,
    slot_owner: Vec<u32>,
    // G vars of slot entry t: g_start[t]..g_start[t+1]
    g_start: Vec<u32>,
    g_slot: Vec<u32>,
    g_child: Vec<BrickId>,
    g_prob: Vec<f64>,
    // G vars feeding brick b's noisy-or: in_list[in_start[b]..in_start[b+1]]
    in_start: Vec<u32>,
    in_list: Vec<u32>,
}

impl VarLayout {
    pub fn new(g: &Grammar) -> Self {
        Self::with_budget(g, usize::MAX).expect("unbounded budget")
    }

    pub fn with_budget(g: &Grammar, budget: usize) -> Result<Self, VariableBudgetExceeded> {
        let nb = g.num_bricks();
        if nb > budget {
            return Err(VariableBudgetExceeded { budget });
        }
        let mut r_start = Vec::with_capacity(nb + 1);
        let (mut r_brick, mut r_rule) = (Vec::new(), Vec::new());
        let (mut slot_start, mut slot_owner) = (vec![0u32], Vec::new());
        let (mut g_start, mut g_slot, mut g_child, mut g_prob) = (vec![0u32], Vec::new(), Vec::new(), Vec::new());
        let mut support = Vec::new();
        r_start.push(0);
        for b in 0..nb as u32 {
            let brick = BrickId(b);
            let (symbol, pose) = g.brick_pose(brick);
            for &rule in g.rules_for(symbol) {
                let k = r_brick.len() as u32;
                r_brick.push(brick);
                r_rule.push(rule);
                let r = g.rule(rule);
                for (slot, s) in r.rhs.iter().enumerate() {
                    g.support_into(rule, slot, pose, &mut support);
                    let t = slot_owner.len() as u32;
                    slot_owner.push(k);
                    for &(z, p) in &support {
                        g_slot.push(t);
                        g_child.push(g.bricks().id(s.symbol, z));
                        g_prob.push(p);
                    }
                    g_start.push(g_child.len() as u32);
                    if nb + r_brick.len() + g_child.len() > budget {
                        return Err(VariableBudgetExceeded { budget });
                    }
                }
                slot_start.push(slot_owner.len() as u32);
            }
            r_start.push(r_brick.len() as u32);
        }

        // counting sort of G vars by child brick; stable so inputs stay ascending
        let mut in_start = vec![0u32; nb + 1];
        for c in &g_child {
            in_start[c.index() + 1] += 1;
        }
        for b in 0..nb {
            in_start[b + 1] += in_start[b];
        }
        let mut fill = in_start.clone();
        let mut in_list = vec![0u32; g_child.len()];
        for (j, c) in g_child.iter().enumerate() {
            in_list[fill[c.index()] as usize] = j as u32;
            fill[c.index()] += 1;
        }

        Ok(VarLayout {
            num_bricks: nb,
            r_start,
            r_brick,
            r_rule,
            slot_start,
            slot_owner,
            g_start,
            g_slot,
            g_child,
            g_prob,
            in_start,
            in_list,
        })
    }

    pub fn num_bricks(&self) -> usize {
        self.num_bricks
    }

    pub fn num_r(&self) -> usize {
        self.r_brick.len()
    }

    pub fn num_g(&self) -> usize {
        self.g_child.len()
    }

    pub fn num_vars(&self) -> usize {
        self.num_bricks + self.num_r() + self.num_g()
    }

    pub fn x(&self, brick: BrickId) -> VarId {
        VarId(brick.0)
    }

    fn r_base(&self) -> u32 {
        self.num_bricks as u32
    }

    fn g_base(&self) -> u32 {
        (self.num_bricks + self.r_brick.len()) as u32
    }

    /// R variables of `brick`, in the order of `Grammar::rules_for`.
    pub fn r_vars(&self, brick: BrickId) -> impl ExactSizeIterator<Item = VarId> + Clone {
        let base = self.r_base();
        (self.r_start[brick.index()]..self.r_start[brick.index() + 1]).map(move |k| VarId(base + k))
    }

    /// G variable blocks switched by R variable `r`, one per rule slot.
    pub fn slots(&self, r: VarId) -> impl Iterator<Item = SlotVars> + '_ {
        let k = (r.0 - self.r_base()) as usize;
        let base = self.g_base();
        let first_slot = self.slot_start[k];
        (self.slot_start[k]..self.slot_start[k + 1]).map(move |t| {
            let lo = self.g_start[t as usize];
            let hi = self.g_start[t as usize + 1];
            SlotVars { switch: r, slot: (t - first_slot) as usize, first: VarId(base + lo), len: (hi - lo) as usize }
        })
    }

    /// Every (brick, rule, slot) block, in id order.
    pub fn all_slots(&self) -> impl Iterator<Item = SlotVars> + '_ {
        let (rb, gb) = (self.r_base(), self.g_base());
        (0..self.slot_owner.len()).map(move |t| {
            let k = self.slot_owner[t];
            let lo = self.g_start[t];
            let hi = self.g_start[t + 1];
            SlotVars {
                switch: VarId(rb + k),
                slot: t - self.slot_start[k as usize] as usize,
                first: VarId(gb + lo),
                len: (hi - lo) as usize,
            }
        })
    }

    /// G variables whose child is `brick` (the noisy-or inputs), ascending.
    pub fn inputs(&self, brick: BrickId) -> impl ExactSizeIterator<Item = VarId> + '_ {
        let gb = self.g_base();
        self.in_list[self.in_start[brick.index()] as usize..self.in_start[brick.index() + 1] as usize]
            .iter()
            .map(move |&j| VarId(gb + j))
    }

    pub fn num_inputs(&self, brick: BrickId) -> usize {
        (self.in_start[brick.index() + 1] - self.in_start[brick.index()]) as usize
    }

    /// Kernel probability `g(z | ω)` of a G variable.
    pub fn g_probability(&self, v: VarId) -> f64 {
        self.g_prob[(v.0 - self.g_base()) as usize]
    }

    pub fn g_child(&self, v: VarId) -> BrickId {
        self.g_child[(v.0 - self.g_base()) as usize]
    }

    /// Finds the G variable of a slot block that targets `child`.
    pub fn find_g(&self, block: &SlotVars, child: BrickId) -> Option<VarId> {
        let lo = (block.first.0 - self.g_base()) as usize;
        let children = &self.g_child[lo..lo + block.len];
        children.binary_search(&child).ok().map(|i| VarId(block.first.0 + i as u32))
    }

    pub fn kind(&self, v: VarId) -> VarKind {
        let id = v.0;
        if id < self.r_base() {
            VarKind::X { brick: BrickId(id) }
        } else if id < self.g_base() {
            let k = (id - self.r_base()) as usize;
            VarKind::R { brick: self.r_brick[k], rule: self.r_rule[k] }
        } else {
            let j = (id - self.g_base()) as usize;
            let t = self.g_slot[j] as usize;
            let k = self.slot_owner[t] as usize;
            VarKind::G {
                brick: self.r_brick[k],
                rule: self.r_rule[k],
                slot: t - self.slot_start[k] as usize,
                child: self.g_child[j],
            }
        }
    }

    pub fn is_x(&self, v: VarId) -> bool {
        v.0 < self.r_base()
    }
}
