//! Ancestral sampling of scenes from acyclic grammars, and the exact joint
//! density of the X/R/G variables.
//!
//! The sampler follows the generative process: every brick self-roots with
//! probability `ε_A`; bricks are then visited in topological order and each
//! present brick picks a rule by `P(r)` and a pose for every slot by its
//! kernel, and each chosen child survives independently with probability `ρ`.
//! A brick generated more than once is still expanded once.

mod density;
mod text;

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

pub use density::{joint_log_prob, scene_to_assignment, Assignment, DimensionMismatch, LogProb};
pub use text::{parse_scene, write_scene, SceneParseError};

use crate::grammar::{topological_order, BrickId, CycleReport, ExpansionGraph, Grammar, RuleId, SymbolId};
use crate::rng::StreamKey;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SceneError {
    #[error("grammar is cyclic at the brick level (cycle through {} bricks)", .0.cycle.len())]
    CyclicGrammar(CycleReport),
}

/// A child placement chosen for one rule slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChildDraw {
    pub brick: BrickId,
    /// Whether the child survived the `ρ` draw (and so is present).
    pub survived: bool,
}

/// How one present brick was expanded. `rule` is `None` for symbols without
/// rules; `children[i]` is `None` when slot `i` has no in-bounds support.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expansion {
    pub rule: Option<RuleId>,
    pub children: Vec<Option<ChildDraw>>,
}

/// Present bricks with their expansions. Keys are exactly the present set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Scene {
    expansions: BTreeMap<BrickId, Expansion>,
}

impl Scene {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_expansions(expansions: BTreeMap<BrickId, Expansion>) -> Self {
        Scene { expansions }
    }

    pub fn len(&self) -> usize {
        self.expansions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expansions.is_empty()
    }

    pub fn contains(&self, brick: BrickId) -> bool {
        self.expansions.contains_key(&brick)
    }

    pub fn present(&self) -> impl Iterator<Item = BrickId> + '_ {
        self.expansions.keys().copied()
    }

    pub fn expansion(&self, brick: BrickId) -> Option<&Expansion> {
        self.expansions.get(&brick)
    }

    pub fn iter(&self) -> impl Iterator<Item = (BrickId, &Expansion)> {
        self.expansions.iter().map(|(&b, e)| (b, e))
    }

    /// Checks that surviving children are present.
    pub fn is_consistent(&self) -> bool {
        self.expansions
            .values()
            .flat_map(|e| e.children.iter().flatten())
            .all(|c| !c.survived || self.contains(c.brick))
    }

    /// Per-cell occupancy of `symbol`, row-major `width × height`; a cell is
    /// set when any orientation or scale of the symbol is present there.
    pub fn occupancy(&self, g: &Grammar, symbol: SymbolId) -> Vec<bool> {
        let space = &g.symbol(symbol).poses;
        let mut out = vec![false; space.cells()];
        for b in self.present() {
            let (s, pose) = g.brick_pose(b);
            if s == symbol {
                out[(pose.y * space.width() + pose.x) as usize] = true;
            }
        }
        out
    }
}

/// Sampler for one acyclic grammar; the topological order is computed once.
pub struct Sampler<'g> {
    grammar: &'g Grammar,
    order: Vec<BrickId>,
}

impl<'g> Sampler<'g> {
    pub fn new(grammar: &'g Grammar) -> Result<Self, SceneError> {
        let order = topological_order(&ExpansionGraph::new(grammar)).map_err(SceneError::CyclicGrammar)?;
        Ok(Sampler { grammar, order })
    }

    /// Draws one scene. Each brick consumes only its own stream: the first
    /// draw decides self-rooting, later draws its expansion.
    pub fn sample(&self, seed: u64) -> Scene {
        let g = self.grammar;
        let key = StreamKey::new(seed);
        let n = g.num_bricks();
        let mut present = vec![false; n];
        let mut streams = Vec::with_capacity(n);
        for b in 0..n as u32 {
            let mut rng = key.brick(BrickId(b));
            let eps = g.symbol(g.bricks().symbol_of(BrickId(b))).self_rooting;
            if rng.random::<f64>() < eps {
                present[b as usize] = true;
            }
            streams.push(rng);
        }
        let mut expansions = BTreeMap::new();
        let mut support = Vec::new();
        for &brick in &self.order {
            if !present[brick.index()] {
                continue;
            }
            let rng = &mut streams[brick.index()];
            let (symbol, pose) = g.brick_pose(brick);
            let rules = g.rules_for(symbol);
            if rules.is_empty() {
                expansions.insert(brick, Expansion { rule: None, children: Vec::new() });
                continue;
            }
            let rule = rules[pick(rng, rules.iter().map(|&r| g.rule(r).probability))];
            let mut children = Vec::with_capacity(g.rule(rule).rhs.len());
            for (slot, s) in g.rule(rule).rhs.iter().enumerate() {
                g.support_into(rule, slot, pose, &mut support);
                if support.is_empty() {
                    children.push(None);
                    continue;
                }
                let k = pick(rng, support.iter().map(|&(_, p)| p));
                let child = g.bricks().id(s.symbol, support[k].0);
                let survived = rng.random::<f64>() < g.rho();
                if survived {
                    present[child.index()] = true;
                }
                children.push(Some(ChildDraw { brick: child, survived }));
            }
            expansions.insert(brick, Expansion { rule: Some(rule), children });
        }
        Scene { expansions }
    }
}

/// Draws one scene; see [`Sampler`].
pub fn sample_scene(g: &Grammar, seed: u64) -> Result<Scene, SceneError> {
    Ok(Sampler::new(g)?.sample(seed))
}

/// Inverse-CDF pick from weights summing to 1. If rounding leaves the
/// uniform past the final cumulative weight, the last positive weight wins.
fn pick<R: Rng>(rng: &mut R, weights: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        acc += w;
        if w > 0.0 {
            last = i;
        }
        if u < acc {
            return i;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::format::parse_grammar;

    fn single(eps: f64) -> Grammar {
        parse_grammar(&format!(
            "[symbols]\nA\n[pose_spaces]\nA width=1 height=1\n[params]\nrho=0.9\nepsilon A = {eps}\n[rules]\nA 1 ->\n"
        ))
        .unwrap()
    }

    #[test]
    fn zero_self_rooting_gives_empty_scenes() {
        let g = single(0.0);
        let sampler = Sampler::new(&g).unwrap();
        for seed in 0..100 {
            assert!(sampler.sample(seed).is_empty());
        }
    }

    #[test]
    fn self_rooting_frequency_within_binomial_bounds() {
        let g = single(0.3);
        let sampler = Sampler::new(&g).unwrap();
        let n = 100_000;
        let hits = (0..n).filter(|&s| !sampler.sample(s).is_empty()).count() as f64;
        let sd = (n as f64 * 0.3 * 0.7).sqrt();
        assert!((hits - 0.3 * n as f64).abs() < 3.0 * sd, "hits {hits}");
    }

    #[test]
    fn same_seed_same_scene() {
        let g = parse_grammar(
            "[symbols]\nC\n[pose_spaces]\nC width=12 height=12 orientations=8\n[params]\nrho=0.95\nepsilon C=0.02\n[rules]\n\
             C 0.2 ->\nC 0.8 -> C{offsets 1,0 1,1 1,-1 rotate}\n",
        )
        .unwrap();
        let a = sample_scene(&g, 42).unwrap();
        assert_eq!(a, sample_scene(&g, 42).unwrap());
        assert!(a.is_consistent());
        assert_ne!(a, sample_scene(&g, 43).unwrap());
    }

    #[test]
    fn cyclic_grammar_is_rejected() {
        let g = parse_grammar(
            "[symbols]\nA\n[pose_spaces]\nA width=2 height=1\n[params]\nrho=0.5\n[rules]\nA 1 -> A{offsets 0,0}\n",
        )
        .unwrap();
        assert!(matches!(sample_scene(&g, 0), Err(SceneError::CyclicGrammar(_))));
    }
}
