//! The expansion graph over bricks: an edge `(A, ω) → (B, z)` whenever some
//! rule slot can place `B` at `z` from a parent `A` at `ω`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

use super::{BrickId, Grammar};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("expansion graph needs more than {budget} edges")]
pub struct CapacityExceeded {
    pub budget: usize,
}

/// Lazily enumerated expansion graph. Successors are computed on demand from
/// kernel supports; nothing is materialized unless asked for.
#[derive(Clone, Copy, Debug)]
pub struct ExpansionGraph<'g> {
    grammar: &'g Grammar,
}

/// One brick-level cycle, listed in edge order (the last brick has an edge
/// back to the first).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleReport {
    pub cycle: Vec<BrickId>,
}

impl<'g> ExpansionGraph<'g> {
    pub fn new(grammar: &'g Grammar) -> Self {
        ExpansionGraph { grammar }
    }

    pub fn grammar(&self) -> &'g Grammar {
        self.grammar
    }

    pub fn num_bricks(&self) -> usize {
        self.grammar.num_bricks()
    }

    /// Distinct successors of `brick`, ascending.
    pub fn successors_into(&self, brick: BrickId, out: &mut Vec<BrickId>, buf: &mut Vec<(u32, f64)>) {
        out.clear();
        let g = self.grammar;
        let (symbol, pose) = g.brick_pose(brick);
        for &rule in g.rules_for(symbol) {
            for (slot_idx, slot) in g.rule(rule).rhs.iter().enumerate() {
                g.support_into(rule, slot_idx, pose, buf);
                out.extend(buf.iter().map(|&(z, _)| g.bricks().id(slot.symbol, z)));
            }
        }
        out.sort_unstable();
        out.dedup();
    }

    pub fn successors(&self, brick: BrickId) -> Vec<BrickId> {
        let mut out = Vec::new();
        self.successors_into(brick, &mut out, &mut Vec::new());
        out
    }

    /// Materializes every edge, failing once more than `budget` edges exist.
    pub fn edges(&self, budget: usize) -> Result<Vec<(BrickId, BrickId)>, CapacityExceeded> {
        let mut edges = Vec::new();
        let mut succ = Vec::new();
        let mut buf = Vec::new();
        for b in 0..self.num_bricks() as u32 {
            self.successors_into(BrickId(b), &mut succ, &mut buf);
            if edges.len() + succ.len() > budget {
                return Err(CapacityExceeded { budget });
            }
            edges.extend(succ.iter().map(|&s| (BrickId(b), s)));
        }
        Ok(edges)
    }
}

/// Topological order of all bricks (each generator before everything it can
/// generate), choosing the smallest ready brick id at every step. Returns a
/// cycle when the graph is not acyclic.
pub fn topological_order(h: &ExpansionGraph<'_>) -> Result<Vec<BrickId>, CycleReport> {
    let n = h.num_bricks();
    let mut indegree = vec![0u32; n];
    let mut succ = Vec::new();
    let mut buf = Vec::new();
    for b in 0..n as u32 {
        h.successors_into(BrickId(b), &mut succ, &mut buf);
        for s in &succ {
            indegree[s.index()] += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<u32>> =
        (0..n as u32).filter(|&b| indegree[b as usize] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(b)) = ready.pop() {
        order.push(BrickId(b));
        h.successors_into(BrickId(b), &mut succ, &mut buf);
        for s in &succ {
            let d = &mut indegree[s.index()];
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(s.0));
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // Every brick left with positive in-degree lies on or below a cycle.
    let start = indegree.iter().position(|&d| d > 0).unwrap();
    Err(find_cycle(h, BrickId(start as u32)))
}

/// Iterative DFS from `start` until a back edge closes a cycle.
fn find_cycle(h: &ExpansionGraph<'_>, start: BrickId) -> CycleReport {
    const WHITE: u8 = 0;
    const GRAY: u8 = 1;
    const BLACK: u8 = 2;
    let n = h.num_bricks();
    let mut color = vec![WHITE; n];
    let mut buf = Vec::new();
    let mut roots: Vec<u32> = std::iter::once(start.0).chain(0..n as u32).collect();
    roots.dedup();
    for root in roots {
        if color[root as usize] != WHITE {
            continue;
        }
        // (brick, successors, next successor position)
        let mut stack: Vec<(BrickId, Vec<BrickId>, usize)> = Vec::new();
        let mut succ = Vec::new();
        h.successors_into(BrickId(root), &mut succ, &mut buf);
        color[root as usize] = GRAY;
        stack.push((BrickId(root), succ.clone(), 0));
        while let Some(top) = stack.last_mut() {
            if top.2 == top.1.len() {
                color[top.0.index()] = BLACK;
                stack.pop();
                continue;
            }
            let next = top.1[top.2];
            top.2 += 1;
            match color[next.index()] {
                WHITE => {
                    color[next.index()] = GRAY;
                    h.successors_into(next, &mut succ, &mut buf);
                    stack.push((next, succ.clone(), 0));
                }
                GRAY => {
                    let pos = stack.iter().position(|e| e.0 == next).unwrap();
                    return CycleReport { cycle: stack[pos..].iter().map(|e| e.0).collect() };
                }
                _ => {}
            }
        }
    }
    unreachable!("Kahn's algorithm left bricks unordered but no cycle was found")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{validate_grammar, GeometryKernel, GrammarSpec, PoseSpace, RuleSpec, Symbol};

    fn chain(width: u32, dx: i32) -> Grammar {
        validate_grammar(GrammarSpec {
            symbols: vec![Symbol { name: "A".into(), poses: PoseSpace::grid(width, 1), self_rooting: 0.1 }],
            rules: vec![
                RuleSpec { lhs: "A".into(), probability: 0.5, rhs: vec![] },
                RuleSpec { lhs: "A".into(), probability: 0.5, rhs: vec![("A".into(), GeometryKernel::offset(dx, 0))] },
            ],
            rho: 0.9,
        })
        .unwrap()
    }

    #[test]
    fn forward_chain_is_ordered() {
        let g = chain(5, 1);
        let h = ExpansionGraph::new(&g);
        let order = topological_order(&h).unwrap();
        assert_eq!(order, (0..5).map(BrickId).collect::<Vec<_>>());
        assert_eq!(h.successors(BrickId(4)), vec![]);
    }

    #[test]
    fn backward_chain_reverses() {
        let g = chain(4, -1);
        let order = topological_order(&ExpansionGraph::new(&g)).unwrap();
        assert_eq!(order, vec![BrickId(3), BrickId(2), BrickId(1), BrickId(0)]);
    }

    #[test]
    fn zero_offset_is_a_self_loop() {
        let g = chain(3, 0);
        let report = topological_order(&ExpansionGraph::new(&g)).unwrap_err();
        assert_eq!(report.cycle, vec![BrickId(0)]);
    }

    #[test]
    fn edge_budget() {
        let g = chain(10, 1);
        let h = ExpansionGraph::new(&g);
        assert_eq!(h.edges(100).unwrap().len(), 9);
        assert_eq!(h.edges(5).unwrap_err(), CapacityExceeded { budget: 5 });
    }
}
