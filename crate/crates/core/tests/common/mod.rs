//! Brute-force references shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenegram::bp::Evidence;
use scenegram::factorgraph::{eval_factor, Factor, FactorGraph, VarId, VarLayout};
use scenegram::grammar::{validate_grammar, GeometryKernel, Grammar, GrammarSpec, PoseSpace, RuleSpec, Symbol};
use scenegram::sampler::{joint_log_prob, Assignment};

/// Sum-product messages out of one factor by enumerating its whole table.
pub fn factor_messages_exact(f: &Factor<'_>, incoming: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = f.scope.len();
    let mut out = vec![[0.0; 2]; n];
    let mut values = vec![false; n];
    for bits in 0u32..(1 << n) {
        for (k, v) in values.iter_mut().enumerate() {
            *v = bits >> k & 1 == 1;
        }
        let table = eval_factor(f, &values).unwrap();
        if table == 0.0 {
            continue;
        }
        for k in 0..n {
            let mut w = table;
            for j in 0..n {
                if j != k {
                    w *= incoming[j][values[j] as usize];
                }
            }
            out[k][values[k] as usize] += w;
        }
    }
    out.iter().map(|m| [m[0] / (m[0] + m[1]), m[1] / (m[0] + m[1])]).collect()
}

/// Exact `P(v = 1)` for every variable of a small factor graph, from the
/// normalized product of all factors and the evidence.
pub fn enumerate_marginals(fg: &FactorGraph, evidence: &Evidence) -> Vec<f64> {
    let nv = fg.num_vars();
    assert!(nv <= 22, "too many variables to enumerate");
    let ev: Vec<[f64; 2]> = (0..nv).map(|v| evidence.message(VarId(v as u32))).collect();
    let mut on = vec![0.0; nv];
    let mut total = 0.0;
    let mut values = vec![false; nv];
    let mut local = Vec::new();
    for bits in 0u64..(1 << nv) {
        for (v, x) in values.iter_mut().enumerate() {
            *x = bits >> v & 1 == 1;
        }
        let mut w: f64 = values.iter().zip(&ev).map(|(&x, e)| e[x as usize]).product();
        for f in fg.factors() {
            local.clear();
            local.extend(f.scope.iter().map(|v| values[v.index()]));
            w *= eval_factor(&f, &local).unwrap();
            if w == 0.0 {
                break;
            }
        }
        if w == 0.0 {
            continue;
        }
        total += w;
        for (v, &x) in values.iter().enumerate() {
            if x {
                on[v] += w;
            }
        }
    }
    on.iter().map(|&m| m / total).collect()
}

/// Total probability and per-variable `P(v = 1)` from the joint density,
/// summed over every assignment.
pub fn enumerate_joint(g: &Grammar, layout: &VarLayout) -> (f64, Vec<f64>) {
    let nv = layout.num_vars();
    assert!(nv <= 22, "too many variables to enumerate");
    let mut a = Assignment { values: vec![false; nv] };
    let mut total = 0.0;
    let mut on = vec![0.0; nv];
    for bits in 0u64..(1 << nv) {
        for (v, x) in a.values.iter_mut().enumerate() {
            *x = bits >> v & 1 == 1;
        }
        let p = joint_log_prob(&a, g, layout).unwrap().prob();
        total += p;
        for (v, &x) in a.values.iter().enumerate() {
            if x {
                on[v] += p;
            }
        }
    }
    (total, on)
}

/// Random small acyclic grammar: slots only target later symbols, pose
/// spaces are 1-D strips of width ≤ `max_width`.
pub fn random_grammar(rng: &mut ChaCha8Rng, num_symbols: usize, max_width: u32) -> Grammar {
    let names: Vec<String> = (0..num_symbols).map(|i| format!("S{i}")).collect();
    let symbols = names
        .iter()
        .map(|name| Symbol {
            name: name.clone(),
            poses: PoseSpace::grid(rng.random_range(1..=max_width), 1),
            self_rooting: if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.05..0.6) },
        })
        .collect();
    let mut rules = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let count = rng.random_range(1..=2);
        let mut weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.1..1.0)).collect();
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= sum);
        // make the last weight absorb rounding so the sum is exact enough
        let head: f64 = weights[..count - 1].iter().sum();
        weights[count - 1] = 1.0 - head;
        for w in weights {
            let slots = if i + 1 < num_symbols { rng.random_range(0..=2) } else { 0 };
            let rhs = (0..slots)
                .map(|_| {
                    let child = rng.random_range(i + 1..num_symbols);
                    let k = rng.random_range(1..=2);
                    let offsets = (0..k).map(|_| (rng.random_range(-1..=1), 0)).collect();
                    (names[child].clone(), GeometryKernel::Offsets { offsets, rotate: false })
                })
                .collect();
            rules.push(RuleSpec { lhs: name.clone(), probability: w, rhs });
        }
    }
    validate_grammar(GrammarSpec { symbols, rules, rho: rng.random_range(0.3..0.99) }).unwrap()
}

/// True when the factor graph (variables plus factors) has no cycle.
pub fn is_forest(fg: &FactorGraph) -> bool {
    let nv = fg.num_vars();
    let mut parent: Vec<usize> = (0..nv + fg.num_factors()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for f in 0..fg.num_factors() {
        for e in fg.edges_of(f) {
            let a = find(&mut parent, nv + f);
            let b = find(&mut parent, fg.edge_var(e).index());
            if a == b {
                return false;
            }
            parent[a] = b;
        }
    }
    true
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random positive message with entries in `[1e-3, 1]`.
pub fn random_message(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [rng.random_range(1e-3..1.0), rng.random_range(1e-3..1.0)]
}

pub fn max_rel_diff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| (0..2).map(move |k| (x[k] - y[k]).abs() / y[k].abs().max(1e-300)))
        .fold(0.0, f64::max)
}

/// Exact E-step statistics for one example by enumeration: `P(R = 1 | e)` per
/// rule variable and the posterior that each brick's leak fired.
pub fn exact_counts(g: &Grammar, fg: &FactorGraph, evidence: &Evidence) -> scenegram::em::ExpectedCounts {
    use scenegram::grammar::BrickId;
    let layout = fg.layout();
    let nv = layout.num_vars();
    let nb = layout.num_bricks();
    let mut a = Assignment { values: vec![false; nv] };
    let mut total = 0.0;
    let mut on = vec![0.0; nv];
    let mut leak = vec![0.0; nb];
    for bits in 0u64..(1 << nv) {
        for (v, x) in a.values.iter_mut().enumerate() {
            *x = bits >> v & 1 == 1;
        }
        let mut w = joint_log_prob(&a, g, layout).unwrap().prob();
        if w == 0.0 {
            continue;
        }
        for (v, &x) in a.values.iter().enumerate() {
            w *= evidence.message(VarId(v as u32))[x as usize];
        }
        total += w;
        for (v, &x) in a.values.iter().enumerate() {
            if x {
                on[v] += w;
            }
        }
        for b in 0..nb {
            let brick = BrickId(b as u32);
            if !a.values[b] {
                continue;
            }
            let eps = g.symbol(g.bricks().symbol_of(brick)).self_rooting;
            let c = layout.inputs(brick).filter(|v| a.values[v.index()]).count() as i32;
            let p_on = 1.0 - (1.0 - g.rho()).powi(c) * (1.0 - eps);
            leak[b] += w * eps / p_on;
        }
    }
    let mut counts = scenegram::em::ExpectedCounts::zeros(g);
    counts.add_example(g, fg, |v| on[v.index()] / total, |b| leak[b.index()] / total);
    counts
}
