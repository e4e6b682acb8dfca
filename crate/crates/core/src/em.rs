//! EM estimation of rule probabilities and self-rooting probabilities from
//! LBP marginals. `ρ` and the geometry kernels stay fixed.
//!
//! E-step: per example, run LBP and accumulate `Σ_ω Q(A,ω,r)` per rule and
//! `Σ_ω q(A,ω)` per symbol. M-step: `P(r) = count(r) / Z_A` and
//! `ε_A = Σ q / (examples · |Ω_A|)`, both floored.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bp::{BpConfig, Evidence, Lbp, Marginals};
use crate::factorgraph::{compile, FactorGraph, VarId};
use crate::grammar::{BrickId, Grammar, GrammarError, SymbolId};

/// Observed evidence and clamps for one training scene.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub evidence: Evidence,
    pub clamps: Vec<(VarId, bool)>,
}

/// How the self-rooting statistic `q(A,ω)` is read off LBP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelfRootingStatistic {
    /// Posterior that the brick's leak term fired.
    LeakPosterior,
    /// Belief that the brick is present.
    Presence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub bp: BpConfig,
    pub self_rooting: SelfRootingStatistic,
    pub learn_self_rooting: bool,
    /// Lower bound on every learned probability.
    pub param_floor: f64,
    /// Stop `fit` when no parameter moves by more than this.
    pub tolerance: f64,
    /// Start each example's LBP from its messages of the previous iteration.
    pub warm_start: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            bp: BpConfig::default(),
            self_rooting: SelfRootingStatistic::LeakPosterior,
            learn_self_rooting: true,
            param_floor: 1e-6,
            tolerance: 1e-6,
            warm_start: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum EmError {
    #[error("no training examples")]
    NoExamples,
    #[error("iteration count must be at least 1")]
    NoIterations,
    #[error("example {example} has evidence for {got} variables, the grammar has {expected}")]
    EvidenceMismatch { example: usize, expected: usize, got: usize },
    #[error("updated parameters are invalid: {0}")]
    Grammar(#[from] GrammarError),
}

/// Sufficient statistics of one E-step.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedCounts {
    /// `Σ_e Σ_ω Q_e(A,ω,r)`, indexed by rule id.
    pub rules: Vec<f64>,
    /// `Σ_e Σ_ω q_e(A,ω)`, indexed by symbol id.
    pub self_rooted: Vec<f64>,
    pub examples: usize,
}

impl ExpectedCounts {
    pub fn zeros(g: &Grammar) -> Self {
        ExpectedCounts { rules: vec![0.0; g.rules().len()], self_rooted: vec![0.0; g.num_symbols()], examples: 0 }
    }

    /// Adds one example's statistics. `rule_belief` gives `P(R = 1)` per R
    /// variable and `self_rooted` gives `q` per brick.
    pub fn add_example(
        &mut self,
        g: &Grammar,
        fg: &FactorGraph,
        rule_belief: impl Fn(VarId) -> f64,
        self_rooted: impl Fn(BrickId) -> f64,
    ) {
        let layout = fg.layout();
        for b in 0..layout.num_bricks() as u32 {
            let brick = BrickId(b);
            let symbol = g.bricks().symbol_of(brick);
            for (v, &rule) in layout.r_vars(brick).zip(g.rules_for(symbol)) {
                self.rules[rule.index()] += rule_belief(v);
            }
            self.self_rooted[symbol.index()] += self_rooted(brick);
        }
        self.examples += 1;
    }

    pub fn add_marginals(&mut self, g: &Grammar, fg: &FactorGraph, m: &Marginals, stat: SelfRootingStatistic) {
        let layout = fg.layout();
        match stat {
            SelfRootingStatistic::LeakPosterior => {
                self.add_example(g, fg, |v| m.p1(v), |b| m.self_rooted[b.index()])
            }
            SelfRootingStatistic::Presence => self.add_example(g, fg, |v| m.p1(v), |b| m.p1(layout.x(b))),
        }
    }

    pub fn merge(&mut self, other: &ExpectedCounts) {
        for (a, b) in self.rules.iter_mut().zip(&other.rules) {
            *a += b;
        }
        for (a, b) in self.self_rooted.iter_mut().zip(&other.self_rooted) {
            *a += b;
        }
        self.examples += other.examples;
    }
}

/// Result of an M-step.
#[derive(Clone, Debug, PartialEq)]
pub struct MStep {
    pub grammar: Grammar,
    /// Symbols with (numerically) no rule mass; their `P(r)` is unchanged.
    pub degenerate: Vec<SymbolId>,
}

/// Average rule mass per brick and example below which a symbol is
/// treated as never expanded.
pub const DEGENERATE_MASS: f64 = 1e-9;

pub fn m_step(g: &Grammar, counts: &ExpectedCounts, cfg: &EmConfig) -> Result<MStep, EmError> {
    let floor = cfg.param_floor;
    let mut probs = g.rule_probabilities();
    let mut eps = g.self_rooting_probabilities();
    let mut degenerate = Vec::new();
    for s in 0..g.num_symbols() as u32 {
        let symbol = SymbolId(s);
        let rules = g.rules_for(symbol);
        if !rules.is_empty() {
            let z: f64 = rules.iter().map(|r| counts.rules[r.index()]).sum();
            // LBP never reports exact zeros, so mass at the message-floor
            // level counts as none
            let negligible = DEGENERATE_MASS * counts.examples.max(1) as f64 * g.symbol(symbol).poses.len() as f64;
            if z > negligible && z.is_finite() {
                let floored: Vec<f64> = rules.iter().map(|r| (counts.rules[r.index()] / z).max(floor)).collect();
                let total: f64 = floored.iter().sum();
                for (r, p) in rules.iter().zip(floored) {
                    probs[r.index()] = p / total;
                }
            } else {
                degenerate.push(symbol);
            }
        }
        if cfg.learn_self_rooting && counts.examples > 0 {
            let cells = g.symbol(symbol).poses.len() as f64;
            let e = counts.self_rooted[s as usize] / (counts.examples as f64 * cells);
            eps[s as usize] = e.clamp(floor, 1.0 - floor);
        }
    }
    Ok(MStep { grammar: g.with_parameters(&probs, &eps)?, degenerate })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmStep {
    pub grammar: Grammar,
    pub counts: ExpectedCounts,
    pub degenerate: Vec<SymbolId>,
    /// Examples whose LBP run hit `max_iters`.
    pub unconverged: usize,
}

/// One E-step over all examples followed by an M-step.
pub fn em_step(g: &Grammar, examples: &[TrainingExample], cfg: &EmConfig) -> Result<EmStep, EmError> {
    let mut warm = Vec::new();
    em_step_warm(g, examples, cfg, &mut warm)
}

fn em_step_warm(
    g: &Grammar,
    examples: &[TrainingExample],
    cfg: &EmConfig,
    warm: &mut Vec<Option<Vec<f64>>>,
) -> Result<EmStep, EmError> {
    if examples.is_empty() {
        return Err(EmError::NoExamples);
    }
    let fg = compile(g);
    for (i, ex) in examples.iter().enumerate() {
        if ex.evidence.len() != fg.num_vars() {
            return Err(EmError::EvidenceMismatch { example: i, expected: fg.num_vars(), got: ex.evidence.len() });
        }
    }
    warm.resize(examples.len(), None);
    let inner = BpConfig { threads: 1, ..cfg.bp.clone() };
    let run = |(ex, slot): (&TrainingExample, &mut Option<Vec<f64>>)| {
        let mut lbp = match slot.take() {
            Some(m) if cfg.warm_start => Lbp::with_messages(&fg, &inner, m).expect("message count matches"),
            _ => Lbp::new(&fg, &inner),
        };
        let m = lbp.run(&ex.evidence, &ex.clamps);
        if cfg.warm_start {
            *slot = Some(lbp.into_messages());
        }
        let mut c = ExpectedCounts::zeros(g);
        c.add_marginals(g, &fg, &m, cfg.self_rooting);
        (c, m.converged)
    };
    let per_example: Vec<(ExpectedCounts, bool)> = if cfg.bp.threads != 1 {
        examples.par_iter().zip(warm.par_iter_mut()).map(run).collect()
    } else {
        examples.iter().zip(warm.iter_mut()).map(run).collect()
    };
    let mut counts = ExpectedCounts::zeros(g);
    let mut unconverged = 0;
    for (c, converged) in &per_example {
        counts.merge(c);
        unconverged += usize::from(!converged);
    }
    let MStep { grammar, degenerate } = m_step(g, &counts, cfg)?;
    Ok(EmStep { grammar, counts, degenerate, unconverged })
}

/// Parameter history of a `fit` run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmState {
    /// Rule probabilities after each iteration, indexed by rule id.
    pub rule_trajectory: Vec<Vec<f64>>,
    /// Self-rooting probabilities after each iteration, indexed by symbol id.
    pub self_rooting_trajectory: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Symbols reported degenerate in any iteration.
    pub degenerate: Vec<SymbolId>,
    /// LBP runs that hit `max_iters`, summed over iterations.
    pub unconverged_runs: usize,
}

/// Iterates [`em_step`] up to `iters` times, stopping early once no
/// parameter changes by more than `cfg.tolerance`.
pub fn fit(g: &Grammar, examples: &[TrainingExample], iters: usize, cfg: &EmConfig) -> Result<(Grammar, EmState), EmError> {
    if iters == 0 {
        return Err(EmError::NoIterations);
    }
    let mut state = EmState::default();
    let mut current = g.clone();
    let mut warm = Vec::new();
    for _ in 0..iters {
        let step = em_step_warm(&current, examples, cfg, &mut warm)?;
        let change = max_change(&current, &step.grammar);
        state.rule_trajectory.push(step.grammar.rule_probabilities());
        state.self_rooting_trajectory.push(step.grammar.self_rooting_probabilities());
        state.iterations += 1;
        state.unconverged_runs += step.unconverged;
        for s in step.degenerate {
            if !state.degenerate.contains(&s) {
                state.degenerate.push(s);
            }
        }
        current = step.grammar;
        if change < cfg.tolerance {
            state.converged = true;
            break;
        }
    }
    Ok((current, state))
}

fn max_change(a: &Grammar, b: &Grammar) -> f64 {
    let rules = a.rule_probabilities().into_iter().zip(b.rule_probabilities()).map(|(x, y)| (x - y).abs());
    let eps = a.self_rooting_probabilities().into_iter().zip(b.self_rooting_probabilities()).map(|(x, y)| (x - y).abs());
    rules.chain(eps).fold(0.0, f64::max)
}
