//! Loopy belief propagation over a compiled [`FactorGraph`].
//!
//! Factor-to-variable messages are stored per edge as log-odds
//! `ln(m(1)/m(0))`, which fixes a normalized pair; the message floor is a cap
//! on their magnitude. Variable-to-factor messages are never stored: each is
//! the variable's total log-odds (evidence plus all incoming factor messages)
//! minus the target factor's own message.
//!
//! Flood iterations read only the previous iteration's messages, so factors
//! are updated in parallel batches when `threads != 1`; results are the same
//! bitwise in either mode. Sweep iterations visit factors in id order and
//! use the newest messages.

pub mod kernels;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factorgraph::{FactorGraph, FactorKind, VarId};
use crate::rng::{Purpose, StreamKey};
use kernels::{categorical_messages, floor_log_odds, log_odds, noisy_or_messages, pair_from_log_odds, NoCount};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// All factors update from the previous iteration's messages.
    SynchronousFlood,
    /// Factors update in id order, each seeing the newest messages.
    FactorSweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpConfig {
    pub schedule: Schedule,
    /// Weight of the previous factor-to-variable message.
    pub damping: f64,
    pub max_iters: usize,
    /// Stop when no belief moves by this much in one iteration. All variables
    /// are checked, since X beliefs can sit still for an iteration while
    /// messages are still crossing the R and G layers.
    pub tolerance: f64,
    /// Smallest entry of any stored message.
    pub floor: f64,
    pub seed: u64,
    /// Half-width of random initial log-odds; 0 starts from uniform messages.
    pub init_jitter: f64,
    /// 1 runs single-threaded; anything else uses the current rayon pool.
    pub threads: usize,
}

impl Default for BpConfig {
    fn default() -> Self {
        BpConfig {
            schedule: Schedule::SynchronousFlood,
            damping: 0.5,
            max_iters: 200,
            tolerance: 1e-6,
            floor: 1e-12,
            seed: 0,
            init_jitter: 0.0,
            threads: 1,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BpConfigError {
    #[error("damping must be in [0, 1), got {0}")]
    Damping(f64),
    #[error("max_iters must be at least 1")]
    MaxIters,
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("floor must be in (0, 0.5), got {0}")]
    Floor(f64),
    #[error("init_jitter must be finite and non-negative, got {0}")]
    Jitter(f64),
}

impl BpConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), BpConfigError> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(BpConfigError::Damping(self.damping));
        }
        if self.max_iters == 0 {
            return Err(BpConfigError::MaxIters);
        }
        if !(self.tolerance > 0.0) {
            return Err(BpConfigError::Tolerance(self.tolerance));
        }
        if !(self.floor > 0.0 && self.floor < 0.5) {
            return Err(BpConfigError::Floor(self.floor));
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return Err(BpConfigError::Jitter(self.init_jitter));
        }
        Ok(())
    }
}

/// Fixed unary messages on variables, stored as log-odds (0 = uniform).
#[derive(Clone, Debug, PartialEq)]
pub struct Evidence {
    log_odds: Vec<f64>,
}

impl Evidence {
    pub fn uniform(num_vars: usize) -> Self {
        Evidence { log_odds: vec![0.0; num_vars] }
    }

    pub fn len(&self) -> usize {
        self.log_odds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_odds.is_empty()
    }

    /// Sets the message `[m(0), m(1)]`; entries must be non-negative and not
    /// both zero. A zero entry is raised to the floor when the run starts.
    pub fn set(&mut self, v: VarId, message: [f64; 2]) {
        assert!(
            message[0] >= 0.0 && message[1] >= 0.0 && message[0] + message[1] > 0.0,
            "evidence must be non-negative and not all zero"
        );
        self.log_odds[v.index()] = log_odds(message);
    }

    pub fn set_log_odds(&mut self, v: VarId, lo: f64) {
        assert!(!lo.is_nan(), "evidence log-odds is NaN");
        self.log_odds[v.index()] = lo;
    }

    pub fn log_odds(&self, v: VarId) -> f64 {
        self.log_odds[v.index()]
    }

    pub fn message(&self, v: VarId) -> [f64; 2] {
        pair_from_log_odds(self.log_odds[v.index()])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    /// `P(v = 1)` per variable.
    pub beliefs: Vec<f64>,
    /// Posterior probability that each brick is present because it
    /// self-rooted, from its noisy-or factor's leak term.
    pub self_rooted: Vec<f64>,
    /// Max absolute belief change of each iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl Marginals {
    pub fn p1(&self, v: VarId) -> f64 {
        self.beliefs[v.index()]
    }

    pub fn belief(&self, v: VarId) -> [f64; 2] {
        let p = self.beliefs[v.index()];
        [1.0 - p, p]
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("expected {expected} messages, got {got}")]
pub struct MessageCountMismatch {
    pub expected: usize,
    pub got: usize,
}

/// Message store for one graph; messages persist between runs so a later
/// run starts where the previous one stopped.
pub struct Lbp<'a> {
    fg: &'a FactorGraph,
    cfg: BpConfig,
    cap: f64,
    msg: Vec<f64>,
    next: Vec<f64>,
    totals: Vec<f64>,
    batches: Vec<usize>,
}

const BATCH_EDGES: usize = 8192;

impl<'a> Lbp<'a> {
    /// # Panics
    /// If `cfg` fails [`BpConfig::validate`].
    pub fn new(fg: &'a FactorGraph, cfg: &BpConfig) -> Self {
        cfg.validate().expect("invalid BP configuration");
        let mut msg = vec![0.0; fg.num_edges()];
        if cfg.init_jitter > 0.0 {
            let mut rng = StreamKey::new(cfg.seed).purpose(Purpose::MessageInit);
            for m in &mut msg {
                *m = rng.random_range(-cfg.init_jitter..=cfg.init_jitter);
            }
        }
        Self::build(fg, cfg, msg)
    }

    /// Starts from stored messages, e.g. from a graph with the same structure
    /// but other parameters.
    pub fn with_messages(fg: &'a FactorGraph, cfg: &BpConfig, messages: Vec<f64>) -> Result<Self, MessageCountMismatch> {
        cfg.validate().expect("invalid BP configuration");
        if messages.len() != fg.num_edges() {
            return Err(MessageCountMismatch { expected: fg.num_edges(), got: messages.len() });
        }
        Ok(Self::build(fg, cfg, messages))
    }

    fn build(fg: &'a FactorGraph, cfg: &BpConfig, msg: Vec<f64>) -> Self {
        let mut batches = vec![0];
        let mut edges = 0;
        for f in 0..fg.num_factors() {
            edges += fg.edges_of(f).len();
            if edges >= BATCH_EDGES {
                batches.push(f + 1);
                edges = 0;
            }
        }
        if *batches.last().unwrap() != fg.num_factors() {
            batches.push(fg.num_factors());
        }
        Lbp {
            fg,
            cfg: cfg.clone(),
            cap: floor_log_odds(cfg.floor),
            next: vec![0.0; msg.len()],
            msg,
            totals: vec![0.0; fg.num_vars()],
            batches,
        }
    }

    /// Factor-to-variable message on edge `e`, as `[m(0), m(1)]`.
    pub fn message(&self, e: usize) -> [f64; 2] {
        pair_from_log_odds(self.msg[e])
    }

    /// All factor-to-variable messages as log-odds, indexed by edge.
    pub fn messages(&self) -> &[f64] {
        &self.msg
    }

    pub fn into_messages(self) -> Vec<f64> {
        self.msg
    }

    pub fn run(&mut self, evidence: &Evidence, clamps: &[(VarId, bool)]) -> Marginals {
        assert_eq!(evidence.len(), self.fg.num_vars(), "evidence size does not match the graph");
        let cap = self.cap;
        let mut ev: Vec<f64> = evidence.log_odds.iter().map(|lo| lo.clamp(-cap, cap)).collect();
        for &(v, on) in clamps {
            ev[v.index()] = if on { cap } else { -cap };
        }
        let parallel = self.cfg.threads != 1;
        self.compute_totals(&ev, parallel);
        let mut prev: Vec<f64> = self.totals.iter().map(|&t| sigmoid(t)).collect();
        let mut residuals = Vec::new();
        let mut converged = false;
        for _ in 0..self.cfg.max_iters {
            match self.cfg.schedule {
                Schedule::SynchronousFlood => {
                    self.flood(parallel);
                    std::mem::swap(&mut self.msg, &mut self.next);
                }
                Schedule::FactorSweep => self.sweep(),
            }
            self.compute_totals(&ev, parallel);
            let mut delta = 0.0f64;
            for (p, &t) in prev.iter_mut().zip(&self.totals) {
                let b = sigmoid(t);
                delta = delta.max((b - *p).abs());
                *p = b;
            }
            residuals.push(delta);
            if delta < self.cfg.tolerance {
                converged = true;
                break;
            }
        }

        let beliefs = prev;
        let self_rooted = self.self_rooted();
        Marginals { beliefs, self_rooted, iterations: residuals.len(), residuals, converged }
    }

    fn compute_totals(&mut self, ev: &[f64], parallel: bool) {
        let fg = self.fg;
        let msg = &self.msg;
        let total = |(v, t): (usize, &mut f64)| {
            *t = ev[v] + fg.var_edges(VarId(v as u32)).iter().map(|&e| msg[e as usize]).sum::<f64>();
        };
        if parallel {
            self.totals.par_iter_mut().enumerate().with_min_len(4096).for_each(total);
        } else {
            self.totals.iter_mut().enumerate().for_each(total);
        }
    }

    fn flood(&mut self, parallel: bool) {
        let fg = self.fg;
        let (msg, totals) = (&self.msg, &self.totals);
        let (damping, cap) = (self.cfg.damping, self.cap);
        if !parallel {
            let mut work = Work::default();
            for f in 0..fg.num_factors() {
                let range = fg.edges_of(f);
                let base = range.start;
                update_factor(fg, f, msg, totals, &mut self.next[range], base, damping, cap, &mut work);
            }
            return;
        }
        let starts = fg.edge_starts();
        let mut slices = Vec::with_capacity(self.batches.len() - 1);
        let mut rest = &mut self.next[..];
        for w in self.batches.windows(2) {
            let len = (starts[w[1]] - starts[w[0]]) as usize;
            let (head, tail) = rest.split_at_mut(len);
            slices.push((w[0]..w[1], head));
            rest = tail;
        }
        slices.into_par_iter().for_each_init(Work::default, |work, (factors, out)| {
            let batch_base = starts[factors.start] as usize;
            for f in factors {
                let range = fg.edges_of(f);
                let base = range.start;
                let local = range.start - batch_base..range.end - batch_base;
                update_factor(fg, f, msg, totals, &mut out[local], base, damping, cap, work);
            }
        });
    }

    fn sweep(&mut self) {
        let fg = self.fg;
        let (damping, cap) = (self.cfg.damping, self.cap);
        let mut work = Work::default();
        let mut fresh = Vec::new();
        for f in 0..fg.num_factors() {
            let range = fg.edges_of(f);
            fresh.clear();
            fresh.resize(range.len(), 0.0);
            update_factor(fg, f, &self.msg, &self.totals, &mut fresh, range.start, damping, cap, &mut work);
            for (k, e) in range.enumerate() {
                let v = fg.edge_var(e).index();
                self.totals[v] += fresh[k] - self.msg[e];
                self.msg[e] = fresh[k];
            }
        }
    }

    /// Posterior self-rooting probability per brick. The leak fires with
    /// prior `ε` and then forces the brick on, so
    /// `q = ε·μ_X(1) / (μ_X(0)·P0 + μ_X(1)·(1 - P0))`, where `μ_X` is the
    /// message from X into its noisy-or factor and `P0` is that factor's
    /// probability of X being off given its incoming input messages.
    fn self_rooted(&self) -> Vec<f64> {
        let fg = self.fg;
        let nb = fg.layout().num_bricks();
        let mut work = Work::default();
        (0..nb)
            .map(|b| {
                // noisy-or factors come first, one per brick in brick order
                let FactorKind::NoisyOr { leak, beta } = fg.factor(b).kind else { unreachable!() };
                if leak == 0.0 {
                    return 0.0;
                }
                let range = fg.edges_of(b);
                work.gather(fg, &self.msg, &self.totals, range, self.cap);
                work.out.resize(work.inc.len(), [0.0; 2]);
                noisy_or_messages(leak, beta, &work.inc, &mut work.out, &mut work.scratch, &mut NoCount);
                let p0 = work.out[0][0];
                let mx = work.inc[0];
                leak * mx[1] / (mx[0] * p0 + mx[1] * (1.0 - p0))
            })
            .collect()
    }
}

#[derive(Default)]
struct Work {
    inc: Vec<[f64; 2]>,
    out: Vec<[f64; 2]>,
    scratch: Vec<f64>,
}

impl Work {
    fn gather(&mut self, fg: &FactorGraph, msg: &[f64], totals: &[f64], range: std::ops::Range<usize>, cap: f64) {
        self.inc.clear();
        for e in range {
            let v = fg.edge_var(e).index();
            self.inc.push(pair_from_log_odds((totals[v] - msg[e]).clamp(-cap, cap)));
        }
    }
}

/// Recomputes the messages of factor `f` into `out` (one entry per edge,
/// starting at edge `base`), damped against `msg` and capped at `±cap`.
#[allow(clippy::too_many_arguments)]
fn update_factor(
    fg: &FactorGraph,
    f: usize,
    msg: &[f64],
    totals: &[f64],
    out: &mut [f64],
    base: usize,
    damping: f64,
    cap: f64,
    work: &mut Work,
) {
    let factor = fg.factor(f);
    work.gather(fg, msg, totals, base..base + out.len(), cap);
    work.out.clear();
    work.out.resize(work.inc.len(), [0.0; 2]);
    match factor.kind {
        FactorKind::NoisyOr { leak, beta } => {
            noisy_or_messages(leak, beta, &work.inc, &mut work.out, &mut work.scratch, &mut NoCount)
        }
        FactorKind::Categorical => {
            categorical_messages(factor.theta, &work.inc, &mut work.out, &mut work.scratch, &mut NoCount)
        }
    }
    for (k, o) in out.iter_mut().enumerate() {
        let new = work.out[k];
        let lo = if damping > 0.0 {
            let old = pair_from_log_odds(msg[base + k]);
            let m0 = damping * old[0] + (1.0 - damping) * new[0];
            let m1 = damping * old[1] + (1.0 - damping) * new[1];
            log_odds([m0, m1])
        } else {
            log_odds(new)
        };
        *o = lo.clamp(-cap, cap);
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    pair_from_log_odds(t)[1]
}

/// Runs LBP from uniform (or jittered) messages.
pub fn run_lbp(fg: &FactorGraph, evidence: &Evidence, clamps: &[(VarId, bool)], cfg: &BpConfig) -> Marginals {
    Lbp::new(fg, cfg).run(evidence, clamps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorgraph::compile;
    use crate::grammar::format::parse_grammar;

    #[test]
    fn config_validation() {
        assert!(BpConfig::default().validate().is_ok());
        let bad = BpConfig { damping: 1.0, ..BpConfig::default() };
        assert_eq!(bad.validate(), Err(BpConfigError::Damping(1.0)));
        let bad = BpConfig { tolerance: 0.0, ..BpConfig::default() };
        assert!(bad.validate().is_err());
        let bad = BpConfig { max_iters: 0, ..BpConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_root_brick_prior() {
        let g = parse_grammar(
            "[symbols]\nA\n[pose_spaces]\nA width=1 height=1\n[params]\nrho=0.9\nepsilon A=0.3\n[rules]\nA 1 ->\n",
        )
        .unwrap();
        let fg = compile(&g);
        let cfg = BpConfig { tolerance: 1e-13, ..BpConfig::default() };
        let m = run_lbp(&fg, &Evidence::uniform(fg.num_vars()), &[], &cfg);
        assert!(m.converged);
        assert!((m.p1(VarId(0)) - 0.3).abs() < 1e-9);
        assert!((m.p1(VarId(1)) - 0.3).abs() < 1e-9);
        assert!((m.self_rooted[0] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn flood_and_parallel_agree_bitwise() {
        let g = parse_grammar(
            "[symbols]\nC\n[pose_spaces]\nC width=24 height=24 orientations=8\n[params]\nrho=0.95\nepsilon C=0.01\n[rules]\n\
             C 0.2 ->\nC 0.8 -> C{offsets 1,0 1,1 1,-1 rotate}\n",
        )
        .unwrap();
        let fg = compile(&g);
        let mut ev = Evidence::uniform(fg.num_vars());
        for b in 0..50u32 {
            ev.set(VarId(b * 7), [0.3, 0.7]);
        }
        let cfg = BpConfig { max_iters: 20, ..BpConfig::default() };
        let a = run_lbp(&fg, &ev, &[], &cfg);
        let b = run_lbp(&fg, &ev, &[], &BpConfig { threads: 4, ..cfg });
        assert_eq!(a, b);
    }

    #[test]
    fn clamp_pins_belief() {
        let g = parse_grammar(
            "[symbols]\nA\nB\n[pose_spaces]\nA width=1 height=1\nB width=1 height=1\n[params]\nrho=0.9\nepsilon A=0.2\n[rules]\n\
             A 1 -> B{offsets 0,0}\nB 1 ->\n",
        )
        .unwrap();
        let fg = compile(&g);
        let m = run_lbp(&fg, &Evidence::uniform(fg.num_vars()), &[(VarId(1), true)], &BpConfig::default());
        assert!(m.p1(VarId(1)) > 1.0 - 1e-9);
        // B never self-roots, so only A can explain it
        assert!(m.p1(VarId(0)) > 1.0 - 1e-6);
    }
}
