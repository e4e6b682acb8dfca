//! Synthetic contour maps: the curve grammar, noisy-image detection with a
//! no-context baseline, and EM training sets.

use std::fmt::Write as _;

use crate::bp::{BpConfig, Evidence, Lbp};
use crate::em::{fit, EmConfig, EmError, EmState, TrainingExample};
use crate::eval::{belief_map, pr_auc, EvalError};
use crate::evidence::{add_cell_evidence, corrupt_contour_map, gaussian_evidence, no_context_posterior};
use crate::factorgraph::{compile, FactorGraph};
use crate::grammar::format::parse_grammar;
use crate::grammar::{BrickId, Grammar, GrammarError, SymbolId};
use crate::image::Grid;
use crate::sampler::{Sampler, Scene, SceneError};

/// Rule probabilities of the curve grammar: stop, straight, turn left,
/// turn right.
pub const CURVE_RULES: [f64; 4] = [0.05, 0.73, 0.11, 0.11];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveParams {
    pub width: u32,
    pub height: u32,
    pub rules: [f64; 4],
    pub rho: f64,
    /// Self-rooting probability of the oriented curve symbol `C`.
    pub epsilon: f64,
}

impl CurveParams {
    pub fn new(width: u32, height: u32) -> Self {
        CurveParams { width, height, rules: CURVE_RULES, rho: 0.99, epsilon: 2.5e-4 }
    }
}

/// Grammar file text. `C` lives on an 8-orientation grid and walks one
/// step per rule application; `J` is the unoriented curve-pixel symbol
/// that each `C` brick emits at its own position.
pub fn curve_grammar_text(p: &CurveParams) -> String {
    let [stop, straight, left, right] = p.rules;
    let mut s = String::new();
    let _ = writeln!(s, "# oriented curves on a {}x{} grid", p.width, p.height);
    let _ = writeln!(s, "[symbols]\nC J\n");
    let _ = writeln!(s, "[pose_spaces]");
    let _ = writeln!(s, "C width={} height={} orientations=8", p.width, p.height);
    let _ = writeln!(s, "J width={} height={}\n", p.width, p.height);
    let _ = writeln!(s, "[params]\nrho = {}\nepsilon C = {}\n", p.rho, p.epsilon);
    let _ = writeln!(s, "[rules]");
    let _ = writeln!(s, "C {stop} -> J{{offsets 0,0}}");
    let _ = writeln!(s, "C {straight} -> J{{offsets 0,0}} C{{offsets 1,0 rotate}}");
    let _ = writeln!(s, "C {left} -> J{{offsets 0,0}} C{{offsets 1,1 rotate}}");
    let _ = writeln!(s, "C {right} -> J{{offsets 0,0}} C{{offsets 1,-1 rotate}}");
    s
}

pub fn curve_grammar(p: &CurveParams) -> Result<Grammar, GrammarError> {
    parse_grammar(&curve_grammar_text(p))
}

fn symbol(g: &Grammar, name: &str) -> SymbolId {
    g.symbol_id(name).unwrap_or_else(|| panic!("grammar has no symbol `{name}`"))
}

/// Curve-pixel map of a scene.
pub fn contour_map(g: &Grammar, scene: &Scene) -> Grid<bool> {
    let j = symbol(g, "J");
    let space = &g.symbol(j).poses;
    Grid::from_vec(space.width() as usize, space.height() as usize, scene.occupancy(g, j))
}

/// Per-pixel intensity model `I ~ N(μ(J), σ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub mu0: f64,
    pub mu1: f64,
    pub sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { mu0: 150.0, mu1: 100.0, sigma: 40.0 }
    }
}

/// Samples scenes from seeds `first_seed, first_seed + 1, ...`, skipping
/// blank contour maps, until `count` maps are collected. Returns the seeds
/// alongside the maps.
pub fn sample_contour_maps(g: &Grammar, count: usize, first_seed: u64) -> Result<Vec<(u64, Grid<bool>)>, SceneError> {
    let sampler = Sampler::new(g)?;
    let mut out = Vec::with_capacity(count);
    let mut seed = first_seed;
    while out.len() < count {
        let map = contour_map(g, &sampler.sample(seed));
        if map.data.contains(&true) {
            out.push((seed, map));
        }
        seed += 1;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Detection {
    /// `P(J = 1)` per pixel under the grammar model.
    pub grammar: Grid<f64>,
    /// Local-evidence posterior per pixel.
    pub baseline: Grid<f64>,
    pub auc_grammar: f64,
    pub auc_baseline: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Evidence on `J` from a noisy image.
pub fn image_evidence(g: &Grammar, fg: &FactorGraph, img: &Grid<f64>, noise: &NoiseModel) -> Evidence {
    let lo = gaussian_evidence(img, noise.mu0, noise.mu1, noise.sigma);
    let mut ev = Evidence::uniform(fg.num_vars());
    add_cell_evidence(&mut ev, g, fg.layout(), symbol(g, "J"), &lo).expect("image matches the grammar grid");
    ev
}

/// Corrupts `map`, runs LBP, and scores both the grammar beliefs and the
/// no-context baseline against the clean map.
pub fn detect_curves(
    g: &Grammar,
    fg: &FactorGraph,
    map: &Grid<bool>,
    noise: &NoiseModel,
    noise_seed: u64,
    cfg: &BpConfig,
) -> Result<Detection, EvalError> {
    let img = corrupt_contour_map(map, noise.mu0, noise.mu1, noise.sigma, noise_seed);
    let ev = image_evidence(g, fg, &img, noise);
    let m = Lbp::new(fg, cfg).run(&ev, &[]);
    let grammar = belief_map(g, fg.layout(), &m, symbol(g, "J"));
    let baseline = no_context_posterior(&gaussian_evidence(&img, noise.mu0, noise.mu1, noise.sigma));
    Ok(Detection {
        auc_grammar: pr_auc(&grammar.data, &map.data)?.auc,
        auc_baseline: pr_auc(&baseline.data, &map.data)?.auc,
        grammar,
        baseline,
        iterations: m.iterations,
        converged: m.converged,
    })
}

/// Scenes observed through their curve pixels: every `J` brick is clamped
/// to the sampled map and `C` stays latent.
pub fn contour_training_example(g: &Grammar, fg: &FactorGraph, map: &Grid<bool>) -> TrainingExample {
    let j = symbol(g, "J");
    let clamps = g
        .bricks()
        .range(j)
        .map(|b| {
            let (_, pose) = g.brick_pose(BrickId(b));
            (fg.layout().x(BrickId(b)), *map.get(pose.x as usize, pose.y as usize))
        })
        .collect();
    TrainingExample { evidence: Evidence::uniform(fg.num_vars()), clamps }
}

/// Samples `scenes` contour maps from `truth` and runs EM from uniform
/// rule probabilities and `ε_C = 1e-3`.
pub fn em_recovery(
    truth: &CurveParams,
    scenes: usize,
    first_seed: u64,
    iters: usize,
    cfg: &EmConfig,
) -> Result<(Grammar, EmState), EmError> {
    let g = curve_grammar(truth)?;
    let fg = compile(&g);
    let maps = sample_contour_maps(&g, scenes, first_seed).expect("curve grammar is acyclic");
    let examples: Vec<TrainingExample> = maps.iter().map(|(_, m)| contour_training_example(&g, &fg, m)).collect();
    let init = curve_grammar(&CurveParams { rules: [0.25; 4], epsilon: 1e-3, ..*truth })?;
    fit(&init, &examples, iters, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_text_parses() {
        let g = curve_grammar(&CurveParams::new(6, 5)).unwrap();
        assert_eq!(g.num_bricks(), 6 * 5 * 8 + 6 * 5);
        assert_eq!(g.rule_probabilities(), CURVE_RULES.to_vec());
    }

    #[test]
    fn sampled_maps_are_nonblank_and_deterministic() {
        let g = curve_grammar(&CurveParams { epsilon: 0.01, ..CurveParams::new(12, 12) }).unwrap();
        let a = sample_contour_maps(&g, 3, 0).unwrap();
        let b = sample_contour_maps(&g, 3, 0).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|(_, m)| m.data.contains(&true)));
    }

    #[test]
    fn clean_image_is_found() {
        let g = curve_grammar(&CurveParams { epsilon: 0.01, ..CurveParams::new(10, 10) }).unwrap();
        let fg = compile(&g);
        let (_, map) = sample_contour_maps(&g, 1, 3).unwrap().remove(0);
        let noise = NoiseModel { sigma: 5.0, ..NoiseModel::default() };
        let d = detect_curves(&g, &fg, &map, &noise, 1, &BpConfig::default()).unwrap();
        assert!(d.auc_grammar > 0.99, "{}", d.auc_grammar);
        assert!(d.auc_baseline > 0.99);
    }
}
