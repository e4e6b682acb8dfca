//! Part-based face grammars: conditioning on observed parts, and
//! localization from weak synthetic part detectors.

use std::fmt::Write as _;

use rand::Rng;

use crate::bp::{BpConfig, Evidence, Lbp, Marginals};
use crate::eval::{belief_map, find_modes, localization_error, localize, Mode};
use crate::evidence::{add_score_evidence, platt_fit, synthetic_scores, Platt, PlattError, ScoreField};
use crate::factorgraph::{FactorGraph, VarId};
use crate::grammar::format::parse_grammar;
use crate::grammar::{BrickId, Grammar, GrammarError, Pose, RuleId, SymbolId};
use crate::image::Grid;
use crate::rng::{Purpose, StreamKey};

/// `F -> {E, E, N, M}` on a plain pixel grid; both eye slots use the same
/// symbol. Parts sit in 3×3 regions around fixed offsets from the face.
pub fn simple_face_grammar_text(width: u32, height: u32) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# one face symbol, one shared eye symbol, no scale");
    let _ = writeln!(s, "[symbols]\nF E N M\n\n[pose_spaces]");
    for sym in ["F", "E", "N", "M"] {
        let _ = writeln!(s, "{sym} width={width} height={height}");
    }
    let _ = writeln!(s, "\n[params]\nrho = 0.99\nepsilon F = 0.001");
    for sym in ["E", "N", "M"] {
        let _ = writeln!(s, "epsilon {sym} = 0.0001");
    }
    let _ = writeln!(s, "\n[rules]");
    let _ = writeln!(
        s,
        "F 1 -> E{{region base=-6,-4 radius=1,1}} E{{region base=6,-4 radius=1,1}} \
         N{{region base=0,0 radius=1,1}} M{{region base=0,5 radius=1,1}}"
    );
    s
}

pub fn simple_face_grammar(width: u32, height: u32) -> Result<Grammar, GrammarError> {
    parse_grammar(&simple_face_grammar_text(width, height))
}

/// Distinct left and right eyes, nose and mouth on an `(x, y, s)` grid.
/// Part offsets and regions grow with the face scale; a part is usually at
/// the face's scale and occasionally one step off.
pub fn face_grammar_text(width: u32, height: u32) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# faces with four parts over three scales");
    let _ = writeln!(s, "[symbols]\nF L R N M\n\n[pose_spaces]");
    for sym in ["F", "L", "R", "N", "M"] {
        let _ = writeln!(s, "{sym} width={width} height={height} scales=1,1.5,2");
    }
    let _ = writeln!(s, "\n[params]\nrho = 0.99");
    let n = (width * height * 3) as f64;
    for sym in ["F", "L", "R", "N", "M"] {
        let _ = writeln!(s, "epsilon {sym} = {}", 1.0 / n);
    }
    let scales = "scales=-1:0.1,0:0.8,1:0.1";
    let _ = writeln!(s, "\n[rules]");
    let _ = writeln!(
        s,
        "F 1 -> L{{region base=-3,-2 radius=1,1 {scales}}} R{{region base=3,-2 radius=1,1 {scales}}} \
         N{{region base=0,1 radius=1,1 {scales}}} M{{region base=0,4 radius=1,1 {scales}}}"
    );
    s
}

pub fn face_grammar(width: u32, height: u32) -> Result<Grammar, GrammarError> {
    parse_grammar(&face_grammar_text(width, height))
}

fn symbol(g: &Grammar, name: &str) -> SymbolId {
    g.symbol_id(name).unwrap_or_else(|| panic!("grammar has no symbol `{name}`"))
}

/// Brick of `name` at `(x, y)` with orientation and scale index 0.
pub fn brick_at(g: &Grammar, name: &str, x: u32, y: u32) -> Option<BrickId> {
    g.brick_id(symbol(g, name), Pose::at(x, y))
}

/// Beliefs after clamping each listed brick present, with the face belief
/// map and its modes.
#[derive(Clone, Debug)]
pub struct Conditioning {
    pub marginals: Marginals,
    pub face: Grid<f64>,
    pub modes: Vec<Mode>,
}

/// Clamps `present` on and reads the modes of `face`'s belief map with
/// window radius `radius`.
pub fn condition(
    g: &Grammar,
    fg: &FactorGraph,
    present: &[BrickId],
    face: &str,
    radius: usize,
    cfg: &BpConfig,
) -> Conditioning {
    let clamps: Vec<(VarId, bool)> = present.iter().map(|&b| (fg.layout().x(b), true)).collect();
    let marginals = Lbp::new(fg, cfg).run(&Evidence::uniform(fg.num_vars()), &clamps);
    let map = belief_map(g, fg.layout(), &marginals, symbol(g, face));
    let modes = find_modes(&map, radius);
    Conditioning { marginals, face: map, modes }
}

/// One face brick and the part bricks it expanded to, indexed by symbol id.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedFace {
    pub bricks: Vec<BrickId>,
}

fn face_rule(g: &Grammar, face: SymbolId) -> RuleId {
    let rules = g.rules_for(face);
    assert_eq!(rules.len(), 1, "face symbol needs exactly one rule");
    rules[0]
}

/// Draws a face pose whose part regions lie fully inside the image, then
/// one pose per part from the rule's geometry.
pub fn plant_face(g: &Grammar, rng: &mut impl Rng) -> PlantedFace {
    let f = symbol(g, "F");
    let rule = face_rule(g, f);
    let space = &g.symbol(f).poses;
    let arity = g.rule(rule).rhs.len();
    // A pose is interior when every slot keeps the support size it has at
    // the grid centre for the same scale.
    let full = |pose: Pose| {
        let centre = Pose { x: space.width() / 2, y: space.height() / 2, ..pose };
        (0..arity).all(|i| g.support(rule, i, pose).len() == g.support(rule, i, centre).len())
    };
    let face_pose = loop {
        let p = space.pose(rng.random_range(0..space.len() as u32));
        if full(p) {
            break p;
        }
    };
    let mut bricks = vec![BrickId(u32::MAX); g.num_symbols()];
    bricks[f.index()] = g.brick_id(f, face_pose).expect("pose from the space");
    for (i, slot) in g.rule(rule).rhs.iter().enumerate() {
        let support = g.support(rule, i, face_pose);
        let mut u = rng.random::<f64>();
        let mut pick = support[support.len() - 1].0;
        for &(child, p) in &support {
            if u < p {
                pick = child;
                break;
            }
            u -= p;
        }
        bricks[slot.symbol.index()] = g.bricks().id(slot.symbol, pick);
    }
    PlantedFace { bricks }
}

/// Synthetic detector: `N(pos_mean, sd)` at planted bricks, `N(0, sd)`
/// elsewhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreModel {
    pub pos_mean: f64,
    pub sd: f64,
}

/// Scores for every brick of every symbol, indexed by symbol id.
pub fn planted_scores(g: &Grammar, planted: &PlantedFace, model: &ScoreModel, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..g.num_symbols())
        .map(|s| {
            let range = g.bricks().range(SymbolId(s as u32));
            let truth: Vec<bool> = range.clone().map(|b| BrickId(b) == planted.bricks[s]).collect();
            synthetic_scores(&truth, model.pos_mean, 0.0, model.sd, rng)
        })
        .collect()
}

/// Per-symbol Platt calibration from `images` planted training scenes.
pub fn calibrate(g: &Grammar, model: &ScoreModel, images: usize, seed: u64) -> Result<Vec<Platt>, PlattError> {
    let mut rng = StreamKey::new(seed).purpose(Purpose::Planting);
    let mut scores = vec![Vec::new(); g.num_symbols()];
    let mut labels = vec![Vec::new(); g.num_symbols()];
    for _ in 0..images {
        let planted = plant_face(g, &mut rng);
        for (s, field) in planted_scores(g, &planted, model, &mut rng).into_iter().enumerate() {
            let start = g.bricks().range(SymbolId(s as u32)).start;
            labels[s].extend((0..field.len() as u32).map(|k| BrickId(start + k) == planted.bricks[s]));
            scores[s].extend(field);
        }
    }
    scores.iter().zip(&labels).map(|(sc, lb)| platt_fit(sc, lb)).collect()
}

/// Per-symbol localization errors of the grammar model and of the
/// independent-score baseline on one planted scene.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationTrial {
    pub truth: PlantedFace,
    pub grammar_error: Vec<f64>,
    pub baseline_error: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn centre(g: &Grammar, b: BrickId) -> (f64, f64) {
    let (_, p) = g.brick_pose(b);
    (p.x as f64, p.y as f64)
}

/// Plants a face from `seed`, scores every brick, and localizes each symbol
/// by its highest grammar belief and by its highest raw score.
pub fn localization_trial(
    g: &Grammar,
    fg: &FactorGraph,
    calibration: &[Platt],
    model: &ScoreModel,
    seed: u64,
    cfg: &BpConfig,
) -> LocalizationTrial {
    let mut rng = StreamKey::new(seed).purpose(Purpose::ScoreNoise);
    let planted = plant_face(g, &mut rng);
    let scores = planted_scores(g, &planted, model, &mut rng);
    let mut ev = Evidence::uniform(fg.num_vars());
    for (s, field) in scores.iter().enumerate() {
        let sym = SymbolId(s as u32);
        let sf = ScoreField {
            symbol: sym,
            scores: field.clone(),
            calibration: calibration[s],
            prior: g.symbol(sym).self_rooting,
        };
        add_score_evidence(&mut ev, g, fg.layout(), &sf);
    }
    let m = Lbp::new(fg, cfg).run(&ev, &[]);
    let mut grammar_error = Vec::new();
    let mut baseline_error = Vec::new();
    for (s, field) in scores.iter().enumerate() {
        let sym = SymbolId(s as u32);
        let truth = centre(g, planted.bricks[s]);
        let p = localize(g, fg.layout(), &m, sym);
        grammar_error.push(localization_error((p.x as f64, p.y as f64), truth));
        let best = field
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc })
            .0;
        let start = g.bricks().range(sym).start;
        baseline_error.push(localization_error(centre(g, BrickId(start + best as u32)), truth));
    }
    LocalizationTrial { truth: planted, grammar_error, baseline_error, iterations: m.iterations, converged: m.converged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorgraph::compile;
    use rand::SeedableRng;

    #[test]
    fn grammars_parse() {
        let g = simple_face_grammar(20, 16).unwrap();
        assert_eq!(g.num_symbols(), 4);
        let g = face_grammar(16, 16).unwrap();
        assert_eq!(g.rule(RuleId(0)).rhs.len(), 4);
    }

    #[test]
    fn planted_parts_lie_in_their_regions() {
        let g = face_grammar(24, 24).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let pf = plant_face(&g, &mut rng);
            let f = pf.bricks[0];
            let (_, fp) = g.brick_pose(f);
            for (i, slot) in g.rule(RuleId(0)).rhs.iter().enumerate() {
                let child = pf.bricks[slot.symbol.index()];
                let (_, cp) = g.brick_pose(child);
                let idx = g.symbol(slot.symbol).poses.index(cp).unwrap();
                assert!(g.support(RuleId(0), i, fp).iter().any(|&(c, _)| c == idx));
            }
        }
    }

    #[test]
    fn face_clamp_predicts_parts() {
        let g = simple_face_grammar(24, 20).unwrap();
        let fg = compile(&g);
        let f = brick_at(&g, "F", 12, 8).unwrap();
        let c = condition(&g, &fg, &[f], "N", 1, &BpConfig::default());
        // the nose region is a flat 3x3 plateau around the face position
        assert!(c.modes[0].x.abs_diff(12) <= 1 && c.modes[0].y.abs_diff(8) <= 1, "{:?}", c.modes[0]);
        assert!(c.modes[0].peak > 0.1);
    }
}
