//! Evidence messages from observations: Gaussian pixel likelihoods and
//! calibrated detector scores. Everything is computed as log-odds
//! `ln(m(1)/m(0))`; [`pair`] turns a log-odds into a normalized, floored
//! message.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::bp::kernels::{floor_log_odds, pair_from_log_odds};
use crate::bp::Evidence;
use crate::factorgraph::VarLayout;
use crate::grammar::{Grammar, SymbolId};
use crate::image::Grid;
use crate::rng::{Purpose, StreamKey};

pub type NoisyImage = Grid<f64>;

/// Normalized message for log-odds `lo`, floored at `floor`.
pub fn pair(lo: f64, floor: f64) -> [f64; 2] {
    let cap = floor_log_odds(floor);
    pair_from_log_odds(lo.clamp(-cap, cap))
}

/// Draws `I(x,y) ~ N(μ(J(x,y)), σ)` independently per pixel.
pub fn corrupt_contour_map(map: &Grid<bool>, mu0: f64, mu1: f64, sigma: f64, seed: u64) -> NoisyImage {
    let mut rng = StreamKey::new(seed).purpose(Purpose::PixelNoise);
    let noise = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    map.map(|&on| if on { mu1 } else { mu0 } + noise.sample(&mut rng))
}

/// Log-likelihood ratio `ln N(I; μ1, σ) - ln N(I; μ0, σ)`.
pub fn gaussian_log_odds(i: f64, mu0: f64, mu1: f64, sigma: f64) -> f64 {
    ((i - mu0).powi(2) - (i - mu1).powi(2)) / (2.0 * sigma * sigma)
}

/// Per-pixel evidence log-odds for the curve-pixel symbol.
pub fn gaussian_evidence(img: &NoisyImage, mu0: f64, mu1: f64, sigma: f64) -> Grid<f64> {
    img.map(|&i| gaussian_log_odds(i, mu0, mu1, sigma))
}

/// Per-pixel posterior with a uniform prior, using only local evidence.
/// Thresholding it is the no-context baseline.
pub fn no_context_posterior(log_odds: &Grid<f64>) -> Grid<f64> {
    log_odds.map(|&lo| pair_from_log_odds(lo)[1])
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("grid is {got_w}x{got_h} but symbol `{symbol}` has a {want_w}x{want_h} pose grid")]
pub struct ShapeMismatch {
    pub symbol: String,
    pub got_w: usize,
    pub got_h: usize,
    pub want_w: usize,
    pub want_h: usize,
}

/// Adds per-cell log-odds to the X variable of every brick of `symbol`
/// whose position is that cell (all orientations and scales).
pub fn add_cell_evidence(
    ev: &mut Evidence,
    g: &Grammar,
    layout: &VarLayout,
    symbol: SymbolId,
    cells: &Grid<f64>,
) -> Result<(), ShapeMismatch> {
    let space = &g.symbol(symbol).poses;
    if cells.width != space.width() as usize || cells.height != space.height() as usize {
        return Err(ShapeMismatch {
            symbol: g.symbol(symbol).name.clone(),
            got_w: cells.width,
            got_h: cells.height,
            want_w: space.width() as usize,
            want_h: space.height() as usize,
        });
    }
    for b in g.bricks().range(symbol) {
        let (_, pose) = g.brick_pose(crate::grammar::BrickId(b));
        let v = layout.x(crate::grammar::BrickId(b));
        let lo = ev.log_odds(v) + cells.get(pose.x as usize, pose.y as usize);
        ev.set_log_odds(v, lo);
    }
    Ok(())
}

/// Logistic calibration `p = 1 / (1 + exp(-(slope·s + offset)))`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Platt {
    pub slope: f64,
    pub offset: f64,
}

impl Platt {
    pub fn logit(&self, score: f64) -> f64 {
        self.slope * score + self.offset
    }

    pub fn probability(&self, score: f64) -> f64 {
        pair_from_log_odds(self.logit(score))[1]
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlattError {
    #[error("calibration needs both positive and negative examples")]
    SingleClassInput,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
}

/// Largest slope magnitude the fit may reach.
pub const PLATT_SLOPE_CAP: f64 = 1e4;
const PLATT_ITERS: usize = 100;

/// Fits a sigmoid to scores by Newton's method on the log-loss against
/// Platt's smoothed targets `(N₊+1)/(N₊+2)` and `1/(N₋+2)`.
pub fn platt_fit(scores: &[f64], labels: &[bool]) -> Result<Platt, PlattError> {
    if scores.len() != labels.len() {
        return Err(PlattError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(PlattError::SingleClassInput);
    }
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();

    let loss = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&targets)
            .map(|(&s, &t)| {
                let z = a * s + b;
                // log(1 + e^z) - t·z, stable for both signs of z
                let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                softplus - t * z
            })
            .sum()
    };

    let (mut a, mut b) = (0.0, ((pos + 1.0) / (neg + 1.0)).ln());
    let mut f = loss(a, b);
    for _ in 0..PLATT_ITERS {
        let (mut g1, mut g2, mut h11, mut h22, mut h21) = (0.0, 0.0, 1e-12, 1e-12, 0.0);
        for (&s, &t) in scores.iter().zip(&targets) {
            let p = pair_from_log_odds(a * s + b)[1];
            let d = p - t;
            let w = p * (1.0 - p);
            g1 += d * s;
            g2 += d;
            h11 += w * s * s;
            h22 += w;
            h21 += w * s;
        }
        if g1.abs() < 1e-10 && g2.abs() < 1e-10 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut improved = false;
        while step >= 1e-10 {
            let na = (a + step * da).clamp(-PLATT_SLOPE_CAP, PLATT_SLOPE_CAP);
            let nb = b + step * db;
            let nf = loss(na, nb);
            if nf < f + 1e-4 * step * gd {
                a = na;
                b = nb;
                f = nf;
                improved = true;
                break;
            }
            step /= 2.0;
        }
        if !improved {
            break;
        }
    }
    Ok(Platt { slope: a, offset: b })
}

/// Detector scores for every brick of one symbol, with their calibration
/// and the symbol's prior `P(X = 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreField {
    pub symbol: SymbolId,
    /// One score per brick of the symbol, in brick order.
    pub scores: Vec<f64>,
    pub calibration: Platt,
    pub prior: f64,
}

/// Evidence log-odds per brick of the field's symbol:
/// `m(1) ∝ p/ε` and `m(0) ∝ (1-p)/(1-ε)` with `p` the calibrated score.
pub fn score_evidence(sf: &ScoreField) -> Vec<f64> {
    let prior_logit = sf.prior.ln() - (-sf.prior).ln_1p();
    sf.scores.iter().map(|&s| sf.calibration.logit(s) - prior_logit).collect()
}

/// Adds a score field's evidence to the X variables of its symbol.
pub fn add_score_evidence(ev: &mut Evidence, g: &Grammar, layout: &VarLayout, sf: &ScoreField) {
    let range = g.bricks().range(sf.symbol);
    assert_eq!(range.len(), sf.scores.len(), "one score per brick");
    for (b, lo) in range.zip(score_evidence(sf)) {
        let v = layout.x(crate::grammar::BrickId(b));
        ev.set_log_odds(v, ev.log_odds(v) + lo);
    }
}

/// Synthetic detector: scores of true bricks from `N(pos_mean, sd)`, of all
/// others from `N(neg_mean, sd)`.
pub fn synthetic_scores(truth: &[bool], pos_mean: f64, neg_mean: f64, sd: f64, rng: &mut impl Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, sd).expect("sd must be finite and non-negative");
    truth.iter().map(|&t| if t { pos_mean } else { neg_mean } + noise.sample(rng)).collect()
}
