//! Precision-recall evaluation, localization, and belief-map mode finding.

use thiserror::Error;

use crate::bp::Marginals;
use crate::factorgraph::VarLayout;
use crate::grammar::{BrickId, Grammar, Pose, SymbolId};
use crate::image::Grid;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("ground truth has no positives")]
    NoPositives,
    #[error("{beliefs} beliefs but {truth} truth values")]
    LengthMismatch { beliefs: usize, truth: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall at every distinct belief threshold (predict positive
/// when `belief >= threshold`), thresholds descending.
#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

/// Sweeps all distinct thresholds; tied beliefs enter together. The area
/// is the trapezoid rule over recall, starting at recall 0 with the first
/// point's precision.
pub fn pr_auc(beliefs: &[f64], truth: &[bool]) -> Result<PrCurve, EvalError> {
    if beliefs.len() != truth.len() {
        return Err(EvalError::LengthMismatch { beliefs: beliefs.len(), truth: truth.len() });
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..beliefs.len()).collect();
    order.sort_by(|&a, &b| beliefs[b].total_cmp(&beliefs[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = beliefs[order[i]];
        while i < order.len() && beliefs[order[i]] == t {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    let auc = trapezoid(&points);
    Ok(PrCurve { points, auc })
}

pub(crate) fn trapezoid(points: &[PrPoint]) -> f64 {
    let Some(first) = points.first() else { return 0.0 };
    let (mut r0, mut p0) = (0.0, first.precision);
    let mut area = 0.0;
    for p in points {
        area += (p.recall - r0) * (p.precision + p0) / 2.0;
        r0 = p.recall;
        p0 = p.precision;
    }
    area
}

/// Highest-belief pose of `symbol`; ties go to the lowest brick id.
pub fn localize(g: &Grammar, layout: &VarLayout, m: &Marginals, symbol: SymbolId) -> Pose {
    let mut best = None;
    for b in g.bricks().range(symbol) {
        let p = m.p1(layout.x(BrickId(b)));
        if best.is_none_or(|(_, q)| p > q) {
            best = Some((b, p));
        }
    }
    let (b, _) = best.expect("pose spaces are nonempty");
    g.brick_pose(BrickId(b)).1
}

/// Euclidean distance between two centers.
pub fn localization_error(pred: (f64, f64), truth: (f64, f64)) -> f64 {
    ((pred.0 - truth.0).powi(2) + (pred.1 - truth.1).powi(2)).sqrt()
}

/// `P(X = 1)` of `symbol` per cell, maximized over orientations and scales.
pub fn belief_map(g: &Grammar, layout: &VarLayout, m: &Marginals, symbol: SymbolId) -> Grid<f64> {
    let space = &g.symbol(symbol).poses;
    let mut out = Grid::filled(space.width() as usize, space.height() as usize, 0.0f64);
    for b in g.bricks().range(symbol) {
        let (_, pose) = g.brick_pose(BrickId(b));
        let p = m.p1(layout.x(BrickId(b)));
        let cell = &mut out.data[pose.y as usize * out.width + pose.x as usize];
        *cell = cell.max(p);
    }
    out
}

/// A local maximum of a map with the mass of its neighbourhood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    pub x: usize,
    pub y: usize,
    pub peak: f64,
    /// Sum of the map over the `(2r+1)²` window around the peak.
    pub mass: f64,
}

/// Modes of a map: cells that are maximal in their 3×3 neighbourhood (ties
/// broken toward the earlier cell), ranked by window mass and selected
/// greedily so that no two windows of radius `r` overlap.
pub fn find_modes(map: &Grid<f64>, r: usize) -> Vec<Mode> {
    let (w, h) = (map.width, map.height);
    let mut candidates = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = *map.get(x, y);
            let mut is_max = true;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let u = *map.get(nx, ny);
                    let earlier = (ny, nx) < (y, x);
                    if u > v || (u == v && earlier) {
                        is_max = false;
                    }
                }
            }
            if is_max {
                let mut mass = 0.0;
                for ny in y.saturating_sub(r)..=(y + r).min(h - 1) {
                    for nx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                        mass += map.get(nx, ny);
                    }
                }
                candidates.push(Mode { x, y, peak: v, mass });
            }
        }
    }
    candidates.sort_by(|a, b| b.mass.total_cmp(&a.mass).then((a.y, a.x).cmp(&(b.y, b.x))));
    let mut chosen: Vec<Mode> = Vec::new();
    for c in candidates {
        let clear = chosen.iter().all(|m| m.x.abs_diff(c.x) > 2 * r || m.y.abs_diff(c.y) > 2 * r);
        if clear {
            chosen.push(c);
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(n²) construction: for each distinct threshold, count the
    /// predictions at or above it from scratch.
    fn brute_force(beliefs: &[f64], truth: &[bool]) -> PrCurve {
        let mut thresholds: Vec<f64> = beliefs.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let positives = truth.iter().filter(|&&t| t).count() as f64;
        let points: Vec<PrPoint> = thresholds
            .iter()
            .map(|&t| {
                let tp = beliefs.iter().zip(truth).filter(|(&b, &l)| b >= t && l).count() as f64;
                let pred = beliefs.iter().filter(|&&b| b >= t).count() as f64;
                PrPoint { threshold: t, precision: tp / pred, recall: tp / positives }
            })
            .collect();
        let auc = trapezoid(&points);
        PrCurve { points, auc }
    }

    #[test]
    fn perfect_beliefs() {
        let truth = [true, false, false, true];
        let b: Vec<f64> = truth.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
        assert_eq!(pr_auc(&b, &truth).unwrap().auc, 1.0);
    }

    #[test]
    fn constant_beliefs_give_positive_rate() {
        let truth = [true, false, false, true, false];
        let c = pr_auc(&[0.3; 5], &truth).unwrap();
        assert!((c.auc - 0.4).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = 64;
            let truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            if !truth.contains(&true) {
                continue;
            }
            // coarse values force ties
            let b: Vec<f64> = (0..n).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
            let fast = pr_auc(&b, &truth).unwrap();
            let slow = brute_force(&b, &truth);
            assert!((fast.auc - slow.auc).abs() < 1e-12);
            assert_eq!(fast.points, slow.points);
        }
    }

    #[test]
    fn recall_falls_as_threshold_rises() {
        let c = pr_auc(&[0.9, 0.1, 0.5, 0.5, 0.2], &[true, false, true, false, true]).unwrap();
        assert!(c.points.windows(2).all(|w| w[0].threshold > w[1].threshold && w[0].recall <= w[1].recall));
        assert!((0.0..=1.0).contains(&c.auc));
    }

    #[test]
    fn errors() {
        assert_eq!(pr_auc(&[0.5], &[false]), Err(EvalError::NoPositives));
        assert!(matches!(pr_auc(&[0.5], &[true, false]), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn localization_distance() {
        assert_eq!(localization_error((3.0, 4.0), (3.0, 4.0)), 0.0);
        assert_eq!(localization_error((0.0, 0.0), (3.0, 4.0)), 5.0);
    }

    #[test]
    fn two_separated_bumps() {
        let mut map = Grid::filled(20, 5, 0.0);
        map.set(4, 2, 1.0);
        map.set(5, 2, 0.5);
        map.set(15, 2, 0.8);
        let modes = find_modes(&map, 1);
        assert_eq!((modes[0].x, modes[0].y), (4, 2));
        assert_eq!((modes[1].x, modes[1].y), (15, 2));
        assert!((modes[0].mass - 1.5).abs() < 1e-12);
    }
}
