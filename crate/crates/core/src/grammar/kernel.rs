//! Geometry kernels `g(z | ω)`: categorical distributions over a child's
//! pose given the parent's pose.
//!
//! Every kernel enumerates its support for one parent pose at a time. Support
//! that falls outside the child's pose space is dropped and the remainder is
//! renormalized; when nothing is left the support is empty.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::pose::{Pose, PoseSpace};

/// Support entries: `(child pose index, probability)`, sorted by pose index
/// with no duplicates.
pub type Support = Vec<(u32, f64)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GeometryKernel {
    /// Explicit per-parent-pose tables, keyed by flat parent pose index.
    /// Parent poses without an entry have empty support.
    Table(BTreeMap<u32, Vec<(u32, f64)>>),
    /// Uniform over a list of integer offsets, optionally rotated by the
    /// parent's orientation.
    Offsets { offsets: Vec<(i32, i32)>, rotate: bool },
    /// Uniform box centred at `(x, y) + s·base` with half-extent `s·radius`
    /// (rounded to cells), crossed with a categorical over scale-ladder
    /// steps relative to the parent's scale index.
    Region { base: (f64, f64), radius: (f64, f64), scale_steps: Vec<(i32, f64)> },
}

impl GeometryKernel {
    pub fn offset(dx: i32, dy: i32) -> Self {
        GeometryKernel::Offsets { offsets: vec![(dx, dy)], rotate: false }
    }

    pub fn rotated_offset(dx: i32, dy: i32) -> Self {
        GeometryKernel::Offsets { offsets: vec![(dx, dy)], rotate: true }
    }

    /// Region kernel that keeps the parent's scale index.
    pub fn region(base: (f64, f64), radius: (f64, f64)) -> Self {
        GeometryKernel::Region { base, radius, scale_steps: vec![(0, 1.0)] }
    }

    /// Fills `out` with the normalized, in-bounds support for `parent_pose`.
    pub fn support_into(
        &self,
        parent_space: &PoseSpace,
        parent_pose: Pose,
        child_space: &PoseSpace,
        out: &mut Support,
    ) {
        out.clear();
        match self {
            GeometryKernel::Table(table) => {
                let Some(idx) = parent_space.index(parent_pose) else { return };
                if let Some(row) = table.get(&idx) {
                    for &(child, p) in row {
                        if (child as usize) < child_space.len() && p > 0.0 {
                            out.push((child, p));
                        }
                    }
                }
            }
            GeometryKernel::Offsets { offsets, rotate } => {
                if offsets.is_empty() {
                    return;
                }
                let w = 1.0 / offsets.len() as f64;
                let orientation = inherited(parent_pose.orientation, parent_space.orientations(), child_space.orientations());
                let scale = inherited(parent_pose.scale, parent_space.num_scales(), child_space.num_scales());
                for &(dx, dy) in offsets {
                    let (dx, dy) = if *rotate {
                        rotate_offset(dx, dy, parent_pose.orientation, parent_space.orientations())
                    } else {
                        (dx, dy)
                    };
                    let x = parent_pose.x as i64 + dx as i64;
                    let y = parent_pose.y as i64 + dy as i64;
                    if let Some(child) = child_space.index_signed(x, y, orientation, scale) {
                        out.push((child, w));
                    }
                }
            }
            GeometryKernel::Region { base, radius, scale_steps } => {
                let s = parent_space.scale_value(parent_pose.scale);
                let cx = parent_pose.x as i64 + (s * base.0).round() as i64;
                let cy = parent_pose.y as i64 + (s * base.1).round() as i64;
                let rx = (s * radius.0).round().max(0.0) as i64;
                let ry = (s * radius.1).round().max(0.0) as i64;
                let cells = ((2 * rx + 1) * (2 * ry + 1)) as f64;
                let orientation = inherited(parent_pose.orientation, parent_space.orientations(), child_space.orientations());
                for &(step, p) in scale_steps {
                    let child_scale = parent_pose.scale as i64 + step as i64;
                    if p <= 0.0 || child_scale < 0 || child_scale >= child_space.num_scales() as i64 {
                        continue;
                    }
                    for y in cy - ry..=cy + ry {
                        for x in cx - rx..=cx + rx {
                            if let Some(child) =
                                child_space.index_signed(x, y, orientation, child_scale as u32)
                            {
                                out.push((child, p / cells));
                            }
                        }
                    }
                }
            }
        }
        canonicalize(out);
    }

    pub fn support(&self, parent_space: &PoseSpace, parent_pose: Pose, child_space: &PoseSpace) -> Support {
        let mut out = Vec::new();
        self.support_into(parent_space, parent_pose, child_space, &mut out);
        out
    }
}

/// Child orientation/scale index: carried over when both spaces have the
/// same number of orientations (scales), otherwise 0.
fn inherited(parent_value: u32, parent_count: u32, child_count: u32) -> u32 {
    if parent_count == child_count {
        parent_value
    } else {
        0
    }
}

/// Sorts by pose, merges duplicates and renormalizes to sum 1.
fn canonicalize(out: &mut Support) {
    if out.is_empty() {
        return;
    }
    out.sort_unstable_by_key(|&(z, _)| z);
    let mut merged: Support = Vec::with_capacity(out.len());
    for &(z, p) in out.iter() {
        match merged.last_mut() {
            Some(last) if last.0 == z => last.1 += p,
            _ => merged.push((z, p)),
        }
    }
    let total: f64 = merged.iter().map(|&(_, p)| p).sum();
    if total > 0.0 {
        for entry in &mut merged {
            entry.1 /= total;
        }
    } else {
        merged.clear();
    }
    *out = merged;
}

/// Rotates an integer offset by `orientation · 2π / orientations`.
///
/// With 8 orientations the offset walks its Chebyshev ring: a ring of radius
/// `r` has `8r` cells and one 45° step advances `r` cells, which maps the
/// 8-neighbourhood onto itself exactly. With 4 orientations the rotation is
/// exact. Other counts round the real rotation.
pub fn rotate_offset(dx: i32, dy: i32, orientation: u32, orientations: u32) -> (i32, i32) {
    if orientations <= 1 || orientation.is_multiple_of(orientations) || (dx == 0 && dy == 0) {
        return (dx, dy);
    }
    let k = orientation % orientations;
    match orientations {
        8 => {
            let r = dx.abs().max(dy.abs());
            let t = ring_position(dx, dy, r);
            ring_offset((t + k as i32 * r).rem_euclid(8 * r), r)
        }
        4 => {
            let (mut x, mut y) = (dx, dy);
            for _ in 0..k {
                (x, y) = (-y, x);
            }
            (x, y)
        }
        n => {
            let a = std::f64::consts::TAU * k as f64 / n as f64;
            let (s, c) = a.sin_cos();
            let x = dx as f64 * c - dy as f64 * s;
            let y = dx as f64 * s + dy as f64 * c;
            (x.round() as i32, y.round() as i32)
        }
    }
}

fn ring_position(x: i32, y: i32, r: i32) -> i32 {
    if x == r && (0..r).contains(&y) {
        y
    } else if y == r && x > -r {
        r + (r - x)
    } else if x == -r && y > -r {
        3 * r + (r - y)
    } else if y == -r && x < r {
        5 * r + (x + r)
    } else {
        7 * r + (y + r)
    }
}

fn ring_offset(t: i32, r: i32) -> (i32, i32) {
    if t < r {
        (r, t)
    } else if t < 3 * r {
        (r - (t - r), r)
    } else if t < 5 * r {
        (-r, r - (t - 3 * r))
    } else if t < 7 * r {
        (t - 5 * r - r, -r)
    } else {
        (r, t - 7 * r - r)
    }
}
