//! Finite pose spaces: grids of positions, optionally crossed with a set of
//! orientations and a geometric scale ladder.

use serde::{Deserialize, Serialize};

/// A single pose. Coordinates are grid cells; `orientation` indexes
/// `2π·k/K` and `scale` indexes the pose space's scale ladder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pose {
    pub x: u32,
    pub y: u32,
    pub orientation: u32,
    pub scale: u32,
}

impl Pose {
    pub fn at(x: u32, y: u32) -> Self {
        Pose { x, y, orientation: 0, scale: 0 }
    }

    pub fn oriented(x: u32, y: u32, orientation: u32) -> Self {
        Pose { x, y, orientation, scale: 0 }
    }

    pub fn scaled(x: u32, y: u32, scale: u32) -> Self {
        Pose { x, y, orientation: 0, scale }
    }
}

impl std::fmt::Display for Pose {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.orientation, self.scale)
    }
}

/// An enumerated pose space `width × height × orientations × |scales|`.
///
/// Poses are flattened as `((scale·H + y)·W + x)·K + orientation`, so all
/// orientations of one cell are adjacent and each scale forms a contiguous
/// slab.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSpace {
    width: u32,
    height: u32,
    orientations: u32,
    scales: Vec<f64>,
}

impl PoseSpace {
    /// A plain position grid with one orientation and unit scale.
    pub fn grid(width: u32, height: u32) -> Self {
        PoseSpace { width, height, orientations: 1, scales: vec![1.0] }
    }

    pub fn singleton() -> Self {
        Self::grid(1, 1)
    }

    pub fn with_orientations(mut self, orientations: u32) -> Self {
        self.orientations = orientations;
        self
    }

    /// Replaces the scale ladder. An empty ladder means a single unit scale.
    pub fn with_scales(mut self, scales: Vec<f64>) -> Self {
        self.scales = if scales.is_empty() { vec![1.0] } else { scales };
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn orientations(&self) -> u32 {
        self.orientations
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn num_scales(&self) -> u32 {
        self.scales.len() as u32
    }

    pub fn scale_value(&self, index: u32) -> f64 {
        self.scales[index as usize]
    }

    /// Number of poses. Zero when any dimension is zero.
    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize * self.orientations as usize * self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of distinct `(x, y)` cells.
    pub fn cells(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, pose: Pose) -> bool {
        pose.x < self.width
            && pose.y < self.height
            && pose.orientation < self.orientations
            && (pose.scale as usize) < self.scales.len()
    }

    /// Flat index of a pose, or `None` when it lies outside the space.
    pub fn index(&self, pose: Pose) -> Option<u32> {
        if !self.contains(pose) {
            return None;
        }
        let idx = ((pose.scale as u64 * self.height as u64 + pose.y as u64) * self.width as u64
            + pose.x as u64)
            * self.orientations as u64
            + pose.orientation as u64;
        Some(idx as u32)
    }

    /// Flat index of a signed position, used by kernels whose offsets may
    /// step off the grid.
    pub fn index_signed(&self, x: i64, y: i64, orientation: u32, scale: u32) -> Option<u32> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return None;
        }
        self.index(Pose { x: x as u32, y: y as u32, orientation, scale })
    }

    pub fn pose(&self, index: u32) -> Pose {
        debug_assert!((index as usize) < self.len());
        let k = self.orientations;
        let orientation = index % k;
        let cell = index / k;
        let x = cell % self.width;
        let rest = cell / self.width;
        let y = rest % self.height;
        let scale = rest / self.height;
        Pose { x, y, orientation, scale }
    }

    pub fn iter(&self) -> impl Iterator<Item = Pose> + '_ {
        (0..self.len() as u32).map(move |i| self.pose(i))
    }
}
