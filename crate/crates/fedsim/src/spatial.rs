//! Spatial data-partition model.
//!
//! The world is an `L x L` square of uniformly placed UEs, overlaid with data
//! points drawn from a homogeneous Poisson point process of intensity `lambda`
//! on the slightly larger square `[-(L+R)/2, (L+R)/2]^2` (the extension keeps
//! boundary UEs from seeing a truncated disc). A UE captures every point within
//! its sensing radius `R`, so neighboring UEs share samples and the per-UE
//! sample count is Poisson with mean `lambda * pi * R^2`.
//!
//! Labels are attached either uniformly at random (IID) or by vertical strip
//! (region labeling): the extended square is cut into 10 equal strips along x
//! and every point in a strip gets the strip index as its label, which gives
//! UEs in different areas disjoint label sets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

/// World geometry and sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    /// Side length of the UE deployment square.
    pub side_length: f64,
    /// Capture radius of every UE.
    pub sensing_radius: f64,
    /// Expected data points per unit area.
    pub intensity: f64,
    /// Number of UEs.
    pub num_ues: usize,
    /// Number of label classes.
    pub num_classes: usize,
    /// Base seed for all world randomness.
    pub seed: u64,
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.side_length.is_finite() || self.side_length <= 0.0 {
            return Err(Error::config("side_length must be positive and finite"));
        }
        if !self.sensing_radius.is_finite() || self.sensing_radius <= 0.0 {
            return Err(Error::config("sensing_radius must be positive and finite"));
        }
        if !self.intensity.is_finite() || self.intensity < 0.0 {
            return Err(Error::config("intensity must be non-negative and finite"));
        }
        if self.num_ues < 1 {
            return Err(Error::config("num_ues must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        Ok(())
    }

    /// Half-extent of the data region `S_D`.
    pub fn data_half_extent(&self) -> f64 {
        (self.side_length + self.sensing_radius) / 2.0
    }
}

/// How point labels are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Labeling {
    /// Labels drawn independently and uniformly over the classes.
    Iid,
    /// Label = index of the vertical strip containing the point.
    Region,
}

/// UE locations, one per UE, inside the deployment square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UePlacement {
    pub positions: Vec<[f64; 2]>,
}

/// Data point locations with (optional) labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub positions: Vec<[f64; 2]>,
    /// One label per point once a labeling scheme has run; empty before that.
    pub labels: Vec<u8>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// A fully generated world: UEs, labeled points, and per-UE capture lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialPartition {
    pub world: WorldConfig,
    pub labeling: Labeling,
    pub ues: UePlacement,
    pub points: PointCloud,
    /// For each UE, the sorted indices of points within its sensing radius.
    pub capture_lists: Vec<Vec<u32>>,
}

/// Draws one uniform position per UE over the deployment square.
pub fn sample_ue_positions(config: &WorldConfig, rng: &mut ChaCha8Rng) -> UePlacement {
    let half = config.side_length / 2.0;
    let positions = (0..config.num_ues)
        .map(|_| {
            let x = rng.random_range(-half..=half);
            let y = rng.random_range(-half..=half);
            [x, y]
        })
        .collect();
    UePlacement { positions }
}

/// Draws a homogeneous Poisson point process over the extended data region:
/// the point count is Poisson with mean `intensity * (L+R)^2`, and given the
/// count the positions are i.i.d. uniform.
pub fn sample_hppp(config: &WorldConfig, rng: &mut ChaCha8Rng) -> PointCloud {
    let extent = 2.0 * config.data_half_extent();
    let mean = config.intensity * extent * extent;
    let count = if mean > 0.0 {
        let poisson = Poisson::new(mean).expect("validated intensity");
        poisson.sample(rng) as u64
    } else {
        0
    };
    let half = config.data_half_extent();
    let positions = (0..count)
        .map(|_| {
            let x = rng.random_range(-half..=half);
            let y = rng.random_range(-half..=half);
            [x, y]
        })
        .collect();
    PointCloud { positions, labels: Vec::new() }
}

/// Computes the per-UE capture lists: point `p` is in UE `k`'s list iff the
/// Euclidean distance between them is no greater than `radius` (boundary
/// inclusive). Lists come out sorted and duplicate-free; a point inside
/// several UEs' radii appears in each of their lists.
pub fn assign_points_to_ues(
    ues: &UePlacement,
    points: &PointCloud,
    radius: f64,
) -> Vec<Vec<u32>> {
    let mut lists = vec![Vec::new(); ues.positions.len()];
    if ues.positions.is_empty() || points.is_empty() {
        return lists;
    }

    // Bucket UEs into a grid with cell size >= radius so each point only has
    // to examine the 3x3 block of cells around it.
    let min_x = ues.positions.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let min_y = ues.positions.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_x = ues.positions.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let max_y = ues.positions.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let cell = radius.max(1e-12);
    let cols = (((max_x - min_x) / cell).floor() as usize + 1).max(1);
    let rows = (((max_y - min_y) / cell).floor() as usize + 1).max(1);
    let cell_of = |p: &[f64; 2]| -> (usize, usize) {
        let cx = (((p[0] - min_x) / cell).floor() as isize).clamp(0, cols as isize - 1) as usize;
        let cy = (((p[1] - min_y) / cell).floor() as isize).clamp(0, rows as isize - 1) as usize;
        (cx, cy)
    };
    let mut grid: Vec<Vec<u32>> = vec![Vec::new(); cols * rows];
    for (k, pos) in ues.positions.iter().enumerate() {
        let (cx, cy) = cell_of(pos);
        grid[cy * cols + cx].push(k as u32);
    }

    let r2 = radius * radius;
    // Iterating points in index order keeps every capture list sorted.
    for (p_idx, p) in points.positions.iter().enumerate() {
        let cx = ((p[0] - min_x) / cell).floor() as isize;
        let cy = ((p[1] - min_y) / cell).floor() as isize;
        for gy in (cy - 1).max(0)..=(cy + 1).min(rows as isize - 1) {
            for gx in (cx - 1).max(0)..=(cx + 1).min(cols as isize - 1) {
                for &k in &grid[gy as usize * cols + gx as usize] {
                    let z = &ues.positions[k as usize];
                    let dx = z[0] - p[0];
                    let dy = z[1] - p[1];
                    if dx * dx + dy * dy <= r2 {
                        lists[k as usize].push(p_idx as u32);
                    }
                }
            }
        }
    }
    lists
}

/// Expected per-UE sample count: `lambda * pi * R^2`.
pub fn expected_samples(intensity: f64, radius: f64) -> f64 {
    intensity * std::f64::consts::PI * radius * radius
}

/// Area of the intersection (lens) of two discs of radius `radius` whose
/// centers are `distance` apart; zero once the discs no longer overlap.
pub fn circle_intersection_area(distance: f64, radius: f64) -> f64 {
    debug_assert!(distance >= 0.0 && radius > 0.0);
    if distance >= 2.0 * radius {
        return 0.0;
    }
    2.0 * radius * radius * (distance / (2.0 * radius)).acos()
        - (distance / 2.0) * (4.0 * radius * radius - distance * distance).sqrt()
}

/// Labels every point independently and uniformly over the classes.
pub fn label_points_iid(points: &mut PointCloud, num_classes: usize, rng: &mut ChaCha8Rng) {
    debug_assert!(num_classes >= 1 && num_classes <= u8::MAX as usize + 1);
    points.labels = points
        .positions
        .iter()
        .map(|_| rng.random_range(0..num_classes) as u8)
        .collect();
}

/// Region labeling: the extended data square is divided into 10 equal
/// vertical strips and each point's label is its strip index, clamped into
/// `[0, 9]` at the right edge.
pub fn label_points_region(points: &mut PointCloud, world: &WorldConfig) {
    assert_eq!(world.num_classes, 10, "region labeling defines exactly 10 strips");
    let half = world.data_half_extent();
    let strip = 2.0 * half / 10.0;
    points.labels = points
        .positions
        .iter()
        .map(|p| (((p[0] + half) / strip).floor() as i64).clamp(0, 9) as u8)
        .collect();
}

impl SpatialPartition {
    /// Generates a full world from a config: UE placement, HPPP points,
    /// labels, and capture lists, each on its own seed-derived stream.
    pub fn generate(config: &WorldConfig, labeling: Labeling) -> Result<Self> {
        config.validate()?;
        if labeling == Labeling::Region && config.num_classes != 10 {
            return Err(Error::config("region labeling requires num_classes = 10"));
        }
        let ues = sample_ue_positions(config, &mut stream(config.seed, Domain::UePositions, 0));
        let mut points = sample_hppp(config, &mut stream(config.seed, Domain::Points, 0));
        match labeling {
            Labeling::Iid => label_points_iid(
                &mut points,
                config.num_classes,
                &mut stream(config.seed, Domain::Labels, 0),
            ),
            Labeling::Region => label_points_region(&mut points, config),
        }
        let capture_lists = assign_points_to_ues(&ues, &points, config.sensing_radius);
        Ok(SpatialPartition { world: config.clone(), labeling, ues, points, capture_lists })
    }

    /// Per-UE captured sample count (`D_k`).
    pub fn capture_count(&self, ue: usize) -> usize {
        self.capture_lists[ue].len()
    }

    /// Distinct labels among the points captured by `ue`, as a bitmask.
    pub fn label_mask(&self, ue: usize) -> u128 {
        debug_assert!(self.world.num_classes <= 128);
        let mut mask = 0u128;
        for &p in &self.capture_lists[ue] {
            mask |= 1u128 << self.points.labels[p as usize];
        }
        mask
    }

    /// Serializes the partition to pretty JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let partition: SpatialPartition = serde_json::from_str(text)?;
        partition.world.validate()?;
        Ok(partition)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
