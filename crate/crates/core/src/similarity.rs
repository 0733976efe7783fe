//! Global and visitation-weighted local scene similarity.
//!
//! The global score averages, over sliding-window sub-templates of the test
//! map, the best rotated match against the training map. The local score
//! matches egocentric obstacle maps collected in a test scene against the
//! training scene's global obstacle map, weighting each placement by how often
//! training trajectories visited the cell under the template centre.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dilate, extract_window, GridImage};
use crate::matching::{angle_range, best_match_rotated_prepared, best_weighted_match, PreparedImage};
use crate::pgm::{self, Meta, Pgm};
use crate::scene::world_to_cell;

pub const DEFAULT_WINDOW: usize = 60;
pub const DEFAULT_STRIDE: usize = 30;
pub const DEFAULT_N_MAX: u32 = 100;
pub const N_MAX_KEY: &str = "n_max";

/// `{10, 20, ..., 360}` degrees.
pub fn default_global_angles() -> Vec<f64> {
    angle_range(10.0, 10.0, 360.0)
}

/// `{1, 2, ..., 360}` degrees.
pub fn default_local_angles() -> Vec<f64> {
    angle_range(1.0, 1.0, 360.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSimilarityParams {
    pub window_w: usize,
    pub window_h: usize,
    pub stride_x: usize,
    pub stride_y: usize,
    pub angles: Vec<f64>,
    /// Square dilation kernel applied to both maps first; 1 leaves them untouched.
    pub dilation_kernel: usize,
}

impl Default for GlobalSimilarityParams {
    fn default() -> Self {
        Self {
            window_w: DEFAULT_WINDOW,
            window_h: DEFAULT_WINDOW,
            stride_x: DEFAULT_STRIDE,
            stride_y: DEFAULT_STRIDE,
            angles: default_global_angles(),
            dilation_kernel: 1,
        }
    }
}

/// One scored template (global) or local map (local).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    /// Position in the report's ordering.
    pub index: usize,
    /// Top-left pixel of the template in the map it was cut from; `(0, 0)`
    /// for local maps.
    pub source_x: usize,
    pub source_y: usize,
    /// Best placement in the searched map.
    pub x: usize,
    pub y: usize,
    pub phi: f64,
    /// Raw correlation at the best placement.
    pub ncc: f64,
    /// Weight at the placement centre (1 for the global score).
    pub weight: f64,
    /// The maximised quantity: `weight * ncc`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub entries: Vec<ScoreEntry>,
    /// Inputs that had no valid placement at any angle.
    pub skipped: Vec<usize>,
    /// Arithmetic mean of `entries[..].score`.
    pub aggregate: f64,
    pub angles: Vec<f64>,
    pub dilation_kernel: usize,
    /// Extra parameters echoed for provenance (window, stride, n_max, ...).
    pub params: Vec<(String, String)>,
}

impl SimilarityReport {
    fn from_entries(
        entries: Vec<ScoreEntry>,
        skipped: Vec<usize>,
        angles: &[f64],
        dilation_kernel: usize,
        params: Vec<(String, String)>,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptySimilarity);
        }
        let aggregate = entries.iter().map(|e| e.score).sum::<f64>() / entries.len() as f64;
        Ok(Self {
            entries,
            skipped,
            aggregate,
            angles: angles.to_vec(),
            dilation_kernel,
            params,
        })
    }

    /// CSV with header `template,x,y,phi,score` (best placement per entry).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["template", "x", "y", "phi", "score"])?;
        for e in &self.entries {
            w.write_record([
                e.index.to_string(),
                e.x.to_string(),
                e.y.to_string(),
                e.phi.to_string(),
                e.score.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

/// Mean best rotated-match score of the test map's sliding-window templates
/// against the training map.
pub fn global_scene_similarity(
    m_train: &GridImage,
    m_test: &GridImage,
    params: &GlobalSimilarityParams,
) -> Result<SimilarityReport> {
    let (w, h) = (params.window_w, params.window_h);
    if w == 0 || h == 0 || params.stride_x == 0 || params.stride_y == 0 {
        return Err(Error::invalid("window and strides must be >= 1"));
    }
    if w > m_test.width() || h > m_test.height() {
        return Err(Error::invalid("window does not fit in the test map"));
    }
    if w > m_train.width() || h > m_train.height() {
        return Err(Error::invalid("window does not fit in the training map"));
    }
    if params.angles.is_empty() {
        return Err(Error::invalid("angle list is empty"));
    }
    let train = dilate(m_train, params.dilation_kernel)?;
    let test = dilate(m_test, params.dilation_kernel)?;
    let prepared = PreparedImage::new(&train);

    let n_x = (test.width() - w) / params.stride_x + 1;
    let n_y = (test.height() - h) / params.stride_y + 1;
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    let mut index = 0;
    for i in 0..n_x {
        for j in 0..n_y {
            let (sx, sy) = (i * params.stride_x, j * params.stride_y);
            let template = extract_window(&test, sx, sy, w, h)?;
            match best_match_rotated_prepared(&prepared, &template, &params.angles) {
                Ok(m) => entries.push(ScoreEntry {
                    index,
                    source_x: sx,
                    source_y: sy,
                    x: m.x,
                    y: m.y,
                    phi: m.phi,
                    ncc: m.score,
                    weight: 1.0,
                    score: m.score,
                }),
                Err(Error::NoValidPlacement) => skipped.push(index),
                Err(e) => return Err(e),
            }
            index += 1;
        }
    }
    let echo = vec![
        ("window".to_string(), format!("{w}x{h}")),
        ("stride".to_string(), format!("{}x{}", params.stride_x, params.stride_y)),
    ];
    SimilarityReport::from_entries(entries, skipped, &params.angles, params.dilation_kernel, echo)
}

/// Visit counts per cell of the training map.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalCounts {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub counts: Vec<u32>,
    /// Trajectory points that fell outside the map.
    pub skipped: usize,
}

impl ArrivalCounts {
    pub fn zeros_like(grid: &GridImage) -> Self {
        Self {
            width: grid.width(),
            height: grid.height(),
            resolution: grid.resolution(),
            counts: vec![0; grid.width() * grid.height()],
            skipped: 0,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.counts[y * self.width + x]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Adds one arrival for the world point, or records it as skipped.
    pub fn add_point(&mut self, x: f64, y: f64) {
        let wm = self.width as f64 * self.resolution;
        let hm = self.height as f64 * self.resolution;
        match world_to_cell(wm, hm, self.resolution, x, y) {
            Some((c, r)) if c < self.width && r < self.height => self.counts[r * self.width + c] += 1,
            _ => self.skipped += 1,
        }
    }

    /// Persists counts clipped to `n_max` as a PGM plus a `.meta` carrying
    /// the resolution and `n_max`.
    pub fn save(&self, path: impl AsRef<Path>, n_max: u32) -> Result<()> {
        let path = path.as_ref();
        if n_max == 0 || n_max > u32::from(u16::MAX) {
            return Err(Error::invalid(format!("n_max must be in 1..=65535, got {n_max}")));
        }
        let maxval = if n_max <= 255 { 255 } else { u16::MAX };
        let pgm = Pgm {
            width: self.width,
            height: self.height,
            maxval,
            samples: self.counts.iter().map(|&c| c.min(n_max) as u16).collect(),
        };
        pgm::write_pgm_file(&pgm, path)?;
        let mut meta = Meta::with_resolution(self.resolution);
        meta.set(N_MAX_KEY, n_max);
        meta.save(&pgm::meta_path(path))
    }

    /// Loads a counts raster, returning the counts and the stored `n_max`.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, u32)> {
        let path = path.as_ref();
        let pgm = pgm::read_pgm_file(path)?;
        let meta = pgm::load_meta_for(path)?;
        let parse_err = |what: &str| Error::Parse {
            path: pgm::meta_path(path),
            line: 1,
            offset: 0,
            message: format!("missing or invalid {what}"),
        };
        let resolution = meta.resolution().ok_or_else(|| parse_err(pgm::RESOLUTION_KEY))?;
        let n_max: u32 = meta
            .get(N_MAX_KEY)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(N_MAX_KEY))?;
        Ok((
            Self {
                width: pgm.width,
                height: pgm.height,
                resolution,
                counts: pgm.samples.iter().map(|&s| u32::from(s)).collect(),
                skipped: 0,
            },
            n_max,
        ))
    }
}

/// One increment per (trajectory, timestep) in the cell containing the point.
/// `grid` supplies the geometry (row 0 at the top of the world extent).
pub fn accumulate_arrivals(trajectories: &[Vec<(f64, f64)>], grid: &GridImage) -> ArrivalCounts {
    let mut counts = ArrivalCounts::zeros_like(grid);
    for traj in trajectories {
        for &(x, y) in traj {
            counts.add_point(x, y);
        }
    }
    counts
}

/// Per-cell importance in `[0.5, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub n_max: u32,
    pub values: Vec<f64>,
}

impl WeightMatrix {
    /// Constant weight over a map's geometry.
    pub fn uniform(grid: &GridImage, value: f64) -> Self {
        Self {
            width: grid.width(),
            height: grid.height(),
            resolution: grid.resolution(),
            n_max: DEFAULT_N_MAX,
            values: vec![value; grid.width() * grid.height()],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Weight raster rendered to 8-bit intensities (`round(255 * w)`).
    pub fn to_image(&self) -> Result<GridImage> {
        GridImage::from_pixels(
            self.width,
            self.height,
            self.resolution,
            self.values.iter().map(|v| (v * 255.0).round() as u8).collect(),
        )
    }

    /// Inverse of [`WeightMatrix::to_image`], clipping to `[0.5, 1]`.
    pub fn from_image(img: &GridImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            resolution: img.resolution(),
            n_max: DEFAULT_N_MAX,
            values: img
                .pixels()
                .iter()
                .map(|&p| (f64::from(p) / 255.0).clamp(0.5, 1.0))
                .collect(),
        }
    }
}

impl WeightMatrix {
    /// Loads weights from disk. A raster whose meta carries `n_max` is read as
    /// arrival counts; anything else as a weight image.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta = pgm::load_meta_for(path)?;
        if meta.get(N_MAX_KEY).is_some() {
            let (counts, n_max) = ArrivalCounts::load(path)?;
            weight_matrix(&counts, n_max)
        } else {
            Ok(Self::from_image(&pgm::load_map(path)?))
        }
    }
}

/// `clip(clip(count, 0, n_max) / n_max, 0.5, 1)` for every cell.
pub fn weight_matrix(counts: &ArrivalCounts, n_max: u32) -> Result<WeightMatrix> {
    if n_max < 1 {
        return Err(Error::invalid("n_max must be >= 1"));
    }
    let values = counts
        .counts
        .iter()
        .map(|&c| (f64::from(c.min(n_max)) / f64::from(n_max)).clamp(0.5, 1.0))
        .collect();
    Ok(WeightMatrix {
        width: counts.width,
        height: counts.height,
        resolution: counts.resolution,
        n_max,
        values,
    })
}

/// Mean over local obstacle maps of `max_{x,y,phi} Wt(x + W/2, y + H/2) * NCC`.
pub fn weighted_scene_score(
    m_global: &GridImage,
    local_maps: &[GridImage],
    wt: &WeightMatrix,
    angles: &[f64],
) -> Result<SimilarityReport> {
    if wt.width != m_global.width() || wt.height != m_global.height() {
        return Err(Error::invalid("weight matrix geometry does not match the global map"));
    }
    let Some(first) = local_maps.first() else {
        return Err(Error::EmptySimilarity);
    };
    if local_maps
        .iter()
        .any(|m| m.width() != first.width() || m.height() != first.height())
    {
        return Err(Error::invalid("local maps must share one size"));
    }
    let prepared = PreparedImage::new(m_global);
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (index, local) in local_maps.iter().enumerate() {
        match best_weighted_match(&prepared, local, angles, |x, y| wt.get(x, y)) {
            Ok(m) => entries.push(ScoreEntry {
                index,
                source_x: 0,
                source_y: 0,
                x: m.placement.x,
                y: m.placement.y,
                phi: m.placement.phi,
                ncc: m.placement.score,
                weight: m.weight,
                score: m.value,
            }),
            Err(Error::NoValidPlacement) => {
                warn!("local map {index} has no valid placement; skipped");
                skipped.push(index);
            }
            Err(e) => return Err(e),
        }
    }
    let echo = vec![(N_MAX_KEY.to_string(), wt.n_max.to_string())];
    SimilarityReport::from_entries(entries, skipped, angles, 1, echo)
}

/// Relative score: `ss_test - ss_train`.
pub fn local_scene_similarity(ss_test: f64, ss_train: f64) -> f64 {
    ss_test - ss_train
}
