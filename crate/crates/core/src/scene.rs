//! Obstacle scenes in world metres and their rasterization.
//!
//! Scene files are a single JSON document:
//!
//! ```json
//! {
//!   "extent_m": [5.0, 5.0],
//!   "walls": true,
//!   "obstacles": [
//!     {"type": "rect", "cx": 1.5, "cy": 3.5, "w": 0.6, "h": 0.4},
//!     {"type": "circle", "cx": 3.5, "cy": 1.5, "r": 0.3}
//!   ]
//! }
//! ```
//!
//! `walls` is optional and defaults to `true`; it encloses the extent with a
//! boundary the robot can collide with and the LiDAR can see.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridImage, OCCUPIED};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Obstacle {
    Rect { cx: f64, cy: f64, w: f64, h: f64 },
    Circle { cx: f64, cy: f64, r: f64 },
}

impl Obstacle {
    /// Closed point-in-primitive test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Obstacle::Rect { cx, cy, w, h } => {
                (x - cx).abs() <= w / 2.0 && (y - cy).abs() <= h / 2.0
            }
            Obstacle::Circle { cx, cy, r } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= r * r
            }
        }
    }

    /// Axis-aligned bounds `(xmin, ymin, xmax, ymax)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Obstacle::Rect { cx, cy, w, h } => {
                (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
            }
            Obstacle::Circle { cx, cy, r } => (cx - r, cy - r, cx + r, cy + r),
        }
    }
}

fn default_walls() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Width and height of the scene in metres.
    pub extent_m: [f64; 2],
    #[serde(default = "default_walls")]
    pub walls: bool,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl SceneSpec {
    pub fn new(width: f64, height: f64, obstacles: Vec<Obstacle>) -> Result<Self> {
        let scene = SceneSpec {
            extent_m: [width, height],
            walls: true,
            obstacles,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn width(&self) -> f64 {
        self.extent_m[0]
    }

    pub fn height(&self) -> f64 {
        self.extent_m[1]
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.extent_m;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::invalid(format!("scene extent must be positive, got {w}x{h}")));
        }
        const SLACK: f64 = 1e-9;
        for (i, o) in self.obstacles.iter().enumerate() {
            let positive = match *o {
                Obstacle::Rect { w, h, .. } => w > 0.0 && h > 0.0,
                Obstacle::Circle { r, .. } => r > 0.0,
            };
            if !positive {
                return Err(Error::invalid(format!("obstacle {i} has non-positive size")));
            }
            let (x0, y0, x1, y1) = o.bounds();
            if x0 < -SLACK || y0 < -SLACK || x1 > w + SLACK || y1 > h + SLACK {
                return Err(Error::invalid(format!("obstacle {i} lies outside the extent")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: SceneSpec = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scene: SceneSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            offset: line_col_to_offset(&text, e.line(), e.column()),
            message: e.to_string(),
        })?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    /// True when the world point lies inside or on an obstacle.
    pub fn occupied(&self, x: f64, y: f64) -> bool {
        self.obstacles.iter().any(|o| o.contains(x, y))
    }

    /// Rasterizes the scene: a pixel is occupied iff its cell centre lies in
    /// an obstacle, or the pixel is on the outer ring when `walls` is set.
    pub fn rasterize(&self, resolution: f64) -> Result<GridImage> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::invalid(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        let width = (self.width() / resolution).round().max(1.0) as usize;
        let height = (self.height() / resolution).round().max(1.0) as usize;
        let mut img = GridImage::zeros(width, height, resolution)?;
        for row in 0..height {
            let wy = self.height() - (row as f64 + 0.5) * resolution;
            for col in 0..width {
                let wx = (col as f64 + 0.5) * resolution;
                let ring = row == 0 || col == 0 || row + 1 == height || col + 1 == width;
                if (self.walls && ring) || self.occupied(wx, wy) {
                    img.set(col, row, OCCUPIED);
                }
            }
        }
        Ok(img)
    }

    /// Cell `(col, row)` of a raster with this extent that contains the world
    /// point, or `None` when the point is outside the extent.
    pub fn world_to_cell(&self, x: f64, y: f64, resolution: f64) -> Option<(usize, usize)> {
        world_to_cell(self.width(), self.height(), resolution, x, y)
    }
}

/// Maps a world point to raster cell indices for a map of the given metric
/// extent (row 0 at the top, i.e. at world `y = height`).
pub fn world_to_cell(
    width_m: f64,
    height_m: f64,
    resolution: f64,
    x: f64,
    y: f64,
) -> Option<(usize, usize)> {
    if !(x >= 0.0 && y >= 0.0 && x < width_m && y < height_m) {
        return None;
    }
    let col = (x / resolution).floor() as usize;
    let row = ((height_m - y) / resolution).floor() as usize;
    Some((col, row))
}

fn line_col_to_offset(text: &str, line: usize, column: usize) -> usize {
    text.split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum::<usize>()
        + column.saturating_sub(1)
}
