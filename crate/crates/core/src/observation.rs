//! Egocentric local-map observations.
//!
//! A [`LocalMap`] stacks three binary channels centred on the robot with its
//! heading along image `+x`: dilated LiDAR hits, the robot footprint disc, and
//! a disc at the (clipped) goal position.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dilate, polar_to_image, GridImage, OCCUPIED};
use crate::pgm::{self, Meta};
use crate::sim::LidarScan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMapParams {
    pub height: usize,
    pub width: usize,
    /// Metres per pixel.
    pub resolution: f64,
    pub dilation_kernel: usize,
    /// Goal disc radius in pixels; `None` uses the robot footprint radius.
    pub goal_disc_radius_px: Option<u32>,
}

impl Default for LocalMapParams {
    fn default() -> Self {
        Self {
            height: 60,
            width: 60,
            resolution: 0.05,
            dilation_kernel: 5,
            goal_disc_radius_px: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalMap {
    pub obstacle: GridImage,
    pub position: GridImage,
    pub goal: GridImage,
}

impl LocalMap {
    pub fn channels(&self) -> [&GridImage; 3] {
        [&self.obstacle, &self.position, &self.goal]
    }

    /// Writes `<prefix>.obstacle.pgm`, `<prefix>.position.pgm`,
    /// `<prefix>.goal.pgm` and a shared `<prefix>.meta`.
    pub fn save(&self, prefix: &Path) -> Result<()> {
        for (name, img) in ["obstacle", "position", "goal"].iter().zip(self.channels()) {
            let pgm = pgm::Pgm {
                width: img.width(),
                height: img.height(),
                maxval: 255,
                samples: img.pixels().iter().map(|&p| u16::from(p)).collect(),
            };
            pgm::write_pgm_file(&pgm, &channel_path(prefix, name))?;
        }
        let meta_path = prefix.with_file_name(format!(
            "{}.meta",
            prefix.file_name().and_then(|s| s.to_str()).unwrap_or("local")
        ));
        Meta::with_resolution(self.obstacle.resolution()).save(&meta_path)
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        Ok(Self {
            obstacle: pgm::load_map(channel_path(prefix, "obstacle"))?,
            position: pgm::load_map(channel_path(prefix, "position"))?,
            goal: pgm::load_map(channel_path(prefix, "goal"))?,
        })
    }
}

fn channel_path(prefix: &Path, channel: &str) -> std::path::PathBuf {
    let name = prefix.file_name().and_then(|s| s.to_str()).unwrap_or("local");
    prefix.with_file_name(format!("{name}.{channel}.pgm"))
}

/// Hits mapped through [`polar_to_image`], out-of-raster hits dropped, then dilated.
/// No-return rays contribute nothing.
pub fn build_obstacle_map(scan: &LidarScan, params: &LocalMapParams) -> Result<GridImage> {
    let mut img = GridImage::zeros(params.width, params.height, params.resolution)?;
    for ret in scan.returns.iter().filter(|r| r.hit) {
        let (x, y) = polar_to_image(ret.rho, ret.theta, params.resolution, params.width, params.height);
        img.set_checked(x, y, OCCUPIED);
    }
    dilate(&img, params.dilation_kernel)
}

/// Footprint radius in pixels, rounded half away from zero.
pub fn footprint_radius_px(robot_radius: f64, resolution: f64) -> Result<u32> {
    let r = (robot_radius / resolution).round();
    if !(r >= 1.0) {
        return Err(Error::invalid(format!(
            "robot radius {robot_radius} m is below one pixel at {resolution} m/px"
        )));
    }
    Ok(r as u32)
}

/// Filled footprint disc centred at `(W/2, H/2)`.
pub fn build_position_map(robot_radius: f64, params: &LocalMapParams) -> Result<GridImage> {
    let r = footprint_radius_px(robot_radius, params.resolution)?;
    let mut img = GridImage::zeros(params.width, params.height, params.resolution)?;
    img.fill_disc((params.width / 2) as i64, (params.height / 2) as i64, i64::from(r), OCCUPIED);
    Ok(img)
}

/// `min(d, R W / (2 |cos a|), R H / (2 |sin a|))`, a zero denominator giving +inf.
pub fn clip_goal_distance(d: f64, alpha: f64, resolution: f64, width: usize, height: usize) -> f64 {
    let bound = |extent: usize, trig: f64| {
        let den = 2.0 * trig.abs();
        if den == 0.0 {
            f64::INFINITY
        } else {
            resolution * extent as f64 / den
        }
    };
    d.min(bound(width, alpha.cos())).min(bound(height, alpha.sin()))
}

/// Goal disc at the clipped goal position; the centre is clamped into the
/// raster so at least one pixel is always set.
pub fn build_goal_map(d: f64, alpha: f64, radius_px: u32, params: &LocalMapParams) -> Result<GridImage> {
    let clipped = clip_goal_distance(d, alpha, params.resolution, params.width, params.height);
    let (x, y) = polar_to_image(clipped, alpha, params.resolution, params.width, params.height);
    let cx = x.clamp(0, params.width as i64 - 1);
    let cy = y.clamp(0, params.height as i64 - 1);
    let mut img = GridImage::zeros(params.width, params.height, params.resolution)?;
    img.fill_disc(cx, cy, i64::from(radius_px), OCCUPIED);
    Ok(img)
}

pub fn assemble_local_map(
    scan: &LidarScan,
    robot_radius: f64,
    goal_polar: (f64, f64),
    params: &LocalMapParams,
) -> Result<LocalMap> {
    ObservationBuilder::new(params.clone(), robot_radius)?.build(scan, goal_polar)
}

/// Caches the constant position channel across time steps.
#[derive(Debug, Clone)]
pub struct ObservationBuilder {
    params: LocalMapParams,
    goal_radius_px: u32,
    position: GridImage,
}

impl ObservationBuilder {
    pub fn new(params: LocalMapParams, robot_radius: f64) -> Result<Self> {
        let footprint = footprint_radius_px(robot_radius, params.resolution)?;
        let position = build_position_map(robot_radius, &params)?;
        Ok(Self {
            goal_radius_px: params.goal_disc_radius_px.unwrap_or(footprint),
            params,
            position,
        })
    }

    pub fn params(&self) -> &LocalMapParams {
        &self.params
    }

    pub fn build(&self, scan: &LidarScan, (d, alpha): (f64, f64)) -> Result<LocalMap> {
        Ok(LocalMap {
            obstacle: build_obstacle_map(scan, &self.params)?,
            position: self.position.clone(),
            goal: build_goal_map(d, alpha, self.goal_radius_px, &self.params)?,
        })
    }
}

/// Velocity bounds used to normalise action values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub v_min: f64,
    pub v_max: f64,
    pub omega_min: f64,
    pub omega_max: f64,
}

impl Default for ActionBounds {
    fn default() -> Self {
        Self {
            v_min: 0.0,
            v_max: 0.25,
            omega_min: -1.0,
            omega_max: 1.0,
        }
    }
}

/// Two channels carrying normalised `v` and `omega` on the footprint disc.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMap {
    pub v: GridImage,
    pub omega: GridImage,
}

/// Normalised value `u` in `[0, 1]` maps to intensity `1 + round(254 u)`, so
/// the disc never vanishes; background stays 0.
pub fn encode_action_value(value: f64, min: f64, max: f64) -> Result<u8> {
    if !(max > min) {
        return Err(Error::invalid(format!("empty action range [{min}, {max}]")));
    }
    if !(min..=max).contains(&value) {
        return Err(Error::invalid(format!("action {value} outside [{min}, {max}]")));
    }
    let u = (value - min) / (max - min);
    Ok(1 + (254.0 * u).round() as u8)
}

pub fn build_action_map(v: f64, omega: f64, m_p: &GridImage, bounds: &ActionBounds) -> Result<ActionMap> {
    let vi = encode_action_value(v, bounds.v_min, bounds.v_max)?;
    let wi = encode_action_value(omega, bounds.omega_min, bounds.omega_max)?;
    let paint = |value: u8| {
        let pixels = m_p.pixels().iter().map(|&p| if p != 0 { value } else { 0 }).collect();
        GridImage::from_pixels(m_p.width(), m_p.height(), m_p.resolution(), pixels)
    };
    Ok(ActionMap {
        v: paint(vi)?,
        omega: paint(wi)?,
    })
}
