//! Raster maps and the pixel operations shared by every other module.
//!
//! A [`GridImage`] is a row-major 8-bit raster with a metric resolution.
//! Row 0 is the top of the image; for world-frame maps it corresponds to the
//! largest world `y`, so that robot-frame local maps (built with
//! [`polar_to_image`]) and world-frame maps share one orientation convention.

use crate::error::{Error, Result};

/// Intensity of an occupied cell.
pub const OCCUPIED: u8 = 255;
/// Intensity of a free cell.
pub const FREE: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    width: usize,
    height: usize,
    resolution: f64,
    pixels: Vec<u8>,
}

impl GridImage {
    /// A raster filled with `value`.
    pub fn filled(width: usize, height: usize, resolution: f64, value: u8) -> Result<Self> {
        Self::from_pixels(width, height, resolution, vec![value; width * height])
    }

    pub fn zeros(width: usize, height: usize, resolution: f64) -> Result<Self> {
        Self::filled(width, height, resolution, FREE)
    }

    pub fn from_pixels(
        width: usize,
        height: usize,
        resolution: f64,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::invalid(format!(
                "resolution must be positive and finite, got {resolution}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "pixel buffer has {} values, expected {}x{}={}",
                pixels.len(),
                width,
                height,
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            resolution,
            pixels,
        })
    }

    /// Builds a raster from a row-major nested slice, mostly useful in tests.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R], resolution: f64) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut pixels = Vec::with_capacity(width * height);
        for row in rows {
            let row = row.as_ref();
            if row.len() != width {
                return Err(Error::invalid("ragged rows"));
            }
            pixels.extend_from_slice(row);
        }
        Self::from_pixels(width, height, resolution, pixels)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    /// Sets the pixel if `(x, y)` is inside the raster; returns whether it was.
    pub fn set_checked(&mut self, x: i64, y: i64, value: u8) -> bool {
        if self.contains(x, y) {
            self.set(x as usize, y as usize, value);
            true
        } else {
            false
        }
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    pub fn count_nonzero(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }

    /// Coordinates of every non-zero pixel in row-major order.
    pub fn nonzero(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for (x, &p) in self.row(y).iter().enumerate() {
                if p != 0 {
                    out.push((x, y));
                }
            }
        }
        out
    }

    pub fn is_constant(&self) -> bool {
        self.pixels.windows(2).all(|w| w[0] == w[1])
    }

    pub fn same_geometry(&self, other: &GridImage) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.resolution == other.resolution
    }

    /// Draws a filled disc of integer `radius` pixels centred on `(cx, cy)`.
    /// A pixel belongs to the disc when its squared distance to the centre is
    /// at most `radius^2`; pixels outside the raster are cropped.
    pub fn fill_disc(&mut self, cx: i64, cy: i64, radius: i64, value: u8) {
        let r2 = radius * radius;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy <= r2 {
                    self.set_checked(cx + dx, cy + dy, value);
                }
            }
        }
    }

    /// Pixel-wise maximum of two rasters of identical geometry.
    pub fn max_with(&self, other: &GridImage) -> Result<GridImage> {
        if !self.same_geometry(other) {
            return Err(Error::invalid("max_with: geometry mismatch"));
        }
        let pixels = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| *a.max(b))
            .collect();
        GridImage::from_pixels(self.width, self.height, self.resolution, pixels)
    }
}

/// Converts a robot-frame polar point to local-map pixel coordinates.
///
/// `x = rho cos(theta) / res + width / 2`, `y = -rho sin(theta) / res + height / 2`,
/// rounded half away from zero. The result may fall outside the raster.
pub fn polar_to_image(
    rho: f64,
    theta: f64,
    resolution: f64,
    width: usize,
    height: usize,
) -> (i64, i64) {
    let x = rho * theta.cos() / resolution + width as f64 / 2.0;
    let y = -rho * theta.sin() / resolution + height as f64 / 2.0;
    (x.round() as i64, y.round() as i64)
}

/// Grey-level dilation with a square `kernel_size` window; outside pixels count as 0.
pub fn dilate(img: &GridImage, kernel_size: usize) -> Result<GridImage> {
    if kernel_size == 0 || kernel_size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "dilation kernel must be odd and >= 1, got {kernel_size}"
        )));
    }
    if kernel_size == 1 {
        return Ok(img.clone());
    }
    let half = kernel_size / 2;
    let (w, h) = (img.width, img.height);

    // The square max filter is separable: rows first, then columns.
    let mut horizontal = vec![0u8; w * h];
    for y in 0..h {
        let row = img.row(y);
        for x in 0..w {
            let lo = x.saturating_sub(half);
            let hi = (x + half).min(w - 1);
            horizontal[y * w + x] = row[lo..=hi].iter().copied().max().unwrap_or(0);
        }
    }
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(half);
        let hi = (y + half).min(h - 1);
        for x in 0..w {
            let mut m = 0u8;
            for yy in lo..=hi {
                m = m.max(horizontal[yy * w + x]);
            }
            out[y * w + x] = m;
        }
    }
    GridImage::from_pixels(w, h, img.resolution, out)
}

/// Rotates `img` by `phi` degrees counter-clockwise (as displayed, row 0 on
/// top) about its geometric centre, sampling with nearest neighbour.
///
/// Multiples of 90 degrees on square rasters (and of 180 on any raster) are
/// exact pixel permutations.
pub fn rotate_image(img: &GridImage, phi: f64, fill: u8) -> GridImage {
    let (w, h) = (img.width, img.height);
    let turns = quarter_turns(phi);
    match turns {
        Some(0) => return img.clone(),
        Some(2) => return permute(img, |x, y| (w - 1 - x, h - 1 - y)),
        Some(1) if w == h => return permute(img, |x, y| (w - 1 - y, x)),
        Some(3) if w == h => return permute(img, |x, y| (y, h - 1 - x)),
        _ => {}
    }
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    rotate_image_about(img, phi, fill, (cx, cy))
}

/// Nearest-neighbour rotation by `phi` degrees about an arbitrary centre given
/// in pixel-index coordinates. Samples outside the input take `fill`.
pub fn rotate_image_about(img: &GridImage, phi: f64, fill: u8, center: (f64, f64)) -> GridImage {
    let (w, h) = (img.width, img.height);
    let (cx, cy) = center;
    let (s, c) = exact_sin_cos(phi);
    let mut out = vec![fill; w * h];
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            let sx = (cx + dx * c - dy * s).round();
            let sy = (cy + dx * s + dy * c).round();
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                out[y * w + x] = img.pixels[sy as usize * w + sx as usize];
            }
        }
    }
    GridImage {
        width: w,
        height: h,
        resolution: img.resolution,
        pixels: out,
    }
}

/// Copies the `w` x `h` sub-raster whose top-left pixel is `(x, y)`.
pub fn extract_window(img: &GridImage, x: usize, y: usize, w: usize, h: usize) -> Result<GridImage> {
    if x + w > img.width || y + h > img.height {
        return Err(Error::invalid(format!(
            "window {w}x{h} at ({x},{y}) exceeds {}x{} raster",
            img.width, img.height
        )));
    }
    let mut pixels = Vec::with_capacity(w * h);
    for yy in y..y + h {
        pixels.extend_from_slice(&img.row(yy)[x..x + w]);
    }
    GridImage::from_pixels(w, h, img.resolution, pixels)
}

fn quarter_turns(phi: f64) -> Option<u32> {
    let r = phi.rem_euclid(360.0);
    if r % 90.0 == 0.0 {
        Some((r / 90.0) as u32 % 4)
    } else {
        None
    }
}

fn exact_sin_cos(phi: f64) -> (f64, f64) {
    match quarter_turns(phi) {
        Some(0) => (0.0, 1.0),
        Some(1) => (1.0, 0.0),
        Some(2) => (0.0, -1.0),
        Some(3) => (-1.0, 0.0),
        _ => phi.to_radians().sin_cos(),
    }
}

/// `out(x, y) = img(src(x, y))`.
fn permute(img: &GridImage, src: impl Fn(usize, usize) -> (usize, usize)) -> GridImage {
    let (w, h) = (img.width, img.height);
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(x, y);
            out[y * w + x] = img.pixels[sy * w + sx];
        }
    }
    GridImage {
        width: w,
        height: h,
        resolution: img.resolution,
        pixels: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn random_image(w: usize, h: usize, seed: u64) -> GridImage {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let pixels = (0..w * h)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (state >> 56) as u8
            })
            .collect();
        GridImage::from_pixels(w, h, 0.05, pixels).unwrap()
    }

    #[test]
    fn construction_checks_invariants() {
        assert!(GridImage::from_pixels(2, 2, 0.05, vec![0; 3]).is_err());
        assert!(GridImage::from_pixels(2, 2, 0.0, vec![0; 4]).is_err());
        assert!(GridImage::from_pixels(2, 2, -1.0, vec![0; 4]).is_err());
        assert!(GridImage::from_pixels(2, 2, f64::NAN, vec![0; 4]).is_err());
    }

    #[test]
    fn polar_examples() {
        assert_eq!(polar_to_image(0.0, 1.234, 0.05, 60, 60), (30, 30));
        assert_eq!(polar_to_image(1.0, 0.0, 0.05, 60, 60), (50, 30));
        assert_eq!(polar_to_image(1.0, FRAC_PI_2, 0.05, 60, 60), (30, 10));
    }

    #[test]
    fn dilate_identity_and_block() {
        let img = random_image(9, 7, 3);
        assert_eq!(dilate(&img, 1).unwrap(), img);

        let mut single = GridImage::zeros(11, 11, 0.05).unwrap();
        single.set(5, 5, 255);
        let d = dilate(&single, 5).unwrap();
        for y in 0..11 {
            for x in 0..11 {
                let inside = (3..=7).contains(&x) && (3..=7).contains(&y);
                assert_eq!(d.get(x, y) == 255, inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn dilate_bridges_gap() {
        let mut img = GridImage::zeros(12, 5, 0.05).unwrap();
        img.set(3, 2, 255);
        img.set(6, 2, 255);
        let d = dilate(&img, 5).unwrap();
        // Direct max-filter oracle.
        for y in 0..5i64 {
            for x in 0..12i64 {
                let mut m = 0;
                for dy in -2..=2 {
                    for dx in -2..=2 {
                        if img.contains(x + dx, y + dy) {
                            m = m.max(img.get((x + dx) as usize, (y + dy) as usize));
                        }
                    }
                }
                assert_eq!(d.get(x as usize, y as usize), m);
            }
        }
        assert!((1..=8).all(|x| d.get(x, 2) == 255));
    }

    #[test]
    fn dilate_rejects_even_or_zero() {
        let img = GridImage::zeros(4, 4, 0.05).unwrap();
        assert!(matches!(dilate(&img, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(dilate(&img, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rotation_identities() {
        let img = random_image(13, 13, 9);
        assert_eq!(rotate_image(&img, 0.0, 0), img);
        assert_eq!(rotate_image(&img, 360.0, 0), img);
        let mut r = img.clone();
        for _ in 0..4 {
            r = rotate_image(&r, 90.0, 0);
        }
        assert_eq!(r, img);
    }

    #[test]
    fn rotation_direction_is_counter_clockwise() {
        // A pixel to the right of centre moves to the top after +90 degrees.
        let mut img = GridImage::zeros(5, 5, 0.05).unwrap();
        img.set(4, 2, 255);
        let r = rotate_image(&img, 90.0, 0);
        assert_eq!(r.nonzero(), vec![(2, 0)]);
        // The general sampler agrees with the permutation path.
        let general = rotate_image_about(&img, 90.0, 0, (2.0, 2.0));
        assert_eq!(general, r);
    }

    #[test]
    fn rotation_fills_outside() {
        let img = GridImage::filled(8, 8, 0.05, 200).unwrap();
        let r = rotate_image(&img, 45.0, 7);
        assert_eq!(r.get(0, 0), 7);
        assert_eq!(r.get(4, 4), 200);
    }

    #[test]
    fn extract_window_examples() {
        let img = GridImage::from_rows(
            &[[0u8, 1, 2, 3], [4, 5, 6, 7], [8, 9, 10, 11], [12, 13, 14, 15]],
            0.05,
        )
        .unwrap();
        assert_eq!(extract_window(&img, 0, 0, 4, 4).unwrap(), img);
        assert_eq!(extract_window(&img, 2, 1, 1, 1).unwrap().pixels(), &[6]);
        assert_eq!(
            extract_window(&img, 1, 1, 2, 2).unwrap().pixels(),
            &[5, 6, 9, 10]
        );
        assert!(extract_window(&img, 3, 0, 2, 1).is_err());
    }

    proptest! {
        #[test]
        fn dilation_is_extensive_and_idempotent_under_unit_kernel(
            seed in any::<u64>(), w in 1usize..20, h in 1usize..20, k in 0usize..4
        ) {
            let k = 2 * k + 1;
            let img = random_image(w, h, seed);
            let d = dilate(&img, k).unwrap();
            for (a, b) in img.pixels().iter().zip(d.pixels()) {
                prop_assert!(b >= a);
            }
            prop_assert_eq!(dilate(&d, 1).unwrap(), d);
        }

        #[test]
        fn quarter_turns_permute_square_rasters(seed in any::<u64>(), n in 1usize..24) {
            let img = random_image(n, n, seed);
            let r = rotate_image(&img, 90.0, 0);
            let mut a = img.pixels().to_vec();
            let mut b = r.pixels().to_vec();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
            let back = rotate_image(&r, -90.0, 0);
            prop_assert_eq!(back, img);
        }

        #[test]
        fn origin_maps_to_centre(theta in -10.0f64..10.0, w in 2usize..200, h in 2usize..200) {
            let (x, y) = polar_to_image(0.0, theta, 0.05, w, h);
            prop_assert_eq!((x, y), ((w as f64 / 2.0).round() as i64, (h as f64 / 2.0).round() as i64));
        }
    }
}
