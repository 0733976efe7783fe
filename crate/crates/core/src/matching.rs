//! Zero-mean normalized cross-correlation template matching with a rotation
//! sweep.
//!
//! The fast path works in exact integer arithmetic. For a template with `n`
//! pixels, the correlation numerator scaled by `n` is
//! `n * sum(T * I) - sum(T) * sum(I)`, and the squared norms scaled by `n` are
//! `n * sum(T^2) - sum(T)^2` (same for `I`). Window sums of `I` and `I^2`
//! come from summed-area tables and `sum(T * I)` is accumulated only over the
//! non-zero template pixels, so every quantity except the final division is an
//! exact integer. Zero variance is therefore detected exactly.
//!
//! [`oracle`] holds a literal nested-loop transcription used to check the fast
//! path.

use crate::error::{Error, Result};
use crate::grid::{rotate_image, GridImage};

/// Rotation fill for templates: free space.
pub const ROTATION_FILL: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    /// Column of the template's top-left pixel in the searched image.
    pub x: usize,
    /// Row of the template's top-left pixel in the searched image.
    pub y: usize,
    /// Template rotation in degrees.
    pub phi: f64,
    pub score: f64,
}

/// Search image with summed-area tables, reusable across templates and angles.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
    // (width + 1) x (height + 1) inclusive prefix sums.
    sum: Vec<i64>,
    sum_sq: Vec<i64>,
}

impl PreparedImage {
    pub fn new(img: &GridImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let stride = w + 1;
        let mut sum = vec![0i64; stride * (h + 1)];
        let mut sum_sq = vec![0i64; stride * (h + 1)];
        for y in 0..h {
            let mut row_s = 0i64;
            let mut row_q = 0i64;
            for (x, &p) in img.row(y).iter().enumerate() {
                let p = i64::from(p);
                row_s += p;
                row_q += p * p;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row_s;
                sum_sq[(y + 1) * stride + x + 1] = sum_sq[y * stride + x + 1] + row_q;
            }
        }
        Self {
            width: w,
            height: h,
            values: img.pixels().iter().map(|&p| f64::from(p)).collect(),
            sum,
            sum_sq,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    fn window(&self, table: &[i64], x: usize, y: usize, w: usize, h: usize) -> i64 {
        let s = self.width + 1;
        table[(y + h) * s + x + w] - table[y * s + x + w] - table[(y + h) * s + x] + table[y * s + x]
    }
}

/// Per-template constants of the correlation.
#[derive(Debug, Clone)]
struct PreparedTemplate {
    width: usize,
    height: usize,
    n: i64,
    sum: i64,
    // n * sum(T^2) - sum(T)^2
    norm_n: i64,
    nonzero: Vec<(usize, usize, f64)>,
}

impl PreparedTemplate {
    fn new(t: &GridImage) -> Self {
        let mut sum = 0i64;
        let mut sum_sq = 0i64;
        let mut nonzero = Vec::new();
        for y in 0..t.height() {
            for (x, &p) in t.row(y).iter().enumerate() {
                let v = i64::from(p);
                sum += v;
                sum_sq += v * v;
                if p != 0 {
                    nonzero.push((x, y, f64::from(p)));
                }
            }
        }
        let n = (t.width() * t.height()) as i64;
        Self {
            width: t.width(),
            height: t.height(),
            n,
            sum,
            norm_n: n * sum_sq - sum * sum,
            nonzero,
        }
    }
}

fn check_fits(image_w: usize, image_h: usize, t: &GridImage) -> Result<()> {
    if t.width() == 0 || t.height() == 0 {
        return Err(Error::invalid("template is empty"));
    }
    if t.width() > image_w || t.height() > image_h {
        return Err(Error::invalid(format!(
            "template {}x{} larger than image {}x{}",
            t.width(),
            t.height(),
            image_w,
            image_h
        )));
    }
    Ok(())
}

/// NCC of `template` against the window of `image` whose top-left pixel is `(x, y)`.
pub fn ncc_at(image: &GridImage, template: &GridImage, x: usize, y: usize) -> Result<f64> {
    if x + template.width() > image.width() || y + template.height() > image.height() {
        return Err(Error::invalid(format!(
            "template {}x{} at ({x},{y}) does not fit in {}x{} image",
            template.width(),
            template.height(),
            image.width(),
            image.height()
        )));
    }
    let t = PreparedTemplate::new(template);
    let (mut s, mut q, mut cross) = (0i64, 0i64, 0i64);
    for ty in 0..t.height {
        let irow = &image.row(y + ty)[x..x + t.width];
        for (tv, iv) in template.row(ty).iter().zip(irow) {
            let (tv, iv) = (i64::from(*tv), i64::from(*iv));
            s += iv;
            q += iv * iv;
            cross += tv * iv;
        }
    }
    correlation(&t, cross, s, q).ok_or(Error::ZeroVariance)
}

#[inline]
fn correlation(t: &PreparedTemplate, cross: i64, sum_i: i64, sum_sq_i: i64) -> Option<f64> {
    let image_norm_n = t.n * sum_sq_i - sum_i * sum_i;
    if t.norm_n == 0 || image_norm_n == 0 {
        return None;
    }
    let num = t.n * cross - t.sum * sum_i;
    let score = num as f64 / ((t.norm_n as f64).sqrt() * (image_norm_n as f64).sqrt());
    Some(score.clamp(-1.0, 1.0))
}

/// Scores of every fully-inside placement, row-major over `(y, x)`, with
/// `None` for zero-variance placements.
fn score_plane(image: &PreparedImage, t: &PreparedTemplate) -> (usize, usize, Vec<Option<f64>>) {
    let pw = image.width - t.width + 1;
    let ph = image.height - t.height + 1;
    let mut acc = vec![0.0f64; pw * ph];
    if t.norm_n != 0 {
        for &(dx, dy, v) in &t.nonzero {
            for py in 0..ph {
                let src = &image.values[(py + dy) * image.width + dx..][..pw];
                let dst = &mut acc[py * pw..(py + 1) * pw];
                for (a, s) in dst.iter_mut().zip(src) {
                    *a += v * s;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(pw * ph);
    for py in 0..ph {
        for px in 0..pw {
            let s = image.window(&image.sum, px, py, t.width, t.height);
            let q = image.window(&image.sum_sq, px, py, t.width, t.height);
            // acc holds an exact integer below 2^53.
            out.push(correlation(t, acc[py * pw + px] as i64, s, q));
        }
    }
    (pw, ph, out)
}

/// Best placement of an unrotated template. Ties: smallest `y`, then smallest `x`.
pub fn best_match(image: &GridImage, template: &GridImage) -> Result<MatchResult> {
    check_fits(image.width(), image.height(), template)?;
    let prepared = PreparedImage::new(image);
    best_match_prepared(&prepared, template, 0.0)
}

fn best_match_prepared(image: &PreparedImage, template: &GridImage, phi: f64) -> Result<MatchResult> {
    let t = PreparedTemplate::new(template);
    let (pw, _, plane) = score_plane(image, &t);
    let mut best: Option<MatchResult> = None;
    for (i, s) in plane.into_iter().enumerate() {
        if let Some(score) = s {
            if best.is_none_or(|b| score > b.score) {
                best = Some(MatchResult { x: i % pw, y: i / pw, phi, score });
            }
        }
    }
    best.ok_or(Error::NoValidPlacement)
}

/// Best placement over all rotations in `angles` (degrees). Ties: earliest
/// angle in list order, then the [`best_match`] rule.
pub fn best_match_rotated(image: &GridImage, template: &GridImage, angles: &[f64]) -> Result<MatchResult> {
    check_fits(image.width(), image.height(), template)?;
    let prepared = PreparedImage::new(image);
    best_match_rotated_prepared(&prepared, template, angles)
}

/// [`best_match_rotated`] against an already prepared image.
pub fn best_match_rotated_prepared(
    image: &PreparedImage,
    template: &GridImage,
    angles: &[f64],
) -> Result<MatchResult> {
    if angles.is_empty() {
        return Err(Error::invalid("angle list is empty"));
    }
    check_fits(image.width, image.height, template)?;
    let mut best: Option<MatchResult> = None;
    for &phi in angles {
        let rotated = rotate_image(template, phi, ROTATION_FILL);
        match best_match_prepared(image, &rotated, phi) {
            Ok(m) if best.is_none_or(|b| m.score > b.score) => best = Some(m),
            Ok(_) | Err(Error::NoValidPlacement) => {}
            Err(e) => return Err(e),
        }
    }
    best.ok_or(Error::NoValidPlacement)
}

/// Result of a weighted search: `value = weight * placement.score`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedMatch {
    pub placement: MatchResult,
    pub weight: f64,
    pub value: f64,
}

/// Maximises `weight(cx, cy) * NCC` over placements and angles, where
/// `(cx, cy) = (x + w/2, y + h/2)` is the centre pixel of the placed template.
/// Same tie rule as [`best_match_rotated`].
pub fn best_weighted_match(
    image: &PreparedImage,
    template: &GridImage,
    angles: &[f64],
    weight: impl Fn(usize, usize) -> f64,
) -> Result<WeightedMatch> {
    if angles.is_empty() {
        return Err(Error::invalid("angle list is empty"));
    }
    check_fits(image.width, image.height, template)?;
    let (tw, th) = (template.width(), template.height());
    let pw = image.width - tw + 1;
    let ph = image.height - th + 1;
    let weights: Vec<f64> = (0..ph)
        .flat_map(|y| (0..pw).map(move |x| (x, y)))
        .map(|(x, y)| {
            let cx = (x + tw / 2).min(image.width - 1);
            let cy = (y + th / 2).min(image.height - 1);
            weight(cx, cy)
        })
        .collect();
    let mut best: Option<WeightedMatch> = None;
    for &phi in angles {
        let rotated = rotate_image(template, phi, ROTATION_FILL);
        let t = PreparedTemplate::new(&rotated);
        if t.norm_n == 0 {
            continue;
        }
        let (_, _, plane) = score_plane(image, &t);
        for (i, s) in plane.into_iter().enumerate() {
            let Some(score) = s else { continue };
            let value = weights[i] * score;
            if best.is_none_or(|b| value > b.value) {
                best = Some(WeightedMatch {
                    placement: MatchResult { x: i % pw, y: i / pw, phi, score },
                    weight: weights[i],
                    value,
                });
            }
        }
    }
    best.ok_or(Error::NoValidPlacement)
}

/// Parses an angle range `start:step:stop` (inclusive, degrees).
pub fn parse_angle_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("bad angle range {spec:?}")))?;
    match nums.as_slice() {
        [single] => Ok(vec![*single]),
        [start, step, stop] if *step > 0.0 && stop >= start => Ok(angle_range(*start, *step, *stop)),
        _ => Err(Error::invalid(format!(
            "angle range must be start:step:stop with step > 0 and stop >= start, got {spec:?}"
        ))),
    }
}

/// `start, start + step, ...` up to and including `stop` (within 1e-9).
pub fn angle_range(start: f64, step: f64, stop: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| start + step * i as f64).collect()
}

/// Literal transcription of the correlation and the exhaustive search; kept
/// as the reference the fast path is checked against.
pub mod oracle {
    use super::MatchResult;
    use crate::error::{Error, Result};
    use crate::grid::{rotate_image, GridImage};

    /// Mean-subtracted correlation at `(x, y)`, or `None` when the
    /// denominator is zero. Deviations are kept as exact integers scaled by
    /// the pixel count, so equal correlations compare equal.
    pub fn ncc(image: &GridImage, template: &GridImage, x: usize, y: usize) -> Option<f64> {
        let (w, h) = (template.width(), template.height());
        let n = (w * h) as i64;
        let mut t_sum = 0i64;
        let mut i_sum = 0i64;
        for j in 0..h {
            for i in 0..w {
                t_sum += i64::from(template.get(i, j));
                i_sum += i64::from(image.get(x + i, y + j));
            }
        }
        let mut num = 0i64;
        let mut t_sq = 0i64;
        let mut i_sq = 0i64;
        for yt in 0..h {
            for xt in 0..w {
                let t = n * i64::from(template.get(xt, yt)) - t_sum;
                let i = n * i64::from(image.get(x + xt, y + yt)) - i_sum;
                num += t * i;
                t_sq += t * t;
                i_sq += i * i;
            }
        }
        if t_sq == 0 || i_sq == 0 {
            return None;
        }
        // Each sum carries one spare factor of n.
        let (num, t_sq, i_sq) = (num / n, t_sq / n, i_sq / n);
        let score = num as f64 / ((t_sq as f64).sqrt() * (i_sq as f64).sqrt());
        Some(score.clamp(-1.0, 1.0))
    }

    /// Rotates the template by every angle, scans every placement, keeps the
    /// strict maximum in (angle, y, x) iteration order.
    pub fn best_match_oracle(image: &GridImage, template: &GridImage, angles: &[f64]) -> Result<MatchResult> {
        let mut best: Option<MatchResult> = None;
        for &phi in angles {
            let t = rotate_image(template, phi, super::ROTATION_FILL);
            for y in 0..=image.height() - t.height() {
                for x in 0..=image.width() - t.width() {
                    if let Some(score) = ncc(image, &t, x, y) {
                        if best.is_none_or(|b| score > b.score) {
                            best = Some(MatchResult { x, y, phi, score });
                        }
                    }
                }
            }
        }
        best.ok_or(Error::NoValidPlacement)
    }
}
