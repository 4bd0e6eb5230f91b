//! Image comparison measures: MSE, PSNR and the keypoint matching loss.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Real;

/// Mean of squared differences over every pixel-channel sample.
pub fn mse<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    a.same_shape(b)?;
    if a.data.is_empty() {
        return Ok(T::zero());
    }
    let sum: T = a.data.iter().zip(&b.data).map(|(x, y)| (*x - *y) * (*x - *y)).sum();
    Ok(sum / T::lit(a.data.len() as f64))
}

/// Peak signal-to-noise ratio in dB for unit peak; `+inf` for a zero error.
pub fn psnr<T: Real>(mse_value: T) -> Result<T> {
    if mse_value < T::zero() || mse_value.is_nan() {
        return Err(Error::DomainError(format!("psnr of mse {mse_value}")));
    }
    if mse_value == T::zero() {
        return Ok(T::infinity());
    }
    Ok(T::lit(10.0) * (T::one() / mse_value).log10())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint<T> {
    /// `(x, y)` in pixels, subpixel-refined.
    pub position: [T; 2],
    pub response: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchConfig {
    /// Keypoints kept per image.
    pub max_keypoints: usize,
    pub patch_radius: usize,
    pub min_matches: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { max_keypoints: 20, patch_radius: 5, min_matches: 8 }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_keypoints >= self.min_matches && self.min_matches >= 4 && self.patch_radius >= 1 {
            Ok(())
        } else {
            Err(Error::InvalidConfig("match config needs max_keypoints >= min_matches >= 4".into()))
        }
    }
}

const HARRIS_K: f64 = 0.04;
/// Corners weaker than this fraction of the strongest response are dropped.
const QUALITY_LEVEL: f64 = 0.01;
const MIN_RESPONSE: f64 = 1e-14;
/// Normalized cross-correlation below this never forms a match.
pub const MIN_NCC: f64 = 0.8;

fn harris_response<T: Real>(lum: &[T], w: usize, h: usize) -> Vec<T> {
    let mut ix = vec![T::zero(); w * h];
    let mut iy = vec![T::zero(); w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            ix[i] = (lum[i + 1] - lum[i - 1]) * T::half();
            iy[i] = (lum[i + w] - lum[i - w]) * T::half();
        }
    }
    let mut resp = vec![T::zero(); w * h];
    let k = T::lit(HARRIS_K);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let (mut sxx, mut syy, mut sxy) = (T::zero(), T::zero(), T::zero());
            for yy in y - 1..=y + 1 {
                for xx in x - 1..=x + 1 {
                    let j = yy * w + xx;
                    sxx += ix[j] * ix[j];
                    syy += iy[j] * iy[j];
                    sxy += ix[j] * iy[j];
                }
            }
            let tr = sxx + syy;
            resp[y * w + x] = sxx * syy - sxy * sxy - k * tr * tr;
        }
    }
    resp
}

fn parabolic_offset<T: Real>(left: T, mid: T, right: T) -> T {
    let denom = left - T::two() * mid + right;
    if denom >= T::zero() {
        return T::zero();
    }
    let off = (left - right) / (T::two() * denom);
    off.max(-T::half()).min(T::half())
}

/// Harris corners on luminance above a fraction of the peak response, 3x3 non-maximum
/// suppression, strongest `max_keypoints` kept.
///
/// Plateaus keep their first pixel in raster order. Candidates stay `patch_radius + 1` pixels
/// away from the border so their matching patches fit.
pub fn detect_keypoints<T: Real>(img: &Image<T>, cfg: &MatchConfig) -> Vec<Keypoint<T>> {
    let (w, h) = (img.width, img.height);
    let margin = cfg.patch_radius + 1;
    if w < 2 * margin + 1 || h < 2 * margin + 1 {
        return Vec::new();
    }
    let lum = img.luminance();
    let resp = harris_response(&lum, w, h);
    let peak = resp.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let floor = (peak * T::lit(QUALITY_LEVEL)).max(T::lit(MIN_RESPONSE));
    let mut found: Vec<(T, usize, usize)> = Vec::new();
    for y in margin..h - margin {
        for x in margin..w - margin {
            let r = resp[y * w + x];
            if r <= floor {
                continue;
            }
            let mut is_max = true;
            'nbr: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = resp[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
                    let precedes = dy < 0 || (dy == 0 && dx < 0);
                    if n > r || (precedes && n == r) {
                        is_max = false;
                        break 'nbr;
                    }
                }
            }
            if is_max {
                found.push((r, y, x));
            }
        }
    }
    found.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then((a.1, a.2).cmp(&(b.1, b.2))));
    found.truncate(cfg.max_keypoints);
    found
        .into_iter()
        .map(|(r, y, x)| {
            let i = y * w + x;
            let ox = parabolic_offset(resp[i - 1], r, resp[i + 1]);
            let oy = parabolic_offset(resp[i - w], r, resp[i + w]);
            Keypoint { position: [T::lit(x as f64) + ox, T::lit(y as f64) + oy], response: r }
        })
        .collect()
}

fn patch<T: Real>(lum: &[T], w: usize, h: usize, kp: &Keypoint<T>, r: usize) -> Option<Vec<T>> {
    let cx = kp.position[0].round().to_f64_lossy() as isize;
    let cy = kp.position[1].round().to_f64_lossy() as isize;
    let r = r as isize;
    if cx - r < 0 || cy - r < 0 || cx + r >= w as isize || cy + r >= h as isize {
        return None;
    }
    let mut p = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            p.push(lum[y as usize * w + x as usize]);
        }
    }
    // zero-mean, unit-norm
    let mean = p.iter().copied().sum::<T>() / T::lit(p.len() as f64);
    p.iter_mut().for_each(|v| *v -= mean);
    let norm = p.iter().map(|v| *v * *v).sum::<T>().sqrt();
    if norm <= T::lit(1e-12) {
        return None;
    }
    p.iter_mut().for_each(|v| *v /= norm);
    Some(p)
}

/// Mutually-best NCC matches `(camera keypoint, rendered keypoint)`.
pub fn match_keypoints<T: Real>(camera: &Image<T>, rendered: &Image<T>, cfg: &MatchConfig) -> Result<Vec<(Keypoint<T>, Keypoint<T>)>> {
    camera.same_shape(rendered)?;
    let (w, h) = (camera.width, camera.height);
    let kc = detect_keypoints(camera, cfg);
    let kr = detect_keypoints(rendered, cfg);
    let lc = camera.luminance();
    let lr = rendered.luminance();
    let pc: Vec<_> = kc.iter().map(|k| patch(&lc, w, h, k, cfg.patch_radius)).collect();
    let pr: Vec<_> = kr.iter().map(|k| patch(&lr, w, h, k, cfg.patch_radius)).collect();
    let mut score = vec![vec![T::neg_infinity(); kr.len()]; kc.len()];
    for (i, a) in pc.iter().enumerate() {
        for (j, b) in pr.iter().enumerate() {
            if let (Some(a), Some(b)) = (a, b) {
                score[i][j] = a.iter().zip(b).map(|(x, y)| *x * *y).sum();
            }
        }
    }
    let argmax = |vals: &mut dyn Iterator<Item = (usize, T)>| -> Option<usize> {
        let mut best: Option<(usize, T)> = None;
        for (i, v) in vals {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    };
    let mut matches = Vec::new();
    for i in 0..kc.len() {
        let Some(j) = argmax(&mut score[i].iter().copied().enumerate()) else { continue };
        if score[i][j] < T::lit(MIN_NCC) {
            continue;
        }
        let back = argmax(&mut (0..kc.len()).map(|ii| (ii, score[ii][j])));
        if back == Some(i) {
            matches.push((kc[i], kr[j]));
        }
    }
    Ok(matches)
}

/// Mean squared pixel distance between matched keypoints of `camera` and `rendered`.
pub fn matching_loss<T: Real>(camera: &Image<T>, rendered: &Image<T>, cfg: &MatchConfig) -> Result<T> {
    let matches = match_keypoints(camera, rendered, cfg)?;
    if matches.len() < cfg.min_matches {
        return Err(Error::InsufficientMatches { found: matches.len(), required: cfg.min_matches });
    }
    let total: T = matches
        .iter()
        .map(|(a, b)| {
            let dx = a.position[0] - b.position[0];
            let dy = a.position[1] - b.position[1];
            dx * dx + dy * dy
        })
        .sum();
    Ok(total / T::lit(matches.len() as f64))
}
