//! Dense non-negative score grids and the numeric kernels applied to them.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;

/// Row-major grid of finite, non-negative scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("score map dimensions {width}x{height} must be positive")));
        }
        if values.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "score map {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("score map value {v} is not finite and non-negative")));
        }
        Ok(ScoreMap { width, height, values })
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Result<Self> {
        ScoreMap::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn zeros(width: u32, height: u32) -> Result<Self> {
        ScoreMap::filled(width, height, 0.0)
    }

    /// Builds a map by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        ScoreMap::new(width, height, values)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Multiplies every value by `k ≥ 0`.
    pub fn scaled(&self, k: f64) -> Result<ScoreMap> {
        ScoreMap::new(self.width, self.height, self.values.iter().map(|v| v * k).collect())
    }

    /// Sums the values inside `q` directly, without an integral image.
    pub fn naive_window_sum(&self, q: &Rect) -> Result<f64> {
        self.check_window(q)?;
        let mut s = 0.0;
        for y in q.y..q.y + q.h {
            let row = y as usize * self.width as usize;
            s += self.values[row + q.x as usize..row + (q.x + q.w) as usize].iter().sum::<f64>();
        }
        Ok(s)
    }

    fn check_window(&self, q: &Rect) -> Result<()> {
        q.ensure_non_degenerate()?;
        if !q.fits_within(self.width, self.height) {
            return Err(Error::invalid(format!(
                "window {q} lies outside the {}x{} map",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Maps index `i` into `[0, n)` by half-sample symmetric reflection (`-1 → 0`, `n → n-1`).
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Gaussian smoothing with a kernel truncated at `3·sigma`.
///
/// Borders are handled by symmetric reflection. Each 1-D pass is then a doubly
/// stochastic operator, so constant maps stay constant, total mass is preserved,
/// and the maximum never grows.
pub fn gaussian_smooth(m: &ScoreMap, sigma: f64) -> Result<ScoreMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (m.width as usize, m.height as usize);

    let mut horizontal = vec![0.0; w * h];
    for y in 0..h {
        let row = &m.values[y * w..(y + 1) * w];
        for x in 0..w {
            horizontal[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * row[reflect(x as i64 + k as i64 - radius, w)])
                .sum();
        }
    }

    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let acc: f64 = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * horizontal[reflect(y as i64 + k as i64 - radius, h) * w + x])
                .sum();
            out[y * w + x] = acc.max(0.0);
        }
    }
    ScoreMap::new(m.width, m.height, out)
}

/// Bilinear resampling with pixel-centre alignment; sample positions are clamped to the grid.
pub fn resize_bilinear(m: &ScoreMap, out_w: u32, out_h: u32) -> Result<ScoreMap> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!("resize target {out_w}x{out_h} must be positive")));
    }
    if (out_w, out_h) == m.dims() {
        return Ok(m.clone());
    }
    let axis = |dst: u32, src_len: u32, dst_len: u32| -> (usize, usize, f64) {
        let scale = src_len as f64 / dst_len as f64;
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(src_len as usize - 1);
        (lo, hi, pos - lo as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| axis(x, m.width, out_w)).collect();
    let ys: Vec<_> = (0..out_h).map(|y| axis(y, m.height, out_h)).collect();
    let (lo_v, hi_v) = (m.min(), m.max());
    let mut values = Vec::with_capacity(out_w as usize * out_h as usize);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let at = |x: usize, y: usize| m.values[y * m.width as usize + x];
            let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
            let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
            values.push((top * (1.0 - fy) + bottom * fy).clamp(lo_v, hi_v));
        }
    }
    ScoreMap::new(out_w, out_h, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// Divide by the maximum.
    #[default]
    MaxOne,
    /// Divide by the total.
    SumOne,
    /// Affine map of `[min, max]` onto `[0, 1]`.
    MinMax,
}

pub fn normalize(m: &ScoreMap, mode: NormalizeMode) -> Result<ScoreMap> {
    let values = match mode {
        NormalizeMode::MaxOne => {
            let max = m.max();
            if max <= 0.0 {
                return Err(Error::degenerate("cannot max-normalize an all-zero map"));
            }
            m.values.iter().map(|v| v / max).collect()
        }
        NormalizeMode::SumOne => {
            let total = m.sum();
            if total <= 0.0 {
                return Err(Error::degenerate("cannot sum-normalize an all-zero map"));
            }
            m.values.iter().map(|v| v / total).collect()
        }
        NormalizeMode::MinMax => {
            let (lo, hi) = (m.min(), m.max());
            if hi <= lo {
                return Err(Error::degenerate("cannot min-max normalize a constant map"));
            }
            m.values.iter().map(|v| (v - lo) / (hi - lo)).collect()
        }
    };
    ScoreMap::new(m.width, m.height, values)
}

/// Summed-area table of a [`ScoreMap`], `(width + 1) × (height + 1)` with a zero first row and column.
#[derive(Debug, Clone)]
pub struct IntegralMap {
    width: u32,
    height: u32,
    sums: Vec<f64>,
}

impl IntegralMap {
    pub fn new(m: &ScoreMap) -> Self {
        let (w, h) = (m.width as usize, m.height as usize);
        let stride = w + 1;
        let mut sums = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row_sum = 0.0;
            for x in 0..w {
                row_sum += m.values[y * w + x];
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row_sum;
            }
        }
        IntegralMap {
            width: m.width,
            height: m.height,
            sums,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Cumulative sum of all values strictly above and left of `(x, y)`.
    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.sums[y as usize * (self.width as usize + 1) + x as usize]
    }

    pub fn total(&self) -> f64 {
        self.at(self.width, self.height)
    }

    pub fn window_sum(&self, q: &Rect) -> Result<f64> {
        q.ensure_non_degenerate()?;
        if !q.fits_within(self.width, self.height) {
            return Err(Error::invalid(format!(
                "window {q} lies outside the {}x{} map",
                self.width, self.height
            )));
        }
        Ok(self.window_sum_unchecked(q))
    }

    pub(crate) fn window_sum_unchecked(&self, q: &Rect) -> f64 {
        let (x0, y0, x1, y1) = (q.x, q.y, q.x + q.w, q.y + q.h);
        let s = self.at(x1, y1) - self.at(x0, y1) - self.at(x1, y0) + self.at(x0, y0);
        s.max(0.0)
    }
}

pub fn integral(m: &ScoreMap) -> IntegralMap {
    IntegralMap::new(m)
}

const MAP1_MAGIC: &[u8; 4] = b"MAP1";

pub(crate) fn read_u32(r: &mut impl Read, format: &'static str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::format(format, format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_f32s(r: &mut impl Read, count: usize, format: &'static str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::format(format, format!("expected {count} float values: {e}")))?;
    bytes
        .chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if v.is_finite() {
                Ok(v as f64)
            } else {
                Err(Error::format(format, format!("non-finite value {v}")))
            }
        })
        .collect()
}

pub(crate) fn to_f32(v: f64, format: &'static str) -> Result<f32> {
    let f = v as f32;
    if !f.is_finite() {
        return Err(Error::format(format, format!("value {v} does not fit in f32")));
    }
    Ok(f)
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8], format: &'static str) -> Result<()> {
    let mut buf = vec![0u8; magic.len()];
    r.read_exact(&mut buf)
        .map_err(|e| Error::format(format, format!("missing magic: {e}")))?;
    if buf != magic {
        return Err(Error::format(format, "bad magic bytes"));
    }
    Ok(())
}

pub(crate) fn expect_eof(r: &mut impl Read, format: &'static str) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::format(format, "trailing bytes after payload")),
        Err(e) => Err(Error::format(format, e.to_string())),
    }
}

/// Decodes a MAP1 stream: `"MAP1"`, u32-LE width, u32-LE height, then `width·height` f32-LE values.
pub fn read_map1(r: &mut impl Read) -> Result<ScoreMap> {
    expect_magic(r, MAP1_MAGIC, "MAP1")?;
    let width = read_u32(r, "MAP1")?;
    let height = read_u32(r, "MAP1")?;
    let count = width as usize * height as usize;
    let values = read_f32s(r, count, "MAP1")?;
    expect_eof(r, "MAP1")?;
    ScoreMap::new(width, height, values).map_err(|e| Error::format("MAP1", e.to_string()))
}

pub fn write_map1(w: &mut impl Write, m: &ScoreMap) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + m.values.len() * 4);
    buf.extend_from_slice(MAP1_MAGIC);
    buf.extend_from_slice(&m.width.to_le_bytes());
    buf.extend_from_slice(&m.height.to_le_bytes());
    for v in &m.values {
        buf.extend_from_slice(&to_f32(*v, "MAP1")?.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::format("MAP1", e.to_string()))
}

pub fn load_map1(path: impl AsRef<Path>) -> Result<ScoreMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_map1(&mut bytes.as_slice())
}

pub fn save_map1(path: impl AsRef<Path>, m: &ScoreMap) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_map1(&mut buf, m)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
