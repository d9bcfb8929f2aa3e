//! Aesthetic evidence: class activation maps over an ingested feature stack, GAP
//! classification, AVA rating labels and the class-weighted cross-entropy.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{
    expect_eof, expect_magic, normalize, read_f32s, read_u32, resize_bilinear, to_f32, NormalizeMode, ScoreMap,
};

pub const HIGH_CLASS: &str = "high";
pub const LOW_CLASS: &str = "low";

/// Final convolutional activations: `layers` grids of `grid_w × grid_h` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    layers: u32,
    grid_w: u32,
    grid_h: u32,
    values: Vec<f64>,
}

impl FeatureStack {
    /// `values` is map-major, row-major within each map.
    pub fn new(layers: u32, grid_w: u32, grid_h: u32, values: Vec<f64>) -> Result<Self> {
        if layers == 0 || grid_w == 0 || grid_h == 0 {
            return Err(Error::invalid(format!(
                "feature stack {layers}x{grid_h}x{grid_w} must have positive dimensions"
            )));
        }
        let expected = layers as usize * grid_w as usize * grid_h as usize;
        if values.len() != expected {
            return Err(Error::invalid(format!(
                "feature stack needs {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature stack contains non-finite values"));
        }
        Ok(FeatureStack {
            layers,
            grid_w,
            grid_h,
            values,
        })
    }

    pub fn layers(&self) -> u32 {
        self.layers
    }

    pub fn grid_w(&self) -> u32 {
        self.grid_w
    }

    pub fn grid_h(&self) -> u32 {
        self.grid_h
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        let n = self.grid_w as usize * self.grid_h as usize;
        &self.values[l * n..(l + 1) * n]
    }

    /// Global average pooling: the spatial mean of each feature map.
    pub fn pooled(&self) -> Vec<f64> {
        (0..self.layers as usize)
            .map(|l| {
                let layer = self.layer(l);
                layer.iter().sum::<f64>() / layer.len() as f64
            })
            .collect()
    }
}

/// GAP → softmax weights, one row of length `L` per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    classes: Vec<String>,
    weights: Vec<Vec<f64>>,
}

impl ClassifierHead {
    pub fn new(classes: Vec<String>, weights: Vec<Vec<f64>>) -> Result<Self> {
        if classes.is_empty() || classes.len() != weights.len() {
            return Err(Error::invalid(format!(
                "classifier head has {} labels but {} weight rows",
                classes.len(),
                weights.len()
            )));
        }
        let l = weights[0].len();
        if l == 0 || weights.iter().any(|row| row.len() != l) {
            return Err(Error::invalid("classifier weight rows must share a positive length"));
        }
        if weights.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("classifier weights contain non-finite values"));
        }
        Ok(ClassifierHead { classes, weights })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn feature_len(&self) -> usize {
        self.weights[0].len()
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::invalid(format!("class `{label}` is not in the classifier head")))
    }

    pub fn weights_for(&self, label: &str) -> Result<&[f64]> {
        Ok(&self.weights[self.class_index(label)?])
    }

    fn check_compatible(&self, fs: &FeatureStack) -> Result<()> {
        if self.feature_len() != fs.layers as usize {
            return Err(Error::invalid(format!(
                "classifier head expects {} feature maps, stack has {}",
                self.feature_len(),
                fs.layers
            )));
        }
        Ok(())
    }
}

/// Raw class activation values; unlike [`ScoreMap`] these may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationGrid {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl ActivationGrid {
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Class activation map: `Σ_l w_l · f_l(x, y)` at every grid position.
pub fn cam(fs: &FeatureStack, head: &ClassifierHead, class_label: &str) -> Result<ActivationGrid> {
    head.check_compatible(fs)?;
    let w = head.weights_for(class_label)?;
    let n = fs.grid_w as usize * fs.grid_h as usize;
    let mut values = vec![0.0; n];
    for (l, wl) in w.iter().enumerate() {
        for (acc, f) in values.iter_mut().zip(fs.layer(l)) {
            *acc += wl * f;
        }
    }
    Ok(ActivationGrid {
        width: fs.grid_w,
        height: fs.grid_h,
        values,
    })
}

/// Converts a raw activation grid into an image-sized aesthetic map in `[0, 1]`.
///
/// Negative activations are clamped to 0, the result is min-max normalized on the
/// feature grid and then bilinearly upsampled.
pub fn activation_to_map(raw: &ActivationGrid, img_w: u32, img_h: u32) -> Result<ScoreMap> {
    let clamped = ScoreMap::new(raw.width, raw.height, raw.values.iter().map(|v| v.max(0.0)).collect())?;
    let unit = normalize(&clamped, NormalizeMode::MinMax)
        .map_err(|_| Error::degenerate("class activation map has no positive variation"))?;
    resize_bilinear(&unit, img_w, img_h)
}

/// Aesthetic map for the `high` class, at image resolution.
pub fn aesthetic_map(fs: &FeatureStack, head: &ClassifierHead, img_w: u32, img_h: u32) -> Result<ScoreMap> {
    if img_w == 0 || img_h == 0 {
        return Err(Error::invalid(format!("image size {img_w}x{img_h} must be positive")));
    }
    activation_to_map(&cam(fs, head, HIGH_CLASS)?, img_w, img_h)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassProbabilities {
    pub classes: Vec<String>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ClassProbabilities {
    pub fn probability(&self, label: &str) -> Option<f64> {
        self.classes.iter().position(|c| c == label).map(|i| self.probabilities[i])
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// GAP followed by the linear head and a softmax.
pub fn gap_classify(fs: &FeatureStack, head: &ClassifierHead) -> Result<ClassProbabilities> {
    head.check_compatible(fs)?;
    let pooled = fs.pooled();
    let logits: Vec<f64> = head
        .weights
        .iter()
        .map(|row| row.iter().zip(&pooled).map(|(w, f)| w * f).sum())
        .collect();
    Ok(ClassProbabilities {
        classes: head.classes.clone(),
        probabilities: softmax(&logits),
        logits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvaRating {
    pub image_id: String,
    pub mean_rating: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AestheticLabel {
    High,
    Low,
    Ignored,
}

/// `≥ 7` → high, `≤ 4` → low, anything between is too ambiguous to train on.
pub fn ava_label(r: &AvaRating) -> Result<AestheticLabel> {
    let v = r.mean_rating;
    if !(1.0..=10.0).contains(&v) {
        return Err(Error::invalid(format!(
            "rating {v} for image `{}` is outside [1, 10]",
            r.image_id
        )));
    }
    Ok(if v >= 7.0 {
        AestheticLabel::High
    } else if v <= 4.0 {
        AestheticLabel::Low
    } else {
        AestheticLabel::Ignored
    })
}

/// Reads `image_id,mean_rating` rows. Blank lines and `#` comments are skipped.
pub fn read_ava_ratings(r: impl Read) -> Result<Vec<AvaRating>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format("AVA ratings", e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::format(
                "AVA ratings",
                format!("record {} has {} fields, expected 2", line + 1, rec.len()),
            ));
        }
        let mean_rating: f64 = rec[1]
            .parse()
            .map_err(|_| Error::format("AVA ratings", format!("record {}: bad rating `{}`", line + 1, &rec[1])))?;
        let rating = AvaRating {
            image_id: rec[0].to_string(),
            mean_rating,
        };
        ava_label(&rating)?;
        out.push(rating);
    }
    Ok(out)
}

/// Per-class weights `w_j` for the weighted cross-entropy, aligned with a class order.
#[derive(Debug, Clone, PartialEq)]
pub struct LossParams {
    class_weights: Vec<f64>,
}

impl LossParams {
    pub fn new(class_weights: Vec<f64>) -> Result<Self> {
        if class_weights.is_empty() || class_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("class weights must be positive and finite"));
        }
        Ok(LossParams { class_weights })
    }

    /// `[high, low]` weighted `1` and `3`, offsetting the 3:1 high/low imbalance of AVA.
    pub fn ava() -> Self {
        LossParams {
            class_weights: vec![1.0, 3.0],
        }
    }

    pub fn unit(classes: usize) -> Self {
        LossParams {
            class_weights: vec![1.0; classes],
        }
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }
}

/// `−(1/n) Σ_i Σ_j w_j y_ij ln ŷ_ij` with one-hot truth given as a class index per sample.
pub fn weighted_cross_entropy(truth: &[usize], pred: &[Vec<f64>], params: &LossParams) -> Result<f64> {
    if truth.is_empty() || truth.len() != pred.len() {
        return Err(Error::invalid(format!(
            "{} truth labels for {} prediction rows",
            truth.len(),
            pred.len()
        )));
    }
    let m = params.class_weights.len();
    let mut total = 0.0;
    for (i, (&t, row)) in truth.iter().zip(pred).enumerate() {
        if row.len() != m || t >= m {
            return Err(Error::invalid(format!("sample {i} does not match the {m} loss classes")));
        }
        let row_sum: f64 = row.iter().sum();
        if (row_sum - 1.0).abs() > 1e-6 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid(format!("prediction row {i} is not a probability distribution")));
        }
        if row[t] <= 0.0 {
            return Err(Error::Domain(format!("sample {i} assigns zero probability to its true class")));
        }
        total -= params.class_weights[t] * row[t].ln();
    }
    Ok(total / truth.len() as f64)
}

const FST1_MAGIC: &[u8] = b"FST1";
const HEAD1_MAGIC: &[u8] = b"HEAD1";

/// FST1: `"FST1"`, u32-LE `L`, `grid_h`, `grid_w`, then `L·grid_h·grid_w` f32-LE values.
pub fn read_fst1(r: &mut impl Read) -> Result<FeatureStack> {
    expect_magic(r, FST1_MAGIC, "FST1")?;
    let layers = read_u32(r, "FST1")?;
    let grid_h = read_u32(r, "FST1")?;
    let grid_w = read_u32(r, "FST1")?;
    let values = read_f32s(r, layers as usize * grid_h as usize * grid_w as usize, "FST1")?;
    expect_eof(r, "FST1")?;
    FeatureStack::new(layers, grid_w, grid_h, values).map_err(|e| Error::format("FST1", e.to_string()))
}

pub fn write_fst1(w: &mut impl Write, fs: &FeatureStack) -> Result<()> {
    let mut buf = FST1_MAGIC.to_vec();
    for v in [fs.layers, fs.grid_h, fs.grid_w] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &fs.values {
        buf.extend_from_slice(&to_f32(*v, "FST1")?.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::format("FST1", e.to_string()))
}

/// HEAD1: `"HEAD1"`, u32-LE class count `m`, u32-LE `L`, `m·L` f32-LE weights (class-major),
/// then `m` labels, each a u32-LE byte length followed by UTF-8 bytes.
pub fn read_head1(r: &mut impl Read) -> Result<ClassifierHead> {
    expect_magic(r, HEAD1_MAGIC, "HEAD1")?;
    let m = read_u32(r, "HEAD1")? as usize;
    let l = read_u32(r, "HEAD1")? as usize;
    let flat = read_f32s(r, m * l, "HEAD1")?;
    let weights = flat.chunks(l.max(1)).map(|c| c.to_vec()).collect::<Vec<_>>();
    let mut classes = Vec::with_capacity(m);
    for _ in 0..m {
        let len = read_u32(r, "HEAD1")? as usize;
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::format("HEAD1", format!("truncated class label: {e}")))?;
        classes.push(String::from_utf8(bytes).map_err(|_| Error::format("HEAD1", "class label is not UTF-8"))?);
    }
    expect_eof(r, "HEAD1")?;
    ClassifierHead::new(classes, weights).map_err(|e| Error::format("HEAD1", e.to_string()))
}

pub fn write_head1(w: &mut impl Write, head: &ClassifierHead) -> Result<()> {
    let mut buf = HEAD1_MAGIC.to_vec();
    buf.extend_from_slice(&(head.classes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(head.feature_len() as u32).to_le_bytes());
    for v in head.weights.iter().flatten() {
        buf.extend_from_slice(&to_f32(*v, "HEAD1")?.to_le_bytes());
    }
    for c in &head.classes {
        buf.extend_from_slice(&(c.len() as u32).to_le_bytes());
        buf.extend_from_slice(c.as_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::format("HEAD1", e.to_string()))
}

pub fn load_fst1(path: impl AsRef<Path>) -> Result<FeatureStack> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_fst1(&mut bytes.as_slice())
}

pub fn load_head1(path: impl AsRef<Path>) -> Result<ClassifierHead> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_head1(&mut bytes.as_slice())
}

pub fn save_fst1(path: impl AsRef<Path>, fs: &FeatureStack) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_fst1(&mut buf, fs)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn save_head1(path: impl AsRef<Path>, head: &ClassifierHead) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_head1(&mut buf, head)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
