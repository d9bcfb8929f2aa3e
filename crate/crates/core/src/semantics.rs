//! Semantic evidence: detections, taxonomy-based entity resolution and the semantic map.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::maps::{gaussian_smooth, normalize, NormalizeMode, ScoreMap};

/// Lowercases, trims and joins whitespace-separated words with `_`.
pub fn normalize_term(raw: &str) -> String {
    raw.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join("_")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: Rect,
}

/// Detector output for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!("detections for `{}` have a zero image size", self.image_id)));
        }
        for (i, d) in self.detections.iter().enumerate() {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::invalid(format!(
                    "detection {i} of `{}` has score {} outside [0, 1]",
                    self.image_id, d.score
                )));
            }
            if d.bbox.is_degenerate() || !d.bbox.fits_within(self.width, self.height) {
                return Err(Error::invalid(format!(
                    "detection {i} of `{}` has box {} outside the {}x{} image",
                    self.image_id, d.bbox, self.width, self.height
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: DetectionSet = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Detections whose label normalizes to `label`.
    pub fn with_label(&self, label: &str) -> Vec<Detection> {
        let target = normalize_term(label);
        self.detections
            .iter()
            .filter(|d| normalize_term(&d.label) == target)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synset {
    pub id: String,
    pub lemmas: Vec<String>,
    #[serde(default)]
    pub parents: Vec<String>,
    /// Information content, `−ln p(concept)` estimated from a corpus.
    pub ic: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaxonomyFile {
    synsets: Vec<Synset>,
    #[serde(default)]
    label_map: BTreeMap<String, String>,
}

/// Concept graph with information content, plus the detector-label → lemma table.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    synsets: Vec<Synset>,
    by_id: HashMap<String, usize>,
    by_lemma: HashMap<String, Vec<usize>>,
    parents: Vec<Vec<usize>>,
    label_map: BTreeMap<String, String>,
}

const BUNDLED_TAXONOMY: &str = include_str!("../fixtures/taxonomy.json");

impl Taxonomy {
    pub fn new(synsets: Vec<Synset>, label_map: BTreeMap<String, String>) -> Result<Self> {
        let mut synsets = synsets;
        for s in &mut synsets {
            s.lemmas = s.lemmas.iter().map(|l| normalize_term(l)).collect();
            if s.lemmas.is_empty() || s.lemmas.iter().any(String::is_empty) {
                return Err(Error::invalid(format!("synset `{}` has no usable lemmas", s.id)));
            }
            if !(s.ic >= 0.0 && s.ic.is_finite()) {
                return Err(Error::invalid(format!("synset `{}` has invalid IC {}", s.id, s.ic)));
            }
        }
        let mut by_id = HashMap::new();
        for (i, s) in synsets.iter().enumerate() {
            if by_id.insert(s.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate synset id `{}`", s.id)));
            }
        }
        let mut parents = Vec::with_capacity(synsets.len());
        for s in &synsets {
            let mut ps = Vec::new();
            for p in &s.parents {
                let pi = *by_id
                    .get(p)
                    .ok_or_else(|| Error::invalid(format!("synset `{}` names unknown parent `{p}`", s.id)))?;
                if synsets[pi].ic > s.ic {
                    return Err(Error::invalid(format!(
                        "synset `{}` has IC {} below its parent `{p}` ({})",
                        s.id, s.ic, synsets[pi].ic
                    )));
                }
                ps.push(pi);
            }
            parents.push(ps);
        }
        if !parents.iter().any(Vec::is_empty) {
            return Err(Error::invalid("taxonomy has no root synset"));
        }
        check_acyclic(&synsets, &parents)?;

        let mut by_lemma: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, s) in synsets.iter().enumerate() {
            for l in &s.lemmas {
                let entry = by_lemma.entry(l.clone()).or_default();
                if !entry.contains(&i) {
                    entry.push(i);
                }
            }
        }
        let mut normalized_map = BTreeMap::new();
        for (label, lemma) in label_map {
            let lemma = normalize_term(&lemma);
            if !by_lemma.contains_key(&lemma) {
                return Err(Error::invalid(format!("label `{label}` maps to unknown lemma `{lemma}`")));
            }
            normalized_map.insert(normalize_term(&label), lemma);
        }
        Ok(Taxonomy {
            synsets,
            by_id,
            by_lemma,
            parents,
            label_map: normalized_map,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TaxonomyFile =
            serde_json::from_str(text).map_err(|e| Error::format("taxonomy", e.to_string()))?;
        Taxonomy::new(file.synsets, file.label_map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: TaxonomyFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Taxonomy::new(file.synsets, file.label_map)
    }

    /// The small fixture taxonomy shipped with the crate, covering the 91 COCO detector labels.
    pub fn bundled() -> Self {
        Taxonomy::from_json(BUNDLED_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn len(&self) -> usize {
        self.synsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synsets.is_empty()
    }

    pub fn synsets(&self) -> &[Synset] {
        &self.synsets
    }

    pub fn synset(&self, id: &str) -> Option<&Synset> {
        self.by_id.get(id).map(|&i| &self.synsets[i])
    }

    pub fn label_map(&self) -> &BTreeMap<String, String> {
        &self.label_map
    }

    pub fn synsets_for_lemma(&self, lemma: &str) -> Vec<&str> {
        self.by_lemma
            .get(lemma)
            .map(|ix| ix.iter().map(|&i| self.synsets[i].id.as_str()).collect())
            .unwrap_or_default()
    }

    /// The lemma a detector label resolves to: its label-map entry, else the label itself.
    pub fn lemma_for_label(&self, label: &str) -> String {
        let key = normalize_term(label);
        self.label_map.get(&key).cloned().unwrap_or(key)
    }

    fn index(&self, id: &str) -> Result<usize> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown synset `{id}`")))
    }

    /// All ancestors of `i`, including `i` itself.
    fn ancestors(&self, i: usize) -> Vec<usize> {
        let mut seen = vec![false; self.synsets.len()];
        let mut queue = VecDeque::from([i]);
        let mut out = Vec::new();
        while let Some(n) = queue.pop_front() {
            if seen[n] {
                continue;
            }
            seen[n] = true;
            out.push(n);
            queue.extend(self.parents[n].iter().copied());
        }
        out
    }

    /// Least common subsumer: the shared ancestor with the highest IC (ties by id).
    pub fn lcs(&self, a: &str, b: &str) -> Result<&Synset> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let anc_b = self.ancestors(ib);
        self.ancestors(ia)
            .into_iter()
            .filter(|n| anc_b.contains(n))
            .map(|n| &self.synsets[n])
            .max_by(|x, y| x.ic.total_cmp(&y.ic).then_with(|| y.id.cmp(&x.id)))
            .ok_or_else(|| Error::NoCommonAncestor(a.to_string(), b.to_string()))
    }

    /// Jiang–Conrath distance `IC(a) + IC(b) − 2·IC(lcs(a, b))`.
    pub fn jcn_distance(&self, a: &str, b: &str) -> Result<f64> {
        let lcs = self.lcs(a, b)?;
        let (sa, sb) = (&self.synsets[self.index(a)?], &self.synsets[self.index(b)?]);
        Ok((sa.ic + sb.ic - 2.0 * lcs.ic).max(0.0))
    }
}

fn check_acyclic(synsets: &[Synset], parents: &[Vec<usize>]) -> Result<()> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut marks = vec![Mark::New; synsets.len()];
    for start in 0..synsets.len() {
        if marks[start] != Mark::New {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        marks[start] = Mark::Active;
        while let Some((node, next)) = stack.pop() {
            if let Some(&p) = parents[node].get(next) {
                stack.push((node, next + 1));
                match marks[p] {
                    Mark::Active => {
                        return Err(Error::invalid(format!("taxonomy cycle through `{}`", synsets[p].id)));
                    }
                    Mark::New => {
                        marks[p] = Mark::Active;
                        stack.push((p, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                marks[node] = Mark::Done;
            }
        }
    }
    Ok(())
}

/// Free-text entity, normalized to the taxonomy's lemma convention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityQuery {
    raw: String,
    normalized: String,
}

impl EntityQuery {
    pub fn new(raw: &str) -> Result<Self> {
        let normalized = normalize_term(raw);
        if normalized.is_empty() {
            return Err(Error::invalid("entity query is empty"));
        }
        Ok(EntityQuery {
            raw: raw.to_string(),
            normalized,
        })
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn normalized(&self) -> &str {
        &self.normalized
    }
}

/// Every sense of the query, in taxonomy order.
pub fn senses<'t>(tax: &'t Taxonomy, q: &EntityQuery) -> Vec<&'t str> {
    tax.synsets_for_lemma(q.normalized())
}

/// Maps a non-negative distance to a similarity in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Squash {
    /// `1 / (1 + d)`
    #[default]
    Reciprocal,
    /// `exp(−d)`
    Exponential,
}

impl Squash {
    pub fn apply(self, distance: f64) -> f64 {
        match self {
            Squash::Reciprocal => 1.0 / (1.0 + distance),
            Squash::Exponential => (-distance).exp(),
        }
    }
}

pub fn similarity(tax: &Taxonomy, a: &str, b: &str, squash: Squash) -> Result<f64> {
    Ok(squash.apply(tax.jcn_distance(a, b)?))
}

/// Jiang–Conrath similarity squashed by `1 / (1 + dist)`.
pub fn jcn_similarity(tax: &Taxonomy, a: &str, b: &str) -> Result<f64> {
    similarity(tax, a, b, Squash::Reciprocal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionConfig {
    pub threshold: f64,
    #[serde(default)]
    pub squash: Squash,
}

impl ResolutionConfig {
    pub fn new(threshold: f64, squash: Squash) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::invalid(format!("threshold {threshold} must lie in [0, 1]")));
        }
        Ok(ResolutionConfig { threshold, squash })
    }
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        ResolutionConfig {
            threshold: 0.1,
            squash: Squash::Reciprocal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolution {
    /// Detector label as it appears in the detections.
    pub label: String,
    pub similarity: f64,
    pub entity_sense: String,
    pub label_sense: String,
}

/// Picks the detected label most similar to any sense of the entity, or `None` when
/// nothing reaches the threshold. Labels are visited in sorted order and only a strictly
/// better score replaces the incumbent, so ties resolve to the smallest label.
pub fn resolve_entity(
    tax: &Taxonomy,
    q: &EntityQuery,
    detections: &[Detection],
    cfg: &ResolutionConfig,
) -> Option<Resolution> {
    let entity_senses = senses(tax, q);
    if entity_senses.is_empty() {
        log::warn!("entity `{}` has no sense in the taxonomy", q.raw());
        return None;
    }
    let mut labels: Vec<&str> = detections.iter().map(|d| d.label.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();

    let mut best: Option<Resolution> = None;
    for label in labels {
        let label_senses = tax.synsets_for_lemma(&tax.lemma_for_label(label));
        if label_senses.is_empty() {
            log::warn!("detector label `{label}` does not resolve to a taxonomy synset; skipping");
            continue;
        }
        for es in &entity_senses {
            for ls in &label_senses {
                let Ok(sim) = similarity(tax, es, ls, cfg.squash) else {
                    continue;
                };
                if best.as_ref().is_none_or(|b| sim > b.similarity) {
                    best = Some(Resolution {
                        label: label.to_string(),
                        similarity: sim,
                        entity_sense: es.to_string(),
                        label_sense: ls.to_string(),
                    });
                }
            }
        }
    }
    best.filter(|b| b.similarity >= cfg.threshold)
}

/// Gaussian width used to smooth the semantic box mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum SigmaRule {
    None,
    Fixed { sigma: f64 },
    /// `fraction · min(box w, box h)`, clamped to `[min, max]`.
    BoxRelative { fraction: f64, min: f64, max: f64 },
}

impl Default for SigmaRule {
    fn default() -> Self {
        SigmaRule::BoxRelative {
            fraction: 0.1,
            min: 1.0,
            max: 25.0,
        }
    }
}

impl SigmaRule {
    pub fn sigma_for(&self, bbox: &Rect) -> Option<f64> {
        match *self {
            SigmaRule::None => None,
            SigmaRule::Fixed { sigma } => Some(sigma),
            SigmaRule::BoxRelative { fraction, min, max } => {
                Some((fraction * bbox.w.min(bbox.h) as f64).clamp(min, max))
            }
        }
    }
}

/// Largest box, then higher score, then leftmost, then topmost.
pub fn largest_detection(chosen: &[Detection]) -> Option<&Detection> {
    chosen.iter().min_by(|a, b| {
        b.bbox
            .area()
            .cmp(&a.bbox.area())
            .then_with(|| b.score.total_cmp(&a.score))
            .then_with(|| a.bbox.x.cmp(&b.bbox.x))
            .then_with(|| a.bbox.y.cmp(&b.bbox.y))
    })
}

/// Binary mask of the largest chosen box, smoothed and normalized.
pub fn semantic_map(
    img_w: u32,
    img_h: u32,
    chosen: &[Detection],
    sigma: SigmaRule,
    mode: NormalizeMode,
) -> Result<ScoreMap> {
    let det = largest_detection(chosen).ok_or_else(|| Error::invalid("semantic map needs at least one detection"))?;
    let b = det.bbox;
    if b.is_degenerate() || !b.fits_within(img_w, img_h) {
        return Err(Error::invalid(format!("box {b} lies outside the {img_w}x{img_h} image")));
    }
    let mask = ScoreMap::from_fn(img_w, img_h, |x, y| if b.contains_point(x, y) { 1.0 } else { 0.0 })?;
    let smoothed = match sigma.sigma_for(&b) {
        Some(s) => gaussian_smooth(&mask, s)?,
        None => mask,
    };
    normalize(&smoothed, mode)
}
