//! Best-match IOU benchmarking of the cropping engine against ground-truth manifests.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aesthetics::{aesthetic_map, load_fst1, load_head1};
use crate::cropper::CombineWeights;
use crate::datasets::Manifest;
use crate::error::{Error, Result};
use crate::geometry::{iou, Rect};
use crate::maps::{load_map1, resize_bilinear, ScoreMap};
use crate::pipeline::{crop_image, CropRequest, EngineConfig};
use crate::semantics::{DetectionSet, Taxonomy};

/// Highest IOU between `predicted` and any of the ground-truth crops.
pub fn best_match_iou(predicted: &Rect, truths: &[Rect]) -> Result<f64> {
    if truths.is_empty() {
        return Err(Error::invalid("best-match IOU needs at least one ground-truth crop"));
    }
    let mut best = 0.0f64;
    for t in truths {
        best = best.max(iou(predicted, t)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalProtocol {
    /// One item per image; every ground-truth crop of the image counts as a match.
    #[default]
    BestOfN,
    /// One item per image-entity pair, steered by the entity.
    PerPair,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalConfig {
    pub engine: EngineConfig,
    pub protocol: EvalProtocol,
    /// Count failed items as IOU 0 instead of leaving them out of the mean.
    pub failures_as_zero: bool,
}

impl EvalConfig {
    pub fn with_weights(mut self, weights: CombineWeights) -> Self {
        self.engine.weights = weights;
        self
    }
}

/// Where the harness finds precomputed evidence for an image.
pub trait EvidenceSource: Sync {
    /// Aesthetic map at `width`×`height`.
    fn aesthetic(&self, image_id: &str, width: u32, height: u32) -> Result<ScoreMap>;
    fn detections(&self, image_id: &str) -> Result<Option<DetectionSet>>;
}

/// Evidence files named by image id: `<id>.amap` (MAP1) or `<id>.fst` + `<id>.head`
/// for the aesthetic side, and `<id>.det` for detections.
#[derive(Debug, Clone)]
pub struct EvidenceDir {
    root: PathBuf,
}

impl EvidenceDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        EvidenceDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn file(&self, image_id: &str, ext: &str) -> PathBuf {
        self.root.join(format!("{image_id}.{ext}"))
    }
}

/// Loads an aesthetic map from whichever evidence files exist, resized to the image.
pub fn load_aesthetic_evidence(
    amap: Option<&Path>,
    features: Option<(&Path, &Path)>,
    width: u32,
    height: u32,
) -> Result<ScoreMap> {
    if let Some(p) = amap {
        let m = load_map1(p)?;
        return if m.dims() == (width, height) {
            Ok(m)
        } else {
            resize_bilinear(&m, width, height)
        };
    }
    if let Some((fst, head)) = features {
        return aesthetic_map(&load_fst1(fst)?, &load_head1(head)?, width, height);
    }
    Err(Error::invalid("no aesthetic evidence given"))
}

impl EvidenceSource for EvidenceDir {
    fn aesthetic(&self, image_id: &str, width: u32, height: u32) -> Result<ScoreMap> {
        let amap = self.file(image_id, "amap");
        if amap.is_file() {
            return load_aesthetic_evidence(Some(&amap), None, width, height);
        }
        let (fst, head) = (self.file(image_id, "fst"), self.file(image_id, "head"));
        if fst.is_file() && head.is_file() {
            return load_aesthetic_evidence(None, Some((&fst, &head)), width, height);
        }
        Err(Error::invalid(format!(
            "no aesthetic evidence for `{image_id}` in {} (expected {image_id}.amap or {image_id}.fst + {image_id}.head)",
            self.root.display()
        )))
    }

    fn detections(&self, image_id: &str) -> Result<Option<DetectionSet>> {
        let det = self.file(image_id, "det");
        if det.is_file() {
            DetectionSet::load(det).map(Some)
        } else {
            Ok(None)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MemoryEvidence {
    pub aesthetic: HashMap<String, ScoreMap>,
    pub detections: HashMap<String, DetectionSet>,
}

impl EvidenceSource for MemoryEvidence {
    fn aesthetic(&self, image_id: &str, width: u32, height: u32) -> Result<ScoreMap> {
        let m = self
            .aesthetic
            .get(image_id)
            .ok_or_else(|| Error::invalid(format!("no aesthetic evidence for `{image_id}`")))?;
        if m.dims() == (width, height) {
            Ok(m.clone())
        } else {
            resize_bilinear(m, width, height)
        }
    }

    fn detections(&self, image_id: &str) -> Result<Option<DetectionSet>> {
        Ok(self.detections.get(image_id).cloned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    pub predicted: Option<Rect>,
    pub score: Option<f64>,
    /// `None` for failures unless they are counted as zero.
    pub best_iou: Option<f64>,
    pub status: ItemStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub items: Vec<ItemResult>,
    /// Arithmetic mean of the items' `best_iou`; `None` when no item has one.
    pub mean_iou: Option<f64>,
    pub failures: Vec<Failure>,
}

impl EvalReport {
    pub fn model_label(&self) -> String {
        model_label(self.config.engine.weights)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Mean recomputed from the item list.
    pub fn recomputed_mean(&self) -> Option<f64> {
        mean(self.items.iter().filter_map(|i| i.best_iou))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn fmt_weight(v: f64) -> String {
    format!("{v}")
}

pub fn model_label(w: CombineWeights) -> String {
    let (name, first, second) = match w.model_name() {
        "semantic" => ("Semantic", ("w_s", w.w_s), ("w_a", w.w_a)),
        "aesthetic" => ("Aesthetic", ("w_a", w.w_a), ("w_s", w.w_s)),
        "combined" => ("Combined", ("w_a", w.w_a), ("w_s", w.w_s)),
        _ => ("Weighted", ("w_a", w.w_a), ("w_s", w.w_s)),
    };
    format!(
        "{name} model ({} = {} and {} = {})",
        first.0,
        fmt_weight(first.1),
        second.0,
        fmt_weight(second.1)
    )
}

/// Markdown table with one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::from("| Method | IOU |\n|---|---|\n");
    for r in reports {
        let iou = r.mean_iou.map_or_else(|| "undefined".to_string(), |m| format!("{m:.4}"));
        let _ = writeln!(out, "| {} | {iou} |", r.model_label());
    }
    out
}

struct WorkItem<'m> {
    id: &'m str,
    width: u32,
    height: u32,
    entity: Option<&'m str>,
    truths: Vec<Rect>,
}

fn work_items(manifest: &Manifest, protocol: EvalProtocol) -> Vec<WorkItem<'_>> {
    match manifest {
        Manifest::Aesthetic(m) => m
            .images
            .iter()
            .map(|i| WorkItem {
                id: &i.image_id,
                width: i.width,
                height: i.height,
                entity: None,
                truths: i.croppings.clone(),
            })
            .collect(),
        Manifest::Semantic(m) => match protocol {
            EvalProtocol::PerPair => m
                .images
                .iter()
                .flat_map(|i| {
                    i.entities.iter().map(move |e| WorkItem {
                        id: &i.id,
                        width: i.width,
                        height: i.height,
                        entity: Some(&e.name),
                        truths: e.croppings.clone(),
                    })
                })
                .collect(),
            EvalProtocol::BestOfN => m
                .images
                .iter()
                .map(|i| WorkItem {
                    id: &i.id,
                    width: i.width,
                    height: i.height,
                    entity: None,
                    truths: i.entities.iter().flat_map(|e| e.croppings.iter().copied()).collect(),
                })
                .collect(),
        },
    }
}

fn run_item(
    item: &WorkItem<'_>,
    evidence: &dyn EvidenceSource,
    taxonomy: Option<&Taxonomy>,
    cfg: &EngineConfig,
) -> Result<(Rect, f64)> {
    let aesthetic = evidence.aesthetic(item.id, item.width, item.height)?;
    let detections = match item.entity {
        Some(_) => evidence.detections(item.id)?,
        None => None,
    };
    let outcome = crop_image(
        taxonomy,
        CropRequest {
            aesthetic: &aesthetic,
            detections: detections.as_ref(),
            entity: item.entity,
        },
        cfg,
    )?;
    // An entity that could not steer the crop makes the item a failure for this protocol.
    if item.entity.is_some() {
        if let Some(w) = outcome.warnings.first() {
            return Err(Error::invalid(w.clone()));
        }
    }
    let top = outcome.ranking.top().ok_or_else(|| {
        Error::invalid(outcome.ranking.reason.clone().unwrap_or_else(|| "no candidate crop".into()))
    })?;
    Ok((top.rect, top.score))
}

/// Runs the engine's top-1 crop on every manifest item and scores it by best-match IOU.
pub fn evaluate(
    manifest: &Manifest,
    evidence: &dyn EvidenceSource,
    taxonomy: Option<&Taxonomy>,
    cfg: &EvalConfig,
) -> EvalReport {
    let mut engine = cfg.engine.clone();
    engine.top_n = 1;
    let items = work_items(manifest, cfg.protocol);
    let mut results: Vec<ItemResult> = items
        .par_iter()
        .map(|item| {
            let outcome = run_item(item, evidence, taxonomy, &engine)
                .and_then(|(rect, score)| Ok((rect, score, best_match_iou(&rect, &item.truths)?)));
            match outcome {
                Ok((rect, score, iou)) => ItemResult {
                    id: item.id.to_string(),
                    entity: item.entity.map(str::to_string),
                    predicted: Some(rect),
                    score: Some(score),
                    best_iou: Some(iou),
                    status: ItemStatus::Ok,
                    message: None,
                },
                Err(e) => ItemResult {
                    id: item.id.to_string(),
                    entity: item.entity.map(str::to_string),
                    predicted: None,
                    score: None,
                    best_iou: cfg.failures_as_zero.then_some(0.0),
                    status: ItemStatus::Failed,
                    message: Some(e.to_string()),
                },
            }
        })
        .collect();
    results.sort_by(|a, b| (&a.id, &a.entity).cmp(&(&b.id, &b.entity)));
    let failures = results
        .iter()
        .filter(|r| r.status == ItemStatus::Failed)
        .map(|r| Failure {
            id: r.id.clone(),
            entity: r.entity.clone(),
            message: r.message.clone().unwrap_or_default(),
        })
        .collect();
    let mean_iou = mean(results.iter().filter_map(|r| r.best_iou));
    EvalReport {
        config: cfg.clone(),
        items: results,
        mean_iou,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cropper::CandidateSpec;
    use crate::datasets::{AestheticManifest, CroppingRecordSet, EntityCroppings, SemanticImage, SemanticManifest};
    use crate::geometry::AspectRatio;
    use crate::semantics::Detection;

    #[test]
    fn best_match_examples() {
        let truths = [Rect::new(0, 0, 10, 10), Rect::new(5, 0, 10, 10)];
        assert_eq!(best_match_iou(&Rect::new(5, 0, 10, 10), &truths).unwrap(), 1.0);
        let single = [Rect::new(0, 0, 10, 10)];
        let p = Rect::new(5, 0, 10, 10);
        assert_eq!(best_match_iou(&p, &single).unwrap(), iou(&p, &single[0]).unwrap());
        assert!(best_match_iou(&p, &[]).is_err());
    }

    #[test]
    fn best_match_is_monotone_in_truths() {
        let p = Rect::new(3, 4, 20, 20);
        let mut truths = vec![Rect::new(40, 40, 10, 10)];
        let mut last = best_match_iou(&p, &truths).unwrap();
        for t in [Rect::new(0, 0, 20, 20), Rect::new(10, 10, 5, 5), Rect::new(3, 4, 20, 21)] {
            truths.push(t);
            let now = best_match_iou(&p, &truths).unwrap();
            assert!(now >= last);
            last = now;
        }
    }

    fn peak_map(w: u32, h: u32, cx: u32) -> ScoreMap {
        ScoreMap::from_fn(w, h, |x, _| if (cx - 20..cx + 20).contains(&x) { 1.0 } else { 0.01 }).unwrap()
    }

    fn aesthetic_fixture() -> (Manifest, MemoryEvidence) {
        let mut ev = MemoryEvidence::default();
        let mut images = Vec::new();
        for (i, cx) in [(0u32, 40u32), (1, 80)] {
            let id = format!("a{i}");
            ev.aesthetic.insert(id.clone(), peak_map(120, 40, cx));
            images.push(CroppingRecordSet {
                image_id: id,
                path: format!("a{i}.png"),
                width: 120,
                height: 40,
                croppings: vec![Rect::new(0, 0, 40, 40), Rect::new(cx - 20, 0, 40, 40)],
            });
        }
        (Manifest::Aesthetic(AestheticManifest { version: 1, images }), ev)
    }

    fn square_cfg(weights: CombineWeights) -> EvalConfig {
        EvalConfig {
            engine: EngineConfig {
                weights,
                candidates: CandidateSpec {
                    aspect: AspectRatio::SQUARE,
                    stride: Some(1),
                    scales: vec![1.0],
                },
                ..EngineConfig::default()
            },
            ..EvalConfig::default()
        }
    }

    #[test]
    fn perfect_engine_scores_one() {
        let (m, ev) = aesthetic_fixture();
        let r = evaluate(&m, &ev, None, &square_cfg(CombineWeights::AESTHETIC));
        assert_eq!(r.mean_iou, Some(1.0));
        assert!(r.failures.is_empty());
        assert_eq!(r.recomputed_mean(), r.mean_iou);
    }

    #[test]
    fn absent_semantic_evidence_changes_nothing() {
        let (m, ev) = aesthetic_fixture();
        let a = evaluate(&m, &ev, None, &square_cfg(CombineWeights::AESTHETIC));
        let c = evaluate(&m, &ev, None, &square_cfg(CombineWeights::COMBINED));
        assert_eq!(a.items, c.items);
        assert_eq!(a.mean_iou, c.mean_iou);
    }

    #[test]
    fn missing_evidence_is_a_failure_not_an_abort() {
        let (m, mut ev) = aesthetic_fixture();
        ev.aesthetic.remove("a1");
        let r = evaluate(&m, &ev, None, &square_cfg(CombineWeights::AESTHETIC));
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].id, "a1");
        assert_eq!(r.mean_iou, Some(1.0));
        assert_eq!(r.recomputed_mean(), r.mean_iou);

        let zero = EvalConfig {
            failures_as_zero: true,
            ..square_cfg(CombineWeights::AESTHETIC)
        };
        let r = evaluate(&m, &ev, None, &zero);
        assert_eq!(r.mean_iou, Some(0.5));

        let r = evaluate(&m, &MemoryEvidence::default(), None, &square_cfg(CombineWeights::AESTHETIC));
        assert_eq!(r.mean_iou, None);
        assert_eq!(r.failures.len(), 2);
    }

    #[test]
    fn per_pair_uses_the_entity() {
        let mut ev = MemoryEvidence::default();
        ev.aesthetic.insert("s".into(), ScoreMap::filled(200, 50, 1.0).unwrap());
        ev.detections.insert(
            "s".into(),
            DetectionSet {
                image_id: "s".into(),
                width: 200,
                height: 50,
                detections: vec![
                    Detection {
                        label: "dog".into(),
                        score: 0.9,
                        bbox: Rect::new(10, 10, 30, 30),
                    },
                    Detection {
                        label: "car".into(),
                        score: 0.9,
                        bbox: Rect::new(150, 10, 30, 30),
                    },
                ],
            },
        );
        let m = Manifest::Semantic(SemanticManifest {
            version: 1,
            counts: None,
            images: vec![SemanticImage {
                id: "s".into(),
                path: "s.png".into(),
                width: 200,
                height: 50,
                entities: vec![
                    EntityCroppings {
                        name: "dog".into(),
                        croppings: vec![Rect::new(0, 0, 50, 50)],
                    },
                    EntityCroppings {
                        name: "car".into(),
                        croppings: vec![Rect::new(140, 0, 50, 50)],
                    },
                    EntityCroppings {
                        name: "asteroid".into(),
                        croppings: vec![Rect::new(0, 0, 50, 50)],
                    },
                ],
            }],
        });
        let cfg = EvalConfig {
            protocol: EvalProtocol::PerPair,
            ..square_cfg(CombineWeights::SEMANTIC)
        };
        let tax = Taxonomy::bundled();
        let r = evaluate(&m, &ev, Some(&tax), &cfg);
        let entities: Vec<_> = r.items.iter().map(|i| i.entity.as_deref().unwrap()).collect();
        assert_eq!(entities, vec!["asteroid", "car", "dog"]);
        assert_eq!(r.items[0].status, ItemStatus::Failed);
        assert!(r.items[1].best_iou.unwrap() > 0.6);
        assert!(r.items[2].best_iou.unwrap() > 0.6);
        assert_eq!(r.failures.len(), 1);

        let again = evaluate(&m, &ev, Some(&tax), &cfg);
        assert_eq!(r.to_json(), again.to_json());
    }

    #[test]
    fn table_layout() {
        let (m, ev) = aesthetic_fixture();
        let reports: Vec<_> = [CombineWeights::SEMANTIC, CombineWeights::AESTHETIC, CombineWeights::COMBINED]
            .into_iter()
            .map(|w| evaluate(&m, &ev, None, &square_cfg(w)))
            .collect();
        let table = render_table(&reports);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "| Method | IOU |");
        assert_eq!(lines[2], "| Semantic model (w_s = 1 and w_a = 0) | undefined |");
        assert_eq!(lines[3], "| Aesthetic model (w_a = 1 and w_s = 0) | 1.0000 |");
        assert_eq!(lines[4], "| Combined model (w_a = 1 and w_s = 1) | 1.0000 |");
    }

    #[test]
    fn evidence_dir_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let ev = EvidenceDir::new(dir.path());
        assert!(ev.aesthetic("x", 10, 10).is_err());
        assert!(ev.detections("x").unwrap().is_none());
        crate::maps::save_map1(dir.path().join("x.amap"), &ScoreMap::filled(5, 5, 2.0).unwrap()).unwrap();
        let m = ev.aesthetic("x", 10, 8).unwrap();
        assert_eq!(m.dims(), (10, 8));
        assert!(m.values().iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }
}
