//! One image in, ranked crops out: entity resolution, semantic map construction, fusion
//! and ranking. Shared by the command-line tool and the benchmark harness.

use serde::{Deserialize, Serialize};

use crate::cropper::{best_crops, CandidateSpec, CombineWeights, CropRanking};
use crate::error::{Error, Result};
use crate::maps::{NormalizeMode, ScoreMap};
use crate::semantics::{resolve_entity, semantic_map, DetectionSet, EntityQuery, Resolution, ResolutionConfig, SigmaRule, Taxonomy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub weights: CombineWeights,
    pub candidates: CandidateSpec,
    pub resolution: ResolutionConfig,
    pub sigma: SigmaRule,
    /// Normalization applied to the semantic map before fusion re-normalizes it.
    pub semantic_normalize: NormalizeMode,
    pub top_n: usize,
    /// Fail instead of falling back to aesthetic-only cropping when the entity cannot be used.
    pub strict: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            weights: CombineWeights::default(),
            candidates: CandidateSpec::default(),
            resolution: ResolutionConfig::default(),
            sigma: SigmaRule::default(),
            semantic_normalize: NormalizeMode::MaxOne,
            top_n: 1,
            strict: false,
        }
    }
}

/// Evidence for one image. `aesthetic` must already be at image resolution.
#[derive(Debug, Clone, Copy)]
pub struct CropRequest<'a> {
    pub aesthetic: &'a ScoreMap,
    pub detections: Option<&'a DetectionSet>,
    pub entity: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CropOutcome {
    pub ranking: CropRanking,
    pub resolution: Option<Resolution>,
    /// True when a semantic map took part in the fusion.
    pub semantic_used: bool,
    pub warnings: Vec<String>,
}

impl CropOutcome {
    pub fn fell_back(&self) -> bool {
        !self.warnings.is_empty()
    }
}

fn degrade(strict: bool, warnings: &mut Vec<String>, msg: String) -> Result<()> {
    if strict {
        return Err(Error::invalid(msg));
    }
    log::warn!("{msg}; falling back to aesthetic-only cropping");
    warnings.push(msg);
    Ok(())
}

pub fn crop_image(taxonomy: Option<&Taxonomy>, req: CropRequest<'_>, cfg: &EngineConfig) -> Result<CropOutcome> {
    let (img_w, img_h) = req.aesthetic.dims();
    let mut warnings = Vec::new();
    let mut resolution = None;
    let mut semantic = None;

    if cfg.weights.w_s > 0.0 {
        match (req.entity, req.detections, taxonomy) {
            (None, _, _) => degrade(cfg.strict, &mut warnings, "no entity given for a semantic weight".into())?,
            (Some(e), None, _) => degrade(cfg.strict, &mut warnings, format!("entity `{e}` given without detections"))?,
            (Some(e), Some(_), None) => degrade(cfg.strict, &mut warnings, format!("entity `{e}` given without a taxonomy"))?,
            (Some(e), Some(dets), Some(tax)) => {
                if (dets.width, dets.height) != (img_w, img_h) {
                    return Err(Error::invalid(format!(
                        "detections are for a {}x{} image but the aesthetic map is {img_w}x{img_h}",
                        dets.width, dets.height
                    )));
                }
                let query = EntityQuery::new(e)?;
                match resolve_entity(tax, &query, &dets.detections, &cfg.resolution) {
                    Some(r) => {
                        let chosen = dets.with_label(&r.label);
                        semantic = Some(semantic_map(img_w, img_h, &chosen, cfg.sigma, cfg.semantic_normalize)?);
                        resolution = Some(r);
                    }
                    None => degrade(
                        cfg.strict,
                        &mut warnings,
                        format!(
                            "entity `{e}` matches no detection at threshold {}",
                            cfg.resolution.threshold
                        ),
                    )?,
                }
            }
        }
    }

    let candidates = cfg.candidates.resolve(img_w, img_h)?;
    let ranking = best_crops(req.aesthetic, semantic.as_ref(), cfg.weights, &candidates, cfg.top_n)?;
    Ok(CropOutcome {
        ranking,
        resolution,
        semantic_used: semantic.is_some(),
        warnings,
    })
}
