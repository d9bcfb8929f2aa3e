//! Semantic image cropping: fuse an aesthetic map with an entity-driven semantic map
//! and pick the best fixed-aspect window.
//!
//! ```
//! use semcrop::{best_crops, AspectRatio, CandidateConfig, CombineWeights, ScoreMap};
//!
//! let a = ScoreMap::from_fn(64, 32, |x, _| if x >= 40 { 1.0 } else { 0.0 }).unwrap();
//! let cfg = CandidateConfig::new(AspectRatio::SQUARE, 1, vec![0.75]).unwrap();
//! let ranking = best_crops(&a, None, CombineWeights::AESTHETIC, &cfg, 1).unwrap();
//! assert_eq!(ranking.top().unwrap().rect.x, 40);
//! ```

pub mod aesthetics;
pub mod cropper;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod losses;
pub mod maps;
pub mod pipeline;
pub mod semantics;
pub mod synthetic;

pub use aesthetics::{aesthetic_map, cam, gap_classify, ClassifierHead, FeatureStack};
pub use cropper::{
    best_crops, candidates, combine, score_crop, CandidateConfig, CandidateSpec, CombineWeights, CropRanking,
    RankedCrop,
};
pub use datasets::{AnnotationStore, Manifest, ManifestKind, SemanticManifest, TaskManifest, ValidationReport};
pub use error::{Error, Result};
pub use evaluation::{best_match_iou, evaluate, EvalConfig, EvalProtocol, EvalReport, EvidenceDir, EvidenceSource};
pub use geometry::{iou, AspectRatio, Rect};
pub use losses::{focal_loss, FocalParams};
pub use maps::{gaussian_smooth, normalize, IntegralMap, NormalizeMode, ScoreMap};
pub use pipeline::{crop_image, CropOutcome, CropRequest, EngineConfig};
pub use semantics::{resolve_entity, semantic_map, DetectionSet, EntityQuery, Resolution, SigmaRule, Taxonomy};
