//! Deterministic synthetic datasets: the bundled ten-image semantic benchmark and a
//! full-size reference manifest (102 images, 830 croppings).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aesthetics::{save_fst1, save_head1, ClassifierHead, FeatureStack, HIGH_CLASS, LOW_CLASS};
use crate::datasets::{EntityCroppings, SemanticImage, SemanticManifest, Task, TaskManifest, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::maps::{save_map1, ScoreMap};
use crate::semantics::{Detection, DetectionSet};

pub const SEMANTIC10_SEED: u64 = 0x5e3a_0010;
pub const REFERENCE_SHAPE_SEED: u64 = 0x5e3a_0830;

/// Entity pairs for the ten images: (query as written by an annotator, detector label).
const PAIRS: [[(&str, &str); 2]; 10] = [
    [("puppy", "dog"), ("car", "car")],
    [("cat", "cat"), ("bicycle", "bicycle")],
    [("horse", "horse"), ("person", "person")],
    [("bird", "bird"), ("boat", "boat")],
    [("cow", "cow"), ("truck", "truck")],
    [("sheep", "sheep"), ("bus", "bus")],
    [("elephant", "elephant"), ("train", "train")],
    [("giraffe", "giraffe"), ("motorcycle", "motorcycle")],
    [("zebra", "zebra"), ("airplane", "airplane")],
    [("bear", "bear"), ("umbrella", "umbrella")],
];

#[derive(Debug, Clone, PartialEq)]
pub enum AestheticEvidence {
    /// A MAP1 map, possibly coarser than the image.
    Map(ScoreMap),
    Features(FeatureStack, ClassifierHead),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEntity {
    pub name: String,
    pub label: String,
    pub bbox: Rect,
    pub croppings: Vec<Rect>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub entities: Vec<SyntheticEntity>,
    pub detections: DetectionSet,
    pub aesthetic: AestheticEvidence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub manifest: SemanticManifest,
    pub tasks: TaskManifest,
    pub images: Vec<SyntheticImage>,
}

fn image_path(id: &str) -> String {
    format!("images/{id}.png")
}

/// Square of side `side` centred on `cx`, pushed inside `[0, width)`.
fn centred_square(cx: u32, side: u32, width: u32) -> Rect {
    let x = cx.saturating_sub(side / 2).min(width - side);
    Rect::new(x, 0, side, side)
}

fn middle_map(width: u32, height: u32, scale: u32) -> ScoreMap {
    let (w, h) = (width / scale, height / scale);
    let sigma = h as f64 / 10.0;
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    ScoreMap::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
    })
    .expect("finite map")
}

fn middle_features(rng: &mut ChaCha8Rng, width: u32, height: u32) -> (FeatureStack, ClassifierHead) {
    let (gw, gh) = (width / 10, height / 10);
    let bump = middle_map(gw * 10, gh * 10, 10);
    let mut values = bump.values().to_vec();
    values.extend((0..gw * gh).map(|_| rng.random_range(0.0..0.05)));
    let fs = FeatureStack::new(2, gw, gh, values).expect("valid stack");
    let head = ClassifierHead::new(
        vec![HIGH_CLASS.to_string(), LOW_CLASS.to_string()],
        vec![vec![1.0, 0.1], vec![0.2, 1.0]],
    )
    .expect("valid head");
    (fs, head)
}

/// Ten wide images, each with two well separated entities and aesthetic mass between them.
/// Ground truth for an entity is a full-height square centred on it plus a slightly jittered one.
pub fn semantic10() -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(SEMANTIC10_SEED);
    let mut images = Vec::new();
    for (i, pair) in PAIRS.iter().enumerate() {
        let id = format!("sem{i:02}");
        let width = rng.random_range(300..=440u32);
        let height = rng.random_range(90..=120u32);
        let half = height / 2;
        let centres = [
            rng.random_range(half..=width / 2 - half),
            rng.random_range(width / 2 + half..=width - half),
        ];
        let mut entities = Vec::new();
        let mut detections = Vec::new();
        for (&(name, label), cx) in pair.iter().zip(centres) {
            let bw = rng.random_range(height * 2 / 5..=height * 3 / 5);
            let bh = rng.random_range(height * 2 / 5..=height * 3 / 5);
            let cy = half + rng.random_range(0..=6) - 3;
            let bbox = Rect::new(cx - bw / 2, cy - bh / 2, bw, bh);
            let exact = centred_square(cx, height, width);
            let side = height - rng.random_range(2..=10u32);
            let jx = (exact.x + rng.random_range(0..=8)).saturating_sub(4).min(width - side);
            let jittered = Rect::new(jx, rng.random_range(0..=height - side), side, side);
            detections.push(Detection {
                label: label.to_string(),
                score: rng.random_range(70..=98u32) as f64 / 100.0,
                bbox,
            });
            entities.push(SyntheticEntity {
                name: name.to_string(),
                label: label.to_string(),
                bbox,
                croppings: vec![exact, jittered],
            });
        }
        let aesthetic = if i % 2 == 0 {
            AestheticEvidence::Map(middle_map(width, height, 4))
        } else {
            let (fs, head) = middle_features(&mut rng, width, height);
            AestheticEvidence::Features(fs, head)
        };
        images.push(SyntheticImage {
            detections: DetectionSet {
                image_id: id.clone(),
                width,
                height,
                detections,
            },
            id,
            width,
            height,
            entities,
            aesthetic,
        });
    }
    dataset_from(images)
}

fn dataset_from(images: Vec<SyntheticImage>) -> SyntheticDataset {
    let mut manifest = SemanticManifest {
        version: MANIFEST_VERSION,
        counts: None,
        images: images
            .iter()
            .map(|img| {
                let mut entities: Vec<EntityCroppings> = img
                    .entities
                    .iter()
                    .map(|e| EntityCroppings {
                        name: e.name.clone(),
                        croppings: e.croppings.clone(),
                    })
                    .collect();
                entities.sort_by(|a, b| a.name.cmp(&b.name));
                SemanticImage {
                    id: img.id.clone(),
                    path: image_path(&img.id),
                    width: img.width,
                    height: img.height,
                    entities,
                }
            })
            .collect(),
    };
    manifest.counts = Some(manifest.measured_counts());
    let tasks = TaskManifest {
        version: MANIFEST_VERSION,
        tasks: images
            .iter()
            .flat_map(|img| {
                img.entities.iter().map(move |e| Task {
                    task_id: format!("{}-{}", img.id, e.name),
                    image_id: img.id.clone(),
                    path: image_path(&img.id),
                    width: img.width,
                    height: img.height,
                    entity: e.name.clone(),
                })
            })
            .collect(),
    };
    SyntheticDataset {
        manifest,
        tasks,
        images,
    }
}

/// Writes `manifest.json`, `tasks.json` and `evidence/` under `dir`. Images are
/// left to callers that can encode them (see [`render_rgb`]).
pub fn write_dataset(ds: &SyntheticDataset, dir: &Path) -> Result<()> {
    let evidence = dir.join("evidence");
    std::fs::create_dir_all(&evidence).map_err(|e| Error::io(&evidence, e))?;
    let write = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("manifest.json", ds.manifest.to_json())?;
    write(
        "tasks.json",
        serde_json::to_string_pretty(&ds.tasks).expect("tasks serialize") + "\n",
    )?;
    for img in &ds.images {
        img.detections.save(evidence.join(format!("{}.det", img.id)))?;
        match &img.aesthetic {
            AestheticEvidence::Map(m) => save_map1(evidence.join(format!("{}.amap", img.id)), m)?,
            AestheticEvidence::Features(fs, head) => {
                save_fst1(evidence.join(format!("{}.fst", img.id)), fs)?;
                save_head1(evidence.join(format!("{}.head", img.id)), head)?;
            }
        }
    }
    Ok(())
}

fn label_colour(label: &str) -> [u8; 3] {
    let h = label.bytes().fold(2166136261u32, |h, b| (h ^ b as u32).wrapping_mul(16777619));
    [(h >> 16) as u8 | 0x40, (h >> 8) as u8 | 0x40, h as u8 | 0x40]
}

/// Row-major RGB8 rendering: a sky gradient, a bright band where the aesthetic mass
/// sits, and a solid block per entity box.
pub fn render_rgb(img: &SyntheticImage) -> Vec<u8> {
    let (w, h) = (img.width, img.height);
    let glow = middle_map(w, h, 1);
    let mut px = Vec::with_capacity(w as usize * h as usize * 3);
    for y in 0..h {
        for x in 0..w {
            let g = glow.get(x, y);
            let base = 90.0 + 100.0 * y as f64 / h as f64;
            let mut rgb = [
                (base * 0.6 + 160.0 * g).min(255.0) as u8,
                (base * 0.8 + 120.0 * g).min(255.0) as u8,
                (base + 40.0 * g).min(255.0) as u8,
            ];
            for e in &img.entities {
                if e.bbox.contains_point(x, y) {
                    rgb = label_colour(&e.label);
                }
            }
            px.extend_from_slice(&rgb);
        }
    }
    px
}

/// Full-size reference manifest: 102 images, 98 with two entities and
/// four with three, four croppings per pair except two pairs with three, 830 in all.
pub fn reference_shape_manifest() -> SemanticManifest {
    const LABELS: [&str; 16] = [
        "dog", "cat", "person", "car", "bicycle", "horse", "bird", "boat", "bus", "train", "umbrella",
        "chair", "bottle", "cup", "clock", "book",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(REFERENCE_SHAPE_SEED);
    let mut images = Vec::new();
    let mut short_pairs = 2;
    for i in 0..102 {
        let width = rng.random_range(400..=1024u32);
        let height = rng.random_range(300..=768u32);
        let n_entities = if i % 25 == 24 { 3 } else { 2 };
        let mut names: Vec<&str> = Vec::new();
        while names.len() < n_entities {
            let l = LABELS[rng.random_range(0..LABELS.len())];
            if !names.contains(&l) {
                names.push(l);
            }
        }
        names.sort_unstable();
        let entities = names
            .into_iter()
            .map(|name| {
                let n = if short_pairs > 0 && i % 50 == 1 {
                    short_pairs -= 1;
                    3
                } else {
                    4
                };
                let croppings = (0..n)
                    .map(|_| {
                        let side = rng.random_range(height / 3..=height.min(width));
                        Rect::new(
                            rng.random_range(0..=width - side),
                            rng.random_range(0..=height - side),
                            side,
                            side,
                        )
                    })
                    .collect();
                EntityCroppings {
                    name: name.to_string(),
                    croppings,
                }
            })
            .collect();
        images.push(SemanticImage {
            id: format!("img{i:03}"),
            path: image_path(&format!("img{i:03}")),
            width,
            height,
            entities,
        });
    }
    let mut m = SemanticManifest {
        version: MANIFEST_VERSION,
        counts: None,
        images,
    };
    m.counts = Some(m.measured_counts());
    m
}
