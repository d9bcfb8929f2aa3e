//! Acceptance checks, one PASS/FAIL line each. Exits nonzero if any check fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semcrop::aesthetics::{cam, gap_classify, weighted_cross_entropy, ClassifierHead, FeatureStack, LossParams};
use semcrop::cropper::{best_crops, rank_candidates, CandidateConfig, CombineWeights};
use semcrop::datasets::{load_manifest, parse_manifest, AnnotationDraft, AnnotationStore, LoadOptions, Manifest, ManifestKind};
use semcrop::evaluation::{evaluate, EvalConfig, EvalProtocol, EvidenceDir, EvidenceSource};
use semcrop::geometry::{iou, AspectRatio, Rect};
use semcrop::losses::{focal_loss, FocalParams};
use semcrop::maps::{IntegralMap, ScoreMap};
use semcrop::pipeline::{crop_image, CropRequest, EngineConfig};
use semcrop::semantics::{resolve_entity, similarity, Detection, EntityQuery, ResolutionConfig, Squash, Taxonomy};

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Option<Duration>);

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn within_rel(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn random_rect(rng: &mut impl Rng, frame: u32) -> Rect {
    let x = rng.random_range(0..frame);
    let y = rng.random_range(0..frame);
    let w = rng.random_range(1..=frame - x);
    let h = rng.random_range(1..=frame - y);
    Rect::new(x, y, w, h)
}

fn random_map(rng: &mut impl Rng, w: u32, h: u32) -> ScoreMap {
    ScoreMap::from_fn(w, h, |_, _| rng.random_range(0.0..1.0)).unwrap()
}

fn iou_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let (a, b) = (random_rect(&mut rng, 256), random_rect(&mut rng, 256));
        let mut inter = 0u64;
        let mut union = 0u64;
        for y in 0..256 {
            for x in 0..256 {
                let (ia, ib) = (a.contains_point(x, y), b.contains_point(x, y));
                inter += (ia && ib) as u64;
                union += (ia || ib) as u64;
            }
        }
        let oracle = inter as f64 / union as f64;
        let got = iou(&a, &b).map_err(|e| e.to_string())?;
        if !within_rel(got, oracle, 1e-9) && !(oracle == 0.0 && got == 0.0) {
            return Err(format!("pair {i}: {a} vs {b} gave {got}, pixel count {oracle}"));
        }
        worst = worst.max((got - oracle).abs());
    }
    Ok(format!("1000 pairs, max abs error {worst:.1e}"))
}

fn integral_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for m in 0..100 {
        let (w, h) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let map = random_map(&mut rng, w, h);
        let integral = IntegralMap::new(&map);
        for _ in 0..200 {
            let x = rng.random_range(0..w);
            let y = rng.random_range(0..h);
            let q = Rect::new(x, y, rng.random_range(1..=w - x), rng.random_range(1..=h - y));
            let mut naive = 0.0;
            for yy in q.y..q.y + q.h {
                for xx in q.x..q.x + q.w {
                    naive += map.get(xx, yy);
                }
            }
            let got = integral.window_sum(&q).map_err(|e| e.to_string())?;
            if !within_rel(got, naive, 1e-6) {
                return Err(format!("map {m}: window {q} sums to {got}, naive {naive}"));
            }
        }
    }
    Ok("100 maps x 200 windows".into())
}

fn cam_gap_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for s in 0..100 {
        let layers = rng.random_range(1..=8);
        let (gw, gh) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let values = (0..layers * gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fs = FeatureStack::new(layers, gw, gh, values).map_err(|e| e.to_string())?;
        let classes = vec!["high".to_string(), "low".to_string()];
        let weights = (0..2)
            .map(|_| (0..layers).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let head = ClassifierHead::new(classes.clone(), weights).map_err(|e| e.to_string())?;
        let probs = gap_classify(&fs, &head).map_err(|e| e.to_string())?;
        for (c, label) in classes.iter().enumerate() {
            let mean = cam(&fs, &head, label).map_err(|e| e.to_string())?.mean();
            if (mean - probs.logits[c]).abs() > 1e-9 {
                return Err(format!("stack {s} class {label}: CAM mean {mean} vs logit {}", probs.logits[c]));
            }
        }
    }
    Ok("100 stacks".into())
}

fn loss_reductions() -> Check {
    let ce = FocalParams::new(1.0, 0.0).map_err(|e| e.to_string())?;
    for i in 1..=99 {
        let pt = i as f64 / 100.0;
        let got = focal_loss(pt, ce).map_err(|e| e.to_string())?;
        if (got + pt.ln()).abs() > 1e-12 {
            return Err(format!("focal(gamma=0, alpha=1) at pt={pt} is {got}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let classes = rng.random_range(2..=5);
        let n = rng.random_range(1..=20);
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for _ in 0..n {
            let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.01..1.0)).collect();
            let z: f64 = raw.iter().sum();
            pred.push(raw.iter().map(|v| v / z).collect::<Vec<f64>>());
            truth.push(rng.random_range(0..classes));
        }
        let plain = -truth.iter().zip(&pred).map(|(&t, p)| p[t].ln()).sum::<f64>() / n as f64;
        let got = weighted_cross_entropy(&truth, &pred, &LossParams::unit(classes)).map_err(|e| e.to_string())?;
        if !within_rel(got, plain, 1e-12) {
            return Err(format!("unit-weight cross-entropy {got} vs plain {plain}"));
        }
    }
    let focal = focal_loss(0.9, FocalParams::new(0.25, 2.0).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    if (focal - 2.6342e-4).abs() > 1e-6 {
        return Err(format!("focal(alpha=0.25, gamma=2, pt=0.9) = {focal}"));
    }
    // Class order [high, low]; the sample is low with predicted probability 0.5.
    let wce = weighted_cross_entropy(&[1], &[vec![0.5, 0.5]], &LossParams::ava()).map_err(|e| e.to_string())?;
    // The quoted figure is 3·ln 2 rounded to five decimals; the tolerance applies to the exact value.
    if (wce - 3.0 * 2f64.ln()).abs() > 1e-6 || format!("{wce:.5}") != "2.07944" {
        return Err(format!("weighted cross-entropy example = {wce}"));
    }
    Ok(format!("focal example {focal:.6e}, weighted CE example {wce:.6}"))
}

const ASPECTS: [(u32, u32); 5] = [(1, 1), (4, 3), (3, 4), (16, 9), (2, 1)];

fn ranking_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for inst in 0..50 {
        let (w, h) = (rng.random_range(8..=64), rng.random_range(8..=64));
        let (num, den) = ASPECTS[rng.random_range(0..ASPECTS.len())];
        let a = random_map(&mut rng, w, h);
        let s = random_map(&mut rng, w, h);
        let weights = CombineWeights::new(rng.random_range(0.0..2.0), rng.random_range(0.1..2.0)).unwrap();
        let cfg = CandidateConfig::new(
            AspectRatio::new(num, den).unwrap(),
            rng.random_range(1..=4),
            vec![0.5, 0.75, 1.0],
        )
        .map_err(|e| e.to_string())?;
        let base = best_crops(&a, Some(&s), weights, &cfg, 10).map_err(|e| e.to_string())?;
        let c = semcrop::cropper::combine(&a, Some(&s), weights).map_err(|e| e.to_string())?;
        let combined_base = rank_candidates(&c, &cfg, 10).map_err(|e| e.to_string())?;
        for k in [0.1, 3.0, 1000.0] {
            let scaled = best_crops(&a.scaled(k).unwrap(), Some(&s.scaled(k).unwrap()), weights, &cfg, 10)
                .map_err(|e| e.to_string())?;
            let rects = |r: &semcrop::CropRanking| r.crops.iter().map(|c| c.rect).collect::<Vec<_>>();
            if rects(&scaled) != rects(&base) {
                return Err(format!("instance {inst}: inputs scaled by {k} change the ranking"));
            }
            let ranked = rank_candidates(&c.scaled(k).unwrap(), &cfg, 10).map_err(|e| e.to_string())?;
            if rects(&ranked) != rects(&combined_base) {
                return Err(format!("instance {inst}: combined map scaled by {k} changes the ranking"));
            }
        }
    }
    Ok("50 instances, k in {0.1, 3, 1000}".into())
}

fn brute_force_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut inst, mut draws) = (0, 0);
    while inst < 100 {
        draws += 1;
        let (w, h) = (rng.random_range(4..=64u32), rng.random_range(4..=64u32));
        let (num, den) = ASPECTS[rng.random_range(0..ASPECTS.len())];
        let scale: f64 = rng.random_range(0.3..=1.0);
        let a = random_map(&mut rng, w, h);
        // Largest exact multiple of the ratio within the scaled image.
        let mut t = 0;
        while ((t + 1) * num) as f64 <= scale * w as f64 + 1e-9 && ((t + 1) * den) as f64 <= scale * h as f64 + 1e-9 {
            t += 1;
        }
        if t == 0 {
            continue;
        }
        let (cw, ch) = (t * num, t * den);
        let max = a.values().iter().cloned().fold(0.0, f64::max);
        let total: f64 = a.values().iter().map(|v| v / max).sum();
        let mut best: Option<(f64, u32, u32)> = None;
        for y in 0..=h - ch {
            for x in 0..=w - cw {
                let mut sum = 0.0;
                for yy in y..y + ch {
                    for xx in x..x + cw {
                        sum += a.get(xx, yy) / max;
                    }
                }
                // Row-major scan keeps the first (smallest y, then x) maximum.
                if best.is_none_or(|(b, _, _)| sum > b) {
                    best = Some((sum, x, y));
                }
            }
        }
        let (sum, bx, by) = best.unwrap();
        // Engine scores are the window's share of the combined map's mass.
        let score = sum / total;
        let cfg = CandidateConfig::new(AspectRatio::new(num, den).unwrap(), 1, vec![scale]).map_err(|e| e.to_string())?;
        let got = best_crops(&a, None, CombineWeights::AESTHETIC, &cfg, 1).map_err(|e| e.to_string())?;
        let top = got.top().ok_or_else(|| format!("instance {inst}: no crop"))?;
        if top.rect != Rect::new(bx, by, cw, ch) || !within_rel(top.score, score, 1e-9) {
            return Err(format!(
                "instance {inst}: engine chose {} ({}), exhaustive argmax ({bx},{by},{cw},{ch}) ({score})",
                top.rect, top.score
            ));
        }
        inst += 1;
    }
    Ok(format!("100 instances ({} infeasible draws redrawn)", draws - 100))
}

fn entity_resolution() -> Check {
    let tax = Taxonomy::bundled();
    let sim = |a: &str, b: &str| similarity(&tax, a, b, Squash::Reciprocal).map_err(|e| e.to_string());
    let same = sim("dog.n.01", "dog.n.01")?;
    if same != 1.0 {
        return Err(format!("sim(dog, dog) = {same}"));
    }
    let dog_cat = sim("dog.n.01", "cat.n.01")?;
    if (dog_cat - 0.2941).abs() > 1e-4 {
        return Err(format!("sim(dog, cat) = {dog_cat}"));
    }
    let labels: Vec<&String> = tax.label_map().keys().collect();
    let lemmas: Vec<String> = tax
        .synsets()
        .iter()
        .flat_map(|s| s.lemmas.iter().cloned())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..300 {
        let q = EntityQuery::new(&lemmas[rng.random_range(0..lemmas.len())]).unwrap();
        let dets: Vec<Detection> = (0..rng.random_range(1..=6))
            .map(|_| Detection {
                label: labels[rng.random_range(0..labels.len())].clone(),
                score: 0.9,
                bbox: Rect::new(0, 0, 1, 1),
            })
            .collect();
        let pick = |squash| {
            resolve_entity(&tax, &q, &dets, &ResolutionConfig::new(0.0, squash).unwrap()).map(|r| r.label)
        };
        if pick(Squash::Reciprocal) != pick(Squash::Exponential) {
            return Err(format!("trial {trial}: argmax for `{}` differs between squashes", q.raw()));
        }
    }
    Ok(format!("sim(dog, cat) = {dog_cat:.4}, 300 argmax trials agree"))
}

fn semantic10_manifest() -> Result<Manifest, String> {
    load_manifest(fixtures().join("semantic10/manifest.json"), ManifestKind::Semantic, &LoadOptions {
        check_images: true,
        ..LoadOptions::default()
    })
    .map_err(|e| e.to_string())
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let manifest = semantic10_manifest()?;
    let evidence = EvidenceDir::new(fixtures().join("semantic10/evidence"));
    let tax = Taxonomy::bundled();
    let run = |w| {
        let cfg = EvalConfig {
            protocol: EvalProtocol::PerPair,
            ..EvalConfig::default()
        }
        .with_weights(w);
        evaluate(&manifest, &evidence, Some(&tax), &cfg)
    };
    let semantic = run(CombineWeights::SEMANTIC);
    let aesthetic = run(CombineWeights::AESTHETIC);
    if !semantic.failures.is_empty() || !aesthetic.failures.is_empty() {
        return Err(format!("failures: {:?} {:?}", semantic.failures, aesthetic.failures));
    }
    let (sm, am) = (semantic.mean_iou.unwrap_or(0.0), aesthetic.mean_iou.unwrap_or(0.0));
    if sm <= am {
        return Err(format!("semantic mean IOU {sm:.4} does not exceed aesthetic {am:.4}"));
    }
    let Manifest::Semantic(m) = &manifest else {
        return Err("not a semantic manifest".into());
    };
    let cfg = EngineConfig {
        weights: CombineWeights::SEMANTIC,
        strict: true,
        ..EngineConfig::default()
    };
    for img in &m.images {
        let a = evidence.aesthetic(&img.id, img.width, img.height).map_err(|e| e.to_string())?;
        let d = evidence.detections(&img.id).map_err(|e| e.to_string())?;
        let tops: Vec<Rect> = img
            .entities
            .iter()
            .map(|e| {
                let req = CropRequest {
                    aesthetic: &a,
                    detections: d.as_ref(),
                    entity: Some(&e.name),
                };
                crop_image(Some(&tax), req, &cfg)
                    .map_err(|err| err.to_string())
                    .and_then(|o| o.ranking.top().map(|c| c.rect).ok_or_else(|| "no crop".to_string()))
            })
            .collect::<Result<_, _>>()?;
        if tops.windows(2).any(|p| p[0] == p[1]) {
            return Err(format!("{}: both entities give the top-1 crop {}", img.id, tops[0]));
        }
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(30) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!("semantic {sm:.4} > aesthetic {am:.4}, entity switch moves every top-1"))
}

fn dataset_round_trip() -> Check {
    let Manifest::Semantic(bundled) = semantic10_manifest()? else {
        return Err("not a semantic manifest".into());
    };
    let declared = bundled.counts.ok_or("bundled manifest has no counts header")?;
    let measured = bundled.measured_counts();
    if declared != measured {
        return Err(format!("bundled header {declared:?} vs content {measured:?}"));
    }

    let tasks = semcrop::TaskManifest::load(fixtures().join("semantic10/tasks.json")).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = AnnotationStore::open(dir.path().join("annotations.jsonl"), tasks.clone()).map_err(|e| e.to_string())?;
    for img in &bundled.images {
        for e in &img.entities {
            let task = tasks
                .tasks
                .iter()
                .find(|t| t.image_id == img.id && t.entity == e.name)
                .ok_or("missing task")?;
            for (k, c) in e.croppings.iter().enumerate() {
                store
                    .append(AnnotationDraft {
                        task_id: task.task_id.clone(),
                        worker_id: format!("worker{k}"),
                        crop: *c,
                        ts: None,
                    })
                    .map_err(|e| e.to_string())?;
            }
        }
    }
    let first = store.export_semantic_manifest().to_json();
    let reloaded = parse_manifest(&first, ManifestKind::Semantic, &LoadOptions::default()).map_err(|e| e.to_string())?;
    if reloaded.to_json() != first {
        return Err("export -> load -> export is not byte-identical".into());
    }
    if first != bundled.to_json() {
        return Err("exported annotations differ from the bundled manifest".into());
    }

    let Manifest::Semantic(shape) = load_manifest(
        fixtures().join("semantic_reference_shape.json"),
        ManifestKind::Semantic,
        &LoadOptions::default(),
    )
    .map_err(|e| e.to_string())? else {
        return Err("not a semantic manifest".into());
    };
    let c = shape.measured_counts();
    if (c.images, c.croppings) != (102, 830) || shape.images.iter().any(|i| !(2..=3).contains(&i.entities.len())) {
        return Err(format!("reference-shaped fixture counts {c:?}"));
    }
    Ok(format!(
        "round trip byte-identical; bundled {} pairs / {} croppings; reference-shaped {} images / {} pairs / {} croppings",
        measured.pairs, measured.croppings, c.images, c.pairs, c.croppings
    ))
}

fn main() {
    let checks: [Criterion; 9] = [
        ("iou oracle", iou_oracle, Some(Duration::from_secs(5))),
        ("integral image equivalence", integral_equivalence, Some(Duration::from_secs(10))),
        ("cam/gap identity", cam_gap_identity, None),
        ("loss reductions", loss_reductions, None),
        ("ranking invariance", ranking_invariance, None),
        ("brute-force cropping oracle", brute_force_oracle, None),
        ("entity resolution fixture", entity_resolution, None),
        ("end-to-end semantic fixture", end_to_end, Some(Duration::from_secs(30))),
        ("dataset round trip", dataset_round_trip, None),
    ];
    let mut failed = 0;
    for (name, check, budget) in checks {
        let start = Instant::now();
        let mut result = check();
        let elapsed = start.elapsed();
        if let (Ok(_), Some(limit)) = (&result, budget) {
            if elapsed > limit {
                result = Err(format!("took {elapsed:.2?}, limit {limit:?}"));
            }
        }
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{elapsed:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{elapsed:.2?}]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
