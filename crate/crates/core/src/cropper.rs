//! Map fusion, sliding-window candidate generation and candidate ranking.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{matches_ratio, AspectRatio, Rect};
use crate::maps::{normalize, IntegralMap, NormalizeMode, ScoreMap};

/// Weights of the linear fusion `C = w_a·A + w_s·S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombineWeights {
    pub w_a: f64,
    pub w_s: f64,
}

impl CombineWeights {
    pub fn new(w_a: f64, w_s: f64) -> Result<Self> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(w_a) || !ok(w_s) {
            return Err(Error::invalid(format!("weights w_a={w_a}, w_s={w_s} must be non-negative")));
        }
        if w_a + w_s <= 0.0 {
            return Err(Error::invalid("at least one of w_a, w_s must be positive"));
        }
        Ok(CombineWeights { w_a, w_s })
    }

    pub const AESTHETIC: CombineWeights = CombineWeights { w_a: 1.0, w_s: 0.0 };
    pub const SEMANTIC: CombineWeights = CombineWeights { w_a: 0.0, w_s: 1.0 };
    pub const COMBINED: CombineWeights = CombineWeights { w_a: 1.0, w_s: 1.0 };

    /// Human name of the configuration: aesthetic, semantic, combined or weighted.
    pub fn model_name(&self) -> &'static str {
        match (self.w_a == 0.0, self.w_s == 0.0) {
            (true, _) => "semantic",
            (_, true) => "aesthetic",
            _ if self.w_a == 1.0 && self.w_s == 1.0 => "combined",
            _ => "weighted",
        }
    }
}

impl Default for CombineWeights {
    fn default() -> Self {
        CombineWeights::COMBINED
    }
}

/// Fuses the aesthetic map with an optional semantic map after max-normalizing both.
///
/// A map whose weight is zero is neither normalized nor read, so it may be all zero.
pub fn combine(a: &ScoreMap, s: Option<&ScoreMap>, w: CombineWeights) -> Result<ScoreMap> {
    let w = CombineWeights::new(w.w_a, w.w_s)?;
    if let Some(s) = s {
        if s.dims() != a.dims() {
            return Err(Error::invalid(format!(
                "aesthetic map is {}x{} but semantic map is {}x{}",
                a.width(),
                a.height(),
                s.width(),
                s.height()
            )));
        }
    }
    let mut out = vec![0.0; a.values().len()];
    if w.w_a > 0.0 {
        let a = normalize(a, NormalizeMode::MaxOne)?;
        out.iter_mut().zip(a.values()).for_each(|(o, v)| *o += w.w_a * v);
    }
    if let (Some(s), true) = (s, w.w_s > 0.0) {
        let s = normalize(s, NormalizeMode::MaxOne)?;
        out.iter_mut().zip(s.values()).for_each(|(o, v)| *o += w.w_s * v);
    }
    if out.iter().all(|v| *v == 0.0) {
        return Err(Error::degenerate("combined map has no mass (no weighted evidence present)"));
    }
    ScoreMap::new(a.width(), a.height(), out)
}

/// Sliding-window settings: aspect ratio, stride in pixels and window scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateConfig {
    pub aspect: AspectRatio,
    pub stride: u32,
    /// Fractions of the largest inscribed window, ascending, each in `(0, 1]`.
    pub scales: Vec<f64>,
}

pub const DEFAULT_SCALES: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// `max(img_w, img_h) / 40`, at least 1.
pub fn default_stride(img_w: u32, img_h: u32) -> u32 {
    (img_w.max(img_h) / 40).max(1)
}

impl CandidateConfig {
    pub fn new(aspect: AspectRatio, stride: u32, scales: Vec<f64>) -> Result<Self> {
        let cfg = CandidateConfig { aspect, stride, scales };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default scale ladder and stride for an image of the given size.
    pub fn for_image(aspect: AspectRatio, img_w: u32, img_h: u32) -> Self {
        CandidateConfig {
            aspect,
            stride: default_stride(img_w, img_h),
            scales: DEFAULT_SCALES.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("candidate stride must be at least 1"));
        }
        if self.scales.is_empty() {
            return Err(Error::invalid("candidate scales must not be empty"));
        }
        if self.scales.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::invalid("candidate scales must lie in (0, 1]"));
        }
        if self.scales.windows(2).any(|p| p[0] > p[1]) {
            return Err(Error::invalid("candidate scales must be sorted ascending"));
        }
        Ok(())
    }
}

/// Candidate settings whose stride may be left to the per-image default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub aspect: AspectRatio,
    pub stride: Option<u32>,
    pub scales: Vec<f64>,
}

impl Default for CandidateSpec {
    fn default() -> Self {
        CandidateSpec {
            aspect: AspectRatio::SQUARE,
            stride: None,
            scales: DEFAULT_SCALES.to_vec(),
        }
    }
}

impl CandidateSpec {
    pub fn resolve(&self, img_w: u32, img_h: u32) -> Result<CandidateConfig> {
        CandidateConfig::new(
            self.aspect,
            self.stride.unwrap_or_else(|| default_stride(img_w, img_h)),
            self.scales.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CandidateSet {
    pub rects: Vec<Rect>,
    /// Scales for which no window of the requested ratio fits the image.
    pub infeasible_scales: Vec<f64>,
}

/// Window size at scale `f`: exact multiples of the reduced ratio when possible, otherwise
/// the closest window within one pixel of the ratio.
fn window_size(img_w: u32, img_h: u32, aspect: AspectRatio, f: f64) -> Option<(u32, u32)> {
    let (num, den) = (aspect.num() as f64, aspect.den() as f64);
    let k_max = (img_w as f64 / num).min(img_h as f64 / den);
    let t = (f * k_max + 1e-9).floor();
    if t >= 1.0 {
        return Some((aspect.num() * t as u32, aspect.den() * t as u32));
    }
    let h_max = k_max * den;
    let h = (f * h_max + 1e-9).floor();
    let w = (h * num / den).round();
    if h < 1.0 || w < 1.0 || w > img_w as f64 || h > img_h as f64 {
        return None;
    }
    let (w, h) = (w as u32, h as u32);
    matches_ratio(&Rect::new(0, 0, w, h), aspect, 1).then_some((w, h))
}

/// Offsets `0, p, 2p, …` up to `len − win`, always ending flush with the far edge.
fn positions(len: u32, win: u32, stride: u32) -> Vec<u32> {
    if win > len {
        return Vec::new();
    }
    let last = len - win;
    let mut out: Vec<u32> = (0..=last).step_by(stride as usize).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Every sliding-window candidate, ordered by scale, then row, then column.
pub fn candidates(img_w: u32, img_h: u32, cfg: &CandidateConfig) -> Result<CandidateSet> {
    cfg.validate()?;
    let mut set = CandidateSet::default();
    let mut sizes: Vec<(u32, u32)> = Vec::new();
    for &f in &cfg.scales {
        let Some(size) = window_size(img_w, img_h, cfg.aspect, f) else {
            set.infeasible_scales.push(f);
            continue;
        };
        if sizes.contains(&size) {
            continue;
        }
        sizes.push(size);
        let (w, h) = size;
        let xs = positions(img_w, w, cfg.stride);
        for y in positions(img_h, h, cfg.stride) {
            set.rects.extend(xs.iter().map(|&x| Rect::new(x, y, w, h)));
        }
    }
    Ok(set)
}

/// Share of the combined map's mass that falls inside `q`.
pub fn score_crop(c: &ScoreMap, q: &Rect) -> Result<f64> {
    WindowScorer::new(c)?.score(q)
}

/// Scores windows against a fixed map in O(1) each.
#[derive(Debug, Clone)]
pub struct WindowScorer {
    integral: IntegralMap,
    total: f64,
}

impl WindowScorer {
    pub fn new(c: &ScoreMap) -> Result<Self> {
        let integral = IntegralMap::new(c);
        let total = integral.total();
        if total <= 0.0 {
            return Err(Error::degenerate("combined map has zero total mass"));
        }
        Ok(WindowScorer { integral, total })
    }

    pub fn score(&self, q: &Rect) -> Result<f64> {
        Ok((self.integral.window_sum(q)? / self.total).clamp(0.0, 1.0))
    }

    fn score_unchecked(&self, q: &Rect) -> f64 {
        (self.integral.window_sum_unchecked(q) / self.total).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedCrop {
    pub rect: Rect,
    pub score: f64,
}

/// Scores closer than this are ranked as ties, so the ordering does not depend on
/// floating-point rounding in how a window's mass was summed.
pub const SCORE_RESOLUTION: f64 = 1e-9;

fn score_key(score: f64) -> u64 {
    (score / SCORE_RESOLUTION).round() as u64
}

/// Ranking order: higher score, then larger area, then smaller `y`, then smaller `x`.
pub fn rank_order(a: &RankedCrop, b: &RankedCrop) -> Ordering {
    score_key(b.score)
        .cmp(&score_key(a.score))
        .then_with(|| b.rect.area().cmp(&a.rect.area()))
        .then_with(|| a.rect.y.cmp(&b.rect.y))
        .then_with(|| a.rect.x.cmp(&b.rect.x))
        .then_with(|| a.rect.w.cmp(&b.rect.w))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CropRanking {
    pub crops: Vec<RankedCrop>,
    pub candidate_count: usize,
    pub infeasible_scales: Vec<f64>,
    /// Set when no crop could be produced.
    pub reason: Option<String>,
}

impl CropRanking {
    pub fn top(&self) -> Option<&RankedCrop> {
        self.crops.first()
    }
}

/// Ranks the candidate windows of an already-combined map and keeps the best `n`.
pub fn rank_candidates(c: &ScoreMap, cfg: &CandidateConfig, n: usize) -> Result<CropRanking> {
    let set = candidates(c.width(), c.height(), cfg)?;
    if set.rects.is_empty() {
        return Ok(CropRanking {
            crops: Vec::new(),
            candidate_count: 0,
            reason: Some(format!(
                "no {} window fits the {}x{} image at scales {:?}",
                cfg.aspect,
                c.width(),
                c.height(),
                cfg.scales
            )),
            infeasible_scales: set.infeasible_scales,
        });
    }
    let scorer = WindowScorer::new(c)?;
    let mut ranked: Vec<RankedCrop> = set
        .rects
        .par_iter()
        .map(|r| RankedCrop {
            rect: *r,
            score: scorer.score_unchecked(r),
        })
        .collect();
    ranked.par_sort_unstable_by(rank_order);
    ranked.truncate(n);
    Ok(CropRanking {
        crops: ranked,
        candidate_count: set.rects.len(),
        infeasible_scales: set.infeasible_scales,
        reason: None,
    })
}

/// Fuses the maps and returns the top `n` candidate crops, best first.
pub fn best_crops(
    a: &ScoreMap,
    s: Option<&ScoreMap>,
    w: CombineWeights,
    cfg: &CandidateConfig,
    n: usize,
) -> Result<CropRanking> {
    let c = combine(a, s, w)?;
    rank_candidates(&c, cfg, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(stride: u32, scales: &[f64]) -> CandidateConfig {
        CandidateConfig::new(AspectRatio::SQUARE, stride, scales.to_vec()).unwrap()
    }

    /// Every in-bounds `w×h` window at the given stride, including flush positions.
    fn enumerate_windows(img_w: u32, img_h: u32, w: u32, h: u32, stride: u32) -> Vec<Rect> {
        let mut out = Vec::new();
        for y in 0..=img_h - h {
            for x in 0..=img_w - w {
                let on_grid_x = x % stride == 0 || x == img_w - w;
                let on_grid_y = y % stride == 0 || y == img_h - h;
                if on_grid_x && on_grid_y {
                    out.push(Rect::new(x, y, w, h));
                }
            }
        }
        out
    }

    #[test]
    fn combine_examples() {
        let a = ScoreMap::new(2, 1, vec![1.0, 0.0]).unwrap();
        let s = ScoreMap::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(combine(&a, Some(&s), CombineWeights::AESTHETIC).unwrap(), a);
        assert_eq!(combine(&a, Some(&s), CombineWeights::SEMANTIC).unwrap(), s);
        assert_eq!(combine(&a, Some(&s), CombineWeights::COMBINED).unwrap().values(), &[1.0, 1.0]);
        assert_eq!(combine(&a, None, CombineWeights::COMBINED).unwrap(), a);
    }

    #[test]
    fn combine_errors() {
        let a = ScoreMap::new(2, 1, vec![1.0, 0.0]).unwrap();
        let s = ScoreMap::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            combine(&a, Some(&s), CombineWeights::COMBINED),
            Err(Error::InvalidInput(_))
        ));
        assert!(CombineWeights::new(0.0, 0.0).is_err());
        assert!(CombineWeights::new(-1.0, 2.0).is_err());
        assert!(combine(&a, None, CombineWeights { w_a: 0.0, w_s: 0.0 }).is_err());
        assert!(matches!(
            combine(&a, None, CombineWeights::SEMANTIC),
            Err(Error::DegenerateMap(_))
        ));
    }

    #[test]
    fn candidate_examples() {
        let set = candidates(100, 100, &square(25, &[0.5])).unwrap();
        assert_eq!(set.rects.len(), 9);
        assert_eq!(set.rects, enumerate_windows(100, 100, 50, 50, 25));

        let set = candidates(100, 100, &square(7, &[1.0])).unwrap();
        assert_eq!(set.rects, vec![Rect::new(0, 0, 100, 100)]);

        let set = candidates(100, 50, &square(10, &[1.0])).unwrap();
        let xs: Vec<u32> = set.rects.iter().map(|r| r.x).collect();
        assert_eq!(xs, vec![0, 10, 20, 30, 40, 50]);
        assert!(set.rects.iter().all(|r| r.y == 0 && r.w == 50 && r.h == 50));
    }

    #[test]
    fn candidates_include_flush_positions() {
        let set = candidates(107, 50, &square(20, &[1.0])).unwrap();
        let xs: Vec<u32> = set.rects.iter().map(|r| r.x).collect();
        assert_eq!(xs, vec![0, 20, 40, 57]);
    }

    #[test]
    fn candidates_non_square_and_infeasible() {
        let ar = AspectRatio::new(16, 9).unwrap();
        let cfg = CandidateConfig::new(ar, 10, vec![0.5, 1.0]).unwrap();
        let set = candidates(200, 200, &cfg).unwrap();
        assert!(set.rects.iter().all(|r| matches_ratio(r, ar, 0) && r.fits_within(200, 200)));
        assert!(set.rects.iter().any(|r| r.w == 192 && r.h == 108));

        let wide = AspectRatio::new(1000, 1).unwrap();
        let set = candidates(50, 50, &CandidateConfig::new(wide, 1, vec![1.0]).unwrap()).unwrap();
        assert!(set.rects.is_empty());
        assert_eq!(set.infeasible_scales, vec![1.0]);

        let near = AspectRatio::new(101, 100).unwrap();
        let set = candidates(80, 80, &CandidateConfig::new(near, 5, vec![1.0]).unwrap()).unwrap();
        assert!(!set.rects.is_empty());
        assert!(set.rects.iter().all(|r| matches_ratio(r, near, 1)));
    }

    #[test]
    fn candidate_config_validation() {
        assert!(CandidateConfig::new(AspectRatio::SQUARE, 0, vec![1.0]).is_err());
        assert!(CandidateConfig::new(AspectRatio::SQUARE, 1, vec![]).is_err());
        assert!(CandidateConfig::new(AspectRatio::SQUARE, 1, vec![0.0]).is_err());
        assert!(CandidateConfig::new(AspectRatio::SQUARE, 1, vec![1.2]).is_err());
        assert!(CandidateConfig::new(AspectRatio::SQUARE, 1, vec![0.9, 0.5]).is_err());
        assert_eq!(default_stride(400, 100), 10);
        assert_eq!(default_stride(20, 10), 1);
    }

    #[test]
    fn score_examples() {
        let u = ScoreMap::filled(4, 4, 1.0).unwrap();
        assert_eq!(score_crop(&u, &Rect::new(1, 1, 2, 2)).unwrap(), 0.25);
        assert_eq!(score_crop(&u, &Rect::new(0, 0, 4, 4)).unwrap(), 1.0);
        let spot = ScoreMap::from_fn(4, 4, |x, y| if (x, y) == (2, 1) { 3.0 } else { 0.0 }).unwrap();
        assert_eq!(score_crop(&spot, &Rect::new(2, 1, 1, 1)).unwrap(), 1.0);
        let z = ScoreMap::zeros(4, 4).unwrap();
        assert!(matches!(score_crop(&z, &Rect::new(0, 0, 1, 1)), Err(Error::DegenerateMap(_))));
        assert!(score_crop(&u, &Rect::new(3, 3, 2, 2)).is_err());
    }

    #[test]
    fn best_crop_left_half() {
        let a = ScoreMap::from_fn(200, 100, |x, _| if x < 100 { 1.0 } else { 0.0 }).unwrap();
        let cfg = square(10, &[1.0]);
        let ranking = best_crops(&a, None, CombineWeights::AESTHETIC, &cfg, 3).unwrap();
        assert_eq!(ranking.top().unwrap().rect, Rect::new(0, 0, 100, 100));
        assert_eq!(ranking.top().unwrap().score, 1.0);
        assert_eq!(ranking.crops.len(), 3);
        assert!(ranking.crops.windows(2).all(|p| p[0].score >= p[1].score));

        // Brute force over every candidate with direct summation.
        let set = candidates(200, 100, &cfg).unwrap();
        let brute = set
            .rects
            .iter()
            .map(|r| (a.naive_window_sum(r).unwrap(), *r))
            .max_by(|p, q| p.0.total_cmp(&q.0).then_with(|| q.1.x.cmp(&p.1.x)))
            .unwrap();
        assert_eq!(brute.1, ranking.top().unwrap().rect);
    }

    #[test]
    fn degenerate_weights_select_single_map() {
        let a = ScoreMap::from_fn(60, 20, |x, _| if x < 20 { 1.0 } else { 0.0 }).unwrap();
        let s = ScoreMap::from_fn(60, 20, |x, _| if x >= 40 { 1.0 } else { 0.0 }).unwrap();
        let cfg = square(5, &[1.0]);
        let only_a = best_crops(&a, Some(&s), CombineWeights::AESTHETIC, &cfg, 1).unwrap();
        let a_alone = best_crops(&a, None, CombineWeights::AESTHETIC, &cfg, 1).unwrap();
        assert_eq!(only_a, a_alone);
        let only_s = best_crops(&a, Some(&s), CombineWeights::SEMANTIC, &cfg, 1).unwrap();
        assert_eq!(only_s.top().unwrap().rect, Rect::new(40, 0, 20, 20));
        assert_eq!(only_a.top().unwrap().rect, Rect::new(0, 0, 20, 20));
    }

    #[test]
    fn empty_candidate_set_reports_reason() {
        let a = ScoreMap::filled(10, 10, 1.0).unwrap();
        let cfg = CandidateConfig::new(AspectRatio::new(100, 1).unwrap(), 1, vec![1.0]).unwrap();
        let r = best_crops(&a, None, CombineWeights::AESTHETIC, &cfg, 1).unwrap();
        assert!(r.crops.is_empty());
        assert!(r.reason.is_some());
    }

    #[test]
    fn concentrated_semantic_mass_scores_one() {
        let a = ScoreMap::filled(50, 30, 1.0).unwrap();
        let s = ScoreMap::from_fn(50, 30, |x, y| if (12..20).contains(&x) && (5..15).contains(&y) { 1.0 } else { 0.0 })
            .unwrap();
        let r = best_crops(&a, Some(&s), CombineWeights::SEMANTIC, &square(2, &[0.5, 1.0]), 1).unwrap();
        let top = r.top().unwrap();
        assert_eq!(top.score, 1.0);
        assert!(top.rect.contains_rect(&Rect::new(12, 5, 8, 10)));
    }

    #[test]
    fn ties_prefer_larger_then_top_left() {
        let a = ScoreMap::from_fn(30, 10, |x, y| if (x, y) == (15, 5) { 1.0 } else { 0.0 }).unwrap();
        let r = best_crops(&a, None, CombineWeights::AESTHETIC, &square(1, &[0.5, 1.0]), 50).unwrap();
        let top = r.top().unwrap();
        assert_eq!(top.rect, Rect::new(6, 0, 10, 10));
        assert!(r.crops.windows(2).all(|p| rank_order(&p[0], &p[1]) != Ordering::Greater));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ranking_is_scale_invariant(seed in any::<u64>(), k in prop_oneof![Just(0.1), Just(3.0), Just(1000.0)]) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (rng.random_range(8..40), rng.random_range(8..40));
            let c = ScoreMap::from_fn(w, h, |_, _| rng.random::<f64>()).unwrap();
            let cfg = square(rng.random_range(1..4), &[0.5, 0.8, 1.0]);
            let base = rank_candidates(&c, &cfg, 10).unwrap();
            let scaled = rank_candidates(&c.scaled(k).unwrap(), &cfg, 10).unwrap();
            let rects = |r: &CropRanking| r.crops.iter().map(|c| c.rect).collect::<Vec<_>>();
            prop_assert_eq!(rects(&base), rects(&scaled));
        }

        #[test]
        fn every_crop_matches_ratio(w in 3u32..80, h in 3u32..80, num in 1u32..5, den in 1u32..5, stride in 1u32..9) {
            let ar = AspectRatio::new(num, den).unwrap();
            let cfg = CandidateConfig::new(ar, stride, DEFAULT_SCALES.to_vec()).unwrap();
            let set = candidates(w, h, &cfg).unwrap();
            for r in &set.rects {
                prop_assert!(matches_ratio(r, ar, 1));
                prop_assert!(r.fits_within(w, h));
            }
        }

        #[test]
        fn enlarging_never_loses_mass(seed in any::<u64>(), x in 0u32..10, y in 0u32..10, w in 1u32..10, h in 1u32..10, gx in 0u32..5, gy in 0u32..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = ScoreMap::from_fn(30, 30, |_, _| rng.random::<f64>()).unwrap();
            let inner = Rect::new(x + gx, y + gy, w, h);
            let outer = Rect::new(x, y, w + 2 * gx, h + 2 * gy);
            let i = IntegralMap::new(&c);
            prop_assert!(i.window_sum(&outer).unwrap() >= i.window_sum(&inner).unwrap());
        }
    }
}
