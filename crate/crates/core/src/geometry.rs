//! Integer pixel rectangles, aspect ratios and the IOU metric.
//!
//! Rectangles are half-open: a rect covers the pixels `[x, x + w) × [y, y + h)`.

use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle. Used for detection boxes, ground-truth croppings
/// and candidate windows alike.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    /// Constructs a rect, rejecting zero width or height.
    pub fn try_new(x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        let r = Rect { x, y, w, h };
        r.ensure_non_degenerate()?;
        Ok(r)
    }

    pub fn ensure_non_degenerate(&self) -> Result<()> {
        if self.w == 0 || self.h == 0 {
            return Err(Error::invalid(format!("degenerate rect {self}")));
        }
        Ok(())
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn is_degenerate(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.right() <= width as u64 && self.bottom() <= height as u64
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn contains_point(&self, px: u32, py: u32) -> bool {
        px >= self.x && py >= self.y && (px as u64) < self.right() && (py as u64) < self.bottom()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x, self.y, self.w, self.h)
    }
}

/// The largest rectangle contained in both `a` and `b`, or `None` when they are disjoint.
pub fn intersect(a: &Rect, b: &Rect) -> Option<Rect> {
    let left = a.x.max(b.x);
    let top = a.y.max(b.y);
    let right = a.right().min(b.right());
    let bottom = a.bottom().min(b.bottom());
    if right <= left as u64 || bottom <= top as u64 {
        return None;
    }
    Some(Rect {
        x: left,
        y: top,
        w: (right - left as u64) as u32,
        h: (bottom - top as u64) as u32,
    })
}

/// Intersection over union. Degenerate rectangles are rejected rather than scored 0.
pub fn iou(a: &Rect, b: &Rect) -> Result<f64> {
    a.ensure_non_degenerate()?;
    b.ensure_non_degenerate()?;
    let inter = intersect(a, b).map_or(0, |r| r.area());
    let union = a.area() + b.area() - inter;
    Ok(inter as f64 / union as f64)
}

/// Width-to-height ratio, kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AspectRatio {
    num: u32,
    den: u32,
}

impl AspectRatio {
    pub const SQUARE: AspectRatio = AspectRatio { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::invalid(format!("aspect ratio {num}:{den} must be positive")));
        }
        let g = num.gcd(&den);
        Ok(AspectRatio {
            num: num / g,
            den: den / g,
        })
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Default for AspectRatio {
    fn default() -> Self {
        AspectRatio::SQUARE
    }
}

impl fmt::Display for AspectRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.num, self.den)
    }
}

impl FromStr for AspectRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (n, d) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("aspect ratio `{s}` is not of the form N:D")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .map_err(|_| Error::invalid(format!("aspect ratio `{s}` is not of the form N:D")))
        };
        AspectRatio::new(parse(n)?, parse(d)?)
    }
}

impl Serialize for AspectRatio {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AspectRatio {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// True iff `|w·den − h·num| ≤ tol·max(num, den)`.
pub fn matches_ratio(r: &Rect, ar: AspectRatio, tol: u32) -> bool {
    let lhs = r.w as i64 * ar.den as i64;
    let rhs = r.h as i64 * ar.num as i64;
    (lhs - rhs).abs() <= tol as i64 * ar.num.max(ar.den) as i64
}
