//! Pairwise qualitative relations: distance (QDC), trajectory (QTC) and
//! rectangle algebra (RA, one Allen relation per axis).
//!
//! Every relation carries a stable integer code; those codes are both the
//! on-disk representation and the categorical model features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::BoundingBox;

/// Distance classes, ordered from nearest to farthest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QdcRelation {
    VeryClose = 0,
    Close = 1,
    Far = 2,
    VeryFar = 3,
}

impl QdcRelation {
    pub const CARDINALITY: usize = 4;
    pub const ALL: [QdcRelation; 4] = [
        QdcRelation::VeryClose,
        QdcRelation::Close,
        QdcRelation::Far,
        QdcRelation::VeryFar,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QdcThresholds {
    pub very_close: f64,
    pub close: f64,
    pub far: f64,
}

impl QdcThresholds {
    pub fn new(very_close: f64, close: f64, far: f64) -> Result<Self> {
        let t = Self {
            very_close,
            close,
            far,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.very_close.is_finite()
            && self.far.is_finite()
            && 0.0 < self.very_close
            && self.very_close < self.close
            && self.close < self.far;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(
                "calculi.qdc",
                format!(
                    "need 0 < very_close < close < far, got ({}, {}, {})",
                    self.very_close, self.close, self.far
                ),
            ))
        }
    }
}

impl Default for QdcThresholds {
    fn default() -> Self {
        Self {
            very_close: 2.0,
            close: 10.0,
            far: 25.0,
        }
    }
}

/// Classifies a centroid distance. Ties go to the nearer class.
pub fn qdc_from_distance(d: f64, t: &QdcThresholds) -> QdcRelation {
    if d <= t.very_close {
        QdcRelation::VeryClose
    } else if d <= t.close {
        QdcRelation::Close
    } else if d <= t.far {
        QdcRelation::Far
    } else {
        QdcRelation::VeryFar
    }
}

pub fn qdc_relation(b1: &BoundingBox, b2: &BoundingBox, t: &QdcThresholds) -> QdcRelation {
    qdc_from_distance(b1.centroid_distance(b2), t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QtcSymbol {
    Minus = 0,
    Zero = 1,
    Plus = 2,
}

impl QtcSymbol {
    pub const CARDINALITY: usize = 3;
    pub const ALL: [QtcSymbol; 3] = [QtcSymbol::Minus, QtcSymbol::Zero, QtcSymbol::Plus];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn flip(self) -> Self {
        match self {
            QtcSymbol::Minus => QtcSymbol::Plus,
            QtcSymbol::Zero => QtcSymbol::Zero,
            QtcSymbol::Plus => QtcSymbol::Minus,
        }
    }

    fn from_delta(delta: f64, eps: f64) -> Self {
        if delta < -eps {
            QtcSymbol::Minus
        } else if delta > eps {
            QtcSymbol::Plus
        } else {
            QtcSymbol::Zero
        }
    }
}

/// Three-character trajectory relation: `a`'s own motion relative to `b`,
/// `b`'s own motion relative to `a` (Minus approaching, Plus receding), and
/// the speed comparison of `a` against `b` (Minus slower, Plus faster).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QtcRelation {
    pub a_motion: QtcSymbol,
    pub b_motion: QtcSymbol,
    pub speed_cmp: QtcSymbol,
}

impl QtcRelation {
    pub const STATIC: QtcRelation = QtcRelation {
        a_motion: QtcSymbol::Zero,
        b_motion: QtcSymbol::Zero,
        speed_cmp: QtcSymbol::Zero,
    };

    pub fn new(a_motion: QtcSymbol, b_motion: QtcSymbol, speed_cmp: QtcSymbol) -> Self {
        Self {
            a_motion,
            b_motion,
            speed_cmp,
        }
    }

    /// The same relation seen with the two objects swapped.
    pub fn swapped(self) -> Self {
        Self {
            a_motion: self.b_motion,
            b_motion: self.a_motion,
            speed_cmp: self.speed_cmp.flip(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QtcTolerances {
    /// Distance change (m) below which an object counts as stable.
    pub distance: f64,
    /// Speed difference (m/frame) below which two speeds count as equal.
    pub speed: f64,
}

impl Default for QtcTolerances {
    fn default() -> Self {
        Self {
            distance: 0.1,
            speed: 0.1,
        }
    }
}

fn dist(p: (f64, f64), q: (f64, f64)) -> f64 {
    (p.0 - q.0).hypot(p.1 - q.1)
}

pub fn qtc_relation(
    a_prev: &BoundingBox,
    a_cur: &BoundingBox,
    b_prev: &BoundingBox,
    b_cur: &BoundingBox,
    tol: &QtcTolerances,
) -> QtcRelation {
    let (ap, ac, bp, bc) = (
        a_prev.center(),
        a_cur.center(),
        b_prev.center(),
        b_cur.center(),
    );
    let a_motion = QtcSymbol::from_delta(dist(ac, bp) - dist(ap, bp), tol.distance);
    let b_motion = QtcSymbol::from_delta(dist(bc, ap) - dist(bp, ap), tol.distance);
    let speed_cmp = QtcSymbol::from_delta(dist(ap, ac) - dist(bp, bc), tol.speed);
    QtcRelation::new(a_motion, b_motion, speed_cmp)
}

/// The thirteen interval relations. Codes are arranged so that the converse
/// of code `c` is `12 - c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AllenRelation {
    Before = 0,
    Meets = 1,
    Overlaps = 2,
    Starts = 3,
    During = 4,
    Finishes = 5,
    Equals = 6,
    FinishedBy = 7,
    Contains = 8,
    StartedBy = 9,
    OverlappedBy = 10,
    MetBy = 11,
    After = 12,
}

impl AllenRelation {
    pub const CARDINALITY: usize = 13;
    pub const ALL: [AllenRelation; 13] = [
        AllenRelation::Before,
        AllenRelation::Meets,
        AllenRelation::Overlaps,
        AllenRelation::Starts,
        AllenRelation::During,
        AllenRelation::Finishes,
        AllenRelation::Equals,
        AllenRelation::FinishedBy,
        AllenRelation::Contains,
        AllenRelation::StartedBy,
        AllenRelation::OverlappedBy,
        AllenRelation::MetBy,
        AllenRelation::After,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn converse(self) -> Self {
        Self::ALL[12 - self.code()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo < hi {
            Ok(Self { lo, hi })
        } else {
            Err(Error::InvalidParameter(format!(
                "degenerate interval [{lo}, {hi}]"
            )))
        }
    }
}

/// Allen relation of `i1` with respect to `i2`. Endpoint coincidence uses
/// exact comparison.
pub fn allen_relation(i1: Interval, i2: Interval) -> Result<AllenRelation> {
    use std::cmp::Ordering::*;
    use AllenRelation::*;

    for i in [i1, i2] {
        if i.lo.partial_cmp(&i.hi) != Some(Less) {
            return Err(Error::InvalidParameter(format!(
                "degenerate interval [{}, {}]",
                i.lo, i.hi
            )));
        }
    }
    let cmp = |x: f64, y: f64| x.partial_cmp(&y).expect("finite interval endpoints");
    let rel = match cmp(i1.hi, i2.lo) {
        Less => Before,
        Equal => Meets,
        Greater => match cmp(i1.lo, i2.hi) {
            Greater => After,
            Equal => MetBy,
            Less => match (cmp(i1.lo, i2.lo), cmp(i1.hi, i2.hi)) {
                (Less, Less) => Overlaps,
                (Less, Equal) => FinishedBy,
                (Less, Greater) => Contains,
                (Equal, Less) => Starts,
                (Equal, Equal) => Equals,
                (Equal, Greater) => StartedBy,
                (Greater, Less) => During,
                (Greater, Equal) => Finishes,
                (Greater, Greater) => OverlappedBy,
            },
        },
    };
    Ok(rel)
}

/// Rectangle algebra on world-frame axis-aligned extents: `(x relation, y relation)`.
pub fn ra_relation(b1: &BoundingBox, b2: &BoundingBox) -> (AllenRelation, AllenRelation) {
    let ((x1, x2), (y1, y2)) = b1.aabb();
    let ((u1, u2), (v1, v2)) = b2.aabb();
    // Valid boxes have positive extents, so the intervals are never degenerate.
    let x = allen_relation(Interval { lo: x1, hi: x2 }, Interval { lo: u1, hi: u2 })
        .expect("positive box extent");
    let y = allen_relation(Interval { lo: y1, hi: y2 }, Interval { lo: v1, hi: v2 })
        .expect("positive box extent");
    (x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalculiConfig {
    pub qdc: QdcThresholds,
    pub qtc: QtcTolerances,
}

impl CalculiConfig {
    pub fn validate(&self) -> Result<()> {
        self.qdc.validate()?;
        if !(self.qtc.distance >= 0.0 && self.qtc.speed >= 0.0) {
            return Err(Error::validation("calculi.qtc", "tolerances must be >= 0"));
        }
        Ok(())
    }
}
