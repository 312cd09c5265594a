//! Labeled synthetic scenes for desk-scale experiments.
//!
//! The ego is a static car at the origin facing +x. Every other object moves
//! on a straight line at constant velocity. Relevance follows one of two rules:
//!
//! * `proximity_approach`: the relevant object is very close to the ego (QDC)
//!   and approaching it. If several qualify, the nearest one is relevant.
//! * `contextual`: while some vehicle is very close to the ego the nearest
//!   pedestrian is relevant, otherwise the nearest vehicle is. The pair
//!   features of the relevant candidates look the same in both situations,
//!   so only the rest of the scene tells them apart.
//!
//! Scenes violating the one-relevant-object-per-frame contract are redrawn.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculi::QdcThresholds;
use crate::error::{Error, Result};
use crate::scene::{BoundingBox, ObjectType, Scene, TrackedObject};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthRule {
    ProximityApproach,
    Contextual,
}

impl SynthRule {
    pub fn name(self) -> &'static str {
        match self {
            SynthRule::ProximityApproach => "proximity_approach",
            SynthRule::Contextual => "contextual",
        }
    }
}

impl std::str::FromStr for SynthRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proximity_approach" => Ok(SynthRule::ProximityApproach),
            "contextual" => Ok(SynthRule::Contextual),
            _ => Err(Error::validation("rule", format!("unknown rule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub n_scenes: usize,
    /// Object count per scene, ego included.
    pub objects_min: usize,
    pub objects_max: usize,
    pub frames: usize,
    pub rule: SynthRule,
    /// Share of proximity scenes holding several very-close approaching
    /// pedestrians with identical pair relations; only the nearest is relevant.
    pub ambiguous_fraction: f64,
    /// Inclusive range of such candidates in an ambiguous scene.
    pub candidates: (usize, usize),
    /// Chance that a proximity scene holds a very-close receding object.
    pub receding_prob: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_scenes: 100,
            objects_min: 5,
            objects_max: 15,
            frames: 5,
            rule: SynthRule::ProximityApproach,
            ambiguous_fraction: 0.0,
            candidates: (3, 4),
            receding_prob: 0.3,
        }
    }
}

/// Longest proximity scene whose target can keep approaching while very close.
pub const MAX_PROXIMITY_FRAMES: usize = 15;

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::validation(format!("synth.{field}"), msg));
        if self.objects_min < 2 {
            return bad("objects_min", "must be >= 2 (ego plus one object)".into());
        }
        if self.objects_min > self.objects_max {
            return bad(
                "objects_min",
                format!("{} exceeds objects_max {}", self.objects_min, self.objects_max),
            );
        }
        if self.frames < 2 {
            return bad("frames", "must be >= 2".into());
        }
        if self.rule == SynthRule::ProximityApproach && self.frames > MAX_PROXIMITY_FRAMES {
            return bad("frames", format!("proximity scenes support at most {MAX_PROXIMITY_FRAMES} frames"));
        }
        if self.rule == SynthRule::Contextual && self.objects_min < 4 {
            return bad("objects_min", "contextual scenes need >= 4 objects".into());
        }
        if !(0.0..=1.0).contains(&self.ambiguous_fraction) {
            return bad("ambiguous_fraction", "must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.receding_prob) {
            return bad("receding_prob", "must lie in [0, 1]".into());
        }
        let (lo, hi) = self.candidates;
        if lo < 2 || lo > hi {
            return bad("candidates", format!("need 2 <= min <= max, got ({lo}, {hi})"));
        }
        Ok(())
    }
}

const EGO_ID: &str = "ego";
const MOVERS: [ObjectType; 5] = [
    ObjectType::Car,
    ObjectType::Pedestrian,
    ObjectType::Bicycle,
    ObjectType::Motorcycle,
    ObjectType::Other,
];
const VEHICLES: [ObjectType; 5] = [
    ObjectType::Car,
    ObjectType::Truck,
    ObjectType::Bus,
    ObjectType::Bicycle,
    ObjectType::Motorcycle,
];

fn footprint(kind: ObjectType) -> (f64, f64) {
    match kind {
        ObjectType::Ego | ObjectType::Car => (1.9, 4.5),
        ObjectType::Truck => (2.5, 8.0),
        ObjectType::Bus => (2.9, 11.0),
        ObjectType::Pedestrian => (0.6, 0.6),
        ObjectType::Bicycle => (0.6, 1.7),
        ObjectType::Motorcycle => (0.8, 2.1),
        ObjectType::TrafficCone => (0.4, 0.4),
        ObjectType::Barrier => (0.5, 2.0),
        ObjectType::Other => (1.0, 1.0),
    }
}

fn any_kind(rng: &mut ChaCha8Rng) -> ObjectType {
    ObjectType::ALL[rng.random_range(1..ObjectType::COUNT)]
}

fn pick(rng: &mut ChaCha8Rng, kinds: &[ObjectType]) -> ObjectType {
    kinds[rng.random_range(0..kinds.len())]
}

/// Constant-velocity track before ids are assigned.
#[derive(Debug, Clone)]
struct Track {
    kind: ObjectType,
    start: (f64, f64),
    velocity: (f64, f64),
    yaw: f64,
    frames: std::ops::Range<usize>,
}

impl Track {
    fn at(&self, f: usize) -> (f64, f64) {
        let t = f as f64;
        (self.start.0 + t * self.velocity.0, self.start.1 + t * self.velocity.1)
    }

    fn dist(&self, f: usize) -> f64 {
        let (x, y) = self.at(f);
        x.hypot(y)
    }

    fn present(&self, f: usize) -> bool {
        self.frames.contains(&f)
    }

    /// Moves radially from distance `r0` along `theta` by `rate` per frame
    /// (negative rate approaches the ego).
    fn radial(kind: ObjectType, theta: f64, r0: f64, rate: f64, frames: usize) -> Self {
        let u = (theta.cos(), theta.sin());
        let yaw = if rate < 0.0 { wrap(theta + PI) } else { wrap(theta) };
        Self {
            kind,
            start: (r0 * u.0, r0 * u.1),
            velocity: (rate * u.0, rate * u.1),
            yaw,
            frames: 0..frames,
        }
    }

    fn drifting(rng: &mut ChaCha8Rng, kind: ObjectType, r0: f64, max_speed: f64, frames: usize) -> Self {
        let theta = rng.random_range(-PI..PI);
        let speed = if max_speed > 0.0 { rng.random_range(0.0..max_speed) } else { 0.0 };
        let heading = rng.random_range(-PI..PI);
        Self {
            kind,
            start: (r0 * theta.cos(), r0 * theta.sin()),
            velocity: (speed * heading.cos(), speed * heading.sin()),
            yaw: heading,
            frames: 0..frames,
        }
    }
}

fn wrap(a: f64) -> f64 {
    let mut a = a;
    while a > PI {
        a -= 2.0 * PI;
    }
    while a < -PI {
        a += 2.0 * PI;
    }
    a
}

/// Approaching at `f`: distance shrinks from the previous present frame, or
/// toward the next one where there is no previous frame.
fn approaching(t: &Track, f: usize) -> bool {
    if f > 0 && t.present(f - 1) {
        t.dist(f) < t.dist(f - 1)
    } else if t.present(f + 1) {
        t.dist(f + 1) < t.dist(f)
    } else {
        false
    }
}

fn nearest(tracks: &[Track], f: usize, keep: impl Fn(&Track) -> bool) -> Option<usize> {
    tracks
        .iter()
        .enumerate()
        .filter(|(_, t)| t.present(f) && keep(t))
        .min_by(|a, b| a.1.dist(f).total_cmp(&b.1.dist(f)))
        .map(|(i, _)| i)
}

/// Far object that never comes within `min_dist` of the ego.
fn far_track(rng: &mut ChaCha8Rng, frames: usize, r: (f64, f64), min_dist: f64, kind: ObjectType) -> Track {
    loop {
        let r0 = rng.random_range(r.0..r.1);
        let max_speed = if kind == ObjectType::TrafficCone || kind == ObjectType::Barrier { 0.0 } else { 0.6 };
        let mut t = Track::drifting(rng, kind, r0, max_speed, frames);
        if rng.random_bool(0.2) {
            let a = rng.random_range(0..frames);
            let b = rng.random_range(a + 1..=frames);
            t.frames = a..b;
        }
        if (0..frames).all(|f| t.dist(f) > min_dist) {
            return t;
        }
    }
}

struct Layout {
    tracks: Vec<Track>,
    ambiguous: bool,
}

fn proximity_layout(rng: &mut ChaCha8Rng, p: &SynthParams, n_others: usize) -> Layout {
    let steps = (p.frames - 1) as f64;
    let mut tracks = Vec::with_capacity(n_others);
    let ambiguous = n_others >= p.candidates.0 && rng.random_bool(p.ambiguous_fraction);
    if ambiguous {
        // lateral pedestrians: RA is (contains, before/after) throughout
        let k = rng.random_range(p.candidates.0..=p.candidates.1.min(n_others));
        for _ in 0..k {
            let rate = rng.random_range(0.11..0.125);
            let base = 1.45 + steps * rate;
            let lo = if base <= 1.95 { base } else { (0.4 + steps * rate).min(1.94) };
            let r0 = rng.random_range(lo..=1.95);
            let side = if rng.random_bool(0.5) { FRAC_PI_2 } else { -FRAC_PI_2 };
            let theta = side + rng.random_range(-0.35..0.35);
            tracks.push(Track::radial(ObjectType::Pedestrian, theta, r0, -rate, p.frames));
        }
    } else {
        let r0 = rng.random_range(1.4..1.95);
        let max_rate = ((r0 - 0.3) / steps).min(0.25);
        let rate = rng.random_range(0.12..max_rate.max(0.121));
        let theta = rng.random_range(-PI..PI);
        tracks.push(Track::radial(pick(rng, &MOVERS), theta, r0, -rate, p.frames));
    }
    if tracks.len() < n_others && rng.random_bool(p.receding_prob) {
        let r0 = rng.random_range(0.5..1.2);
        let rate = rng.random_range(0.15..0.3);
        let theta = rng.random_range(-PI..PI);
        tracks.push(Track::radial(pick(rng, &MOVERS), theta, r0, rate, p.frames));
    }
    while tracks.len() < n_others {
        let roll: f64 = rng.random();
        let t = if roll < 0.25 {
            let r0 = rng.random_range(4.5..9.0);
            let max_rate = ((r0 - 2.6) / steps).min(0.4);
            let rate = rng.random_range(0.0..max_rate);
            Track::radial(pick(rng, &MOVERS), rng.random_range(-PI..PI), r0, -rate, p.frames)
        } else if roll < 0.5 {
            let kind = any_kind(rng);
            let r0 = rng.random_range(2.6..10.0);
            Track::radial(kind, rng.random_range(-PI..PI), r0, 0.0, p.frames)
        } else {
            let kind = any_kind(rng);
            far_track(rng, p.frames, (10.0, 40.0), 3.0, kind)
        };
        tracks.push(t);
    }
    Layout { tracks, ambiguous }
}

/// Relevant track per frame under the proximity rule, or `None` when the
/// layout breaks the generator's contract.
fn proximity_labels(layout: &Layout, p: &SynthParams, thresholds: &QdcThresholds) -> Option<Vec<usize>> {
    let very_close = |t: &Track, f: usize| t.dist(f) <= thresholds.very_close;
    let mut out = Vec::with_capacity(p.frames);
    for f in 0..p.frames {
        let qualifying: Vec<usize> = (0..layout.tracks.len())
            .filter(|&i| {
                let t = &layout.tracks[i];
                t.present(f) && very_close(t, f) && approaching(t, f)
            })
            .collect();
        let expected = if layout.ambiguous { qualifying.len() >= 2 } else { qualifying.len() == 1 };
        if !expected {
            return None;
        }
        // every very-close object must move clearly, so its trajectory relation is not stable
        let clear = layout.tracks.iter().all(|t| {
            !t.present(f) || !very_close(t, f) || {
                let g = if f > 0 { f - 1 } else { f + 1 };
                (t.dist(f) - t.dist(g)).abs() > 0.1 + 1e-6
            }
        });
        if !clear {
            return None;
        }
        let best = qualifying
            .iter()
            .copied()
            .min_by(|&a, &b| layout.tracks[a].dist(f).total_cmp(&layout.tracks[b].dist(f)))?;
        out.push(best);
    }
    Some(out)
}

fn contextual_layout(rng: &mut ChaCha8Rng, p: &SynthParams, n_others: usize) -> Layout {
    let close = |rng: &mut ChaCha8Rng, kind: ObjectType| loop {
        let r0 = rng.random_range(3.0..9.0);
        let t = Track::drifting(rng, kind, r0, 0.25, p.frames);
        if (0..p.frames).all(|f| (2.6..9.5).contains(&t.dist(f))) {
            return t;
        }
    };
    let mut tracks = vec![close(rng, ObjectType::Pedestrian)];
    let vehicle = pick(rng, &VEHICLES);
    tracks.push(close(rng, vehicle));
    if rng.random_bool(0.5) {
        let kind = pick(rng, &VEHICLES);
        let t = loop {
            let r0 = rng.random_range(1.0..1.8);
            let t = Track::drifting(rng, kind, r0, 0.03, p.frames);
            if (0..p.frames).all(|f| t.dist(f) < 1.95) {
                break t;
            }
        };
        tracks.push(t);
    }
    while tracks.len() < n_others {
        let kind = any_kind(rng);
        tracks.push(far_track(rng, p.frames, (12.0, 40.0), 11.0, kind));
    }
    Layout {
        tracks,
        ambiguous: false,
    }
}

fn contextual_labels(layout: &Layout, p: &SynthParams, thresholds: &QdcThresholds) -> Option<Vec<usize>> {
    (0..p.frames)
        .map(|f| {
            let crowded = layout
                .tracks
                .iter()
                .any(|t| t.present(f) && t.kind.is_vehicle() && t.dist(f) <= thresholds.very_close);
            if crowded {
                nearest(&layout.tracks, f, |t| t.kind == ObjectType::Pedestrian)
            } else {
                nearest(&layout.tracks, f, |t| t.kind.is_vehicle())
            }
        })
        .collect()
}

fn to_scene(scene_id: String, layout: Layout, labels: &[usize], frames: usize, rng: &mut ChaCha8Rng) -> Scene {
    // shuffle so the relevant role does not map to a fixed id
    let mut order: Vec<usize> = (0..layout.tracks.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut id_of = vec![String::new(); order.len()];
    let (ew, el) = footprint(ObjectType::Ego);
    let mut objects = vec![TrackedObject {
        id: EGO_ID.into(),
        kind: ObjectType::Ego,
        boxes: (0..frames).map(|f| (f, BoundingBox::new(0.0, 0.0, ew, el, 0.0))).collect(),
    }];
    for (slot, &i) in order.iter().enumerate() {
        let t = &layout.tracks[i];
        let id = format!("obj_{slot:03}");
        id_of[i] = id.clone();
        let (w, l) = footprint(t.kind);
        let boxes: BTreeMap<usize, BoundingBox> = t
            .frames
            .clone()
            .map(|f| {
                let (x, y) = t.at(f);
                (f, BoundingBox::new(x, y, w, l, t.yaw))
            })
            .collect();
        objects.push(TrackedObject {
            id,
            kind: t.kind,
            boxes,
        });
    }
    let relevance = labels
        .iter()
        .enumerate()
        .map(|(f, &i)| (f, BTreeSet::from([id_of[i].clone()])))
        .collect();
    Scene {
        scene_id,
        ego_id: EGO_ID.into(),
        frame_count: frames,
        objects,
        relevance,
    }
}

/// Deterministic in `(seed, params)`; every frame of every scene carries
/// exactly one relevant object.
pub fn generate_synthetic_dataset(seed: u64, params: &SynthParams) -> Result<Vec<Scene>> {
    params.validate()?;
    let thresholds = QdcThresholds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes = Vec::with_capacity(params.n_scenes);
    for s in 0..params.n_scenes {
        let n_objects = rng.random_range(params.objects_min..=params.objects_max);
        let n_others = n_objects - 1;
        let (layout, labels) = loop {
            let layout = match params.rule {
                SynthRule::ProximityApproach => proximity_layout(&mut rng, params, n_others),
                SynthRule::Contextual => contextual_layout(&mut rng, params, n_others),
            };
            let labels = match params.rule {
                SynthRule::ProximityApproach => proximity_labels(&layout, params, &thresholds),
                SynthRule::Contextual => contextual_labels(&layout, params, &thresholds),
            };
            if let Some(labels) = labels {
                break (layout, labels);
            }
        };
        let scene = to_scene(format!("scene_{s:04}"), layout, &labels, params.frames, &mut rng);
        debug_assert!(scene.validate().is_ok());
        scenes.push(scene);
    }
    Ok(scenes)
}
