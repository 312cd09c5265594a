//! Independent reference implementations used as test oracles.

use qxg_roi::calculi::{QdcThresholds, QtcTolerances};
use qxg_roi::scene::BoundingBox;

/// Allen relation code by testing the thirteen endpoint definitions one by one.
pub fn oracle_allen(a: (f64, f64), b: (f64, f64)) -> usize {
    let defs: [(usize, bool); 13] = [
        (0, a.1 < b.0),
        (1, a.1 == b.0),
        (2, a.0 < b.0 && b.0 < a.1 && a.1 < b.1),
        (3, a.0 == b.0 && a.1 < b.1),
        (4, b.0 < a.0 && a.1 < b.1),
        (5, b.0 < a.0 && a.1 == b.1),
        (6, a.0 == b.0 && a.1 == b.1),
        (7, a.0 < b.0 && a.1 == b.1),
        (8, a.0 < b.0 && b.1 < a.1),
        (9, a.0 == b.0 && b.1 < a.1),
        (10, b.0 < a.0 && a.0 < b.1 && b.1 < a.1),
        (11, a.0 == b.1),
        (12, a.0 > b.1),
    ];
    let hits: Vec<usize> = defs.iter().filter(|d| d.1).map(|d| d.0).collect();
    assert_eq!(hits.len(), 1, "{a:?} {b:?} satisfy {hits:?}");
    hits[0]
}

pub fn corners(b: &BoundingBox) -> ((f64, f64), (f64, f64)) {
    let (s, c) = b.yaw.sin_cos();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (u, v) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let (lx, ly) = (u * b.length / 2.0, v * b.width / 2.0);
        xs.push(b.cx + lx * c - ly * s);
        ys.push(b.cy + lx * s + ly * c);
    }
    let span = |v: &[f64]| (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    (span(&xs), span(&ys))
}

pub fn oracle_qdc(d: f64, t: &QdcThresholds) -> usize {
    [t.very_close, t.close, t.far].iter().filter(|&&th| d > th).count()
}

fn sym(delta: f64, eps: f64) -> usize {
    if delta.abs() <= eps {
        1
    } else if delta < 0.0 {
        0
    } else {
        2
    }
}

pub fn euclid(p: (f64, f64), q: (f64, f64)) -> f64 {
    ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
}

pub fn oracle_qtc(ap: &BoundingBox, ac: &BoundingBox, bp: &BoundingBox, bc: &BoundingBox, tol: &QtcTolerances) -> [usize; 3] {
    let (ap, ac, bp, bc) = ((ap.cx, ap.cy), (ac.cx, ac.cy), (bp.cx, bp.cy), (bc.cx, bc.cy));
    [
        sym(euclid(ac, bp) - euclid(ap, bp), tol.distance),
        sym(euclid(bc, ap) - euclid(bp, ap), tol.distance),
        sym(euclid(ap, ac) - euclid(bp, bc), tol.speed),
    ]
}


/// Node ids and, per unordered id pair, the frames in which both objects
/// have a box, enumerated directly from the scene.
pub fn oracle_cooccurrence(
    scene: &qxg_roi::scene::Scene,
    frame: usize,
    window: usize,
) -> (
    std::collections::BTreeSet<String>,
    std::collections::BTreeMap<(String, String), std::collections::BTreeSet<usize>>,
) {
    let start = (frame + 1).saturating_sub(window);
    let mut nodes = std::collections::BTreeSet::new();
    let mut edges = std::collections::BTreeMap::new();
    for o in &scene.objects {
        if (start..=frame).any(|f| o.boxes.contains_key(&f)) {
            nodes.insert(o.id.clone());
        }
    }
    for a in &scene.objects {
        for b in &scene.objects {
            if a.id >= b.id {
                continue;
            }
            let common: std::collections::BTreeSet<usize> =
                (start..=frame).filter(|f| a.boxes.contains_key(f) && b.boxes.contains_key(f)).collect();
            if !common.is_empty() {
                edges.insert((a.id.clone(), b.id.clone()), common);
            }
        }
    }
    (nodes, edges)
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + c
}

fn clamp_prob(p: f64, eps: f64) -> f64 {
    p.max(eps).min(1.0 - eps)
}

/// `-log p_t` and `1 - p_t` with `log1p` for the complement.
fn nll_and_miss(p: f64, y: u8) -> (f64, f64) {
    if y == 1 {
        (-p.ln(), 1.0 - p)
    } else {
        (-(-p).ln_1p(), p)
    }
}

pub fn oracle_wbce(probs: &[f64], labels: &[u8], w_p: f64, w_n: f64, eps: f64) -> f64 {
    let terms = probs.iter().zip(labels).map(|(&p, &y)| {
        let (nll, _) = nll_and_miss(clamp_prob(p, eps), y);
        nll * if y == 1 { w_p } else { w_n }
    });
    compensated_sum(terms) / labels.len() as f64
}

pub fn oracle_focal(probs: &[f64], labels: &[u8], alpha: f64, gamma: f64, eps: f64) -> f64 {
    let terms = probs.iter().zip(labels).map(|(&p, &y)| {
        let (nll, miss) = nll_and_miss(clamp_prob(p, eps), y);
        let a = if y == 1 { alpha } else { 1.0 - alpha };
        a * (gamma * miss.ln()).exp() * nll
    });
    compensated_sum(terms) / labels.len() as f64
}

/// Mann–Whitney AUC by comparing every positive with every negative.
pub fn oracle_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1;
                twice += if si > sj { 2 } else if si == sj { 1 } else { 0 };
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

fn ego_distance(scene: &qxg_roi::scene::Scene, id: &str, f: usize) -> Option<f64> {
    let ego = scene.ego()?.box_at(f)?;
    let b = scene.object(id)?.box_at(f)?;
    Some(euclid((ego.cx, ego.cy), (b.cx, b.cy)))
}

/// Every annotated frame of a proximity scene names exactly one object that
/// is within `very_close` of the ego and closer than in the neighbouring
/// frame, and no other such object is nearer.
pub fn check_proximity_scene(scene: &qxg_roi::scene::Scene, very_close: f64) -> Result<(), String> {
    let approaching = |id: &str, f: usize| -> bool {
        let now = ego_distance(scene, id, f);
        match (f.checked_sub(1).and_then(|g| ego_distance(scene, id, g)), now) {
            (Some(before), Some(now)) => now < before,
            (None, Some(now)) => ego_distance(scene, id, f + 1).is_some_and(|next| next < now),
            _ => false,
        }
    };
    for f in 0..scene.frame_count {
        let ids = scene.relevance.get(&f).ok_or(format!("frame {f} unannotated"))?;
        if ids.len() != 1 {
            return Err(format!("frame {f}: {} relevant objects", ids.len()));
        }
        let id = ids.iter().next().unwrap();
        let d = ego_distance(scene, id, f).ok_or(format!("frame {f}: {id} absent"))?;
        if d > very_close || !approaching(id, f) {
            return Err(format!("frame {f}: {id} at {d} not a very-close approacher"));
        }
        for o in &scene.objects {
            if o.id == scene.ego_id || o.id == *id {
                continue;
            }
            if let Some(od) = ego_distance(scene, &o.id, f) {
                if od <= very_close && approaching(&o.id, f) && od < d {
                    return Err(format!("frame {f}: {} is a nearer candidate", o.id));
                }
            }
        }
    }
    Ok(())
}

/// Contextual rule: with some vehicle within `very_close` of the ego the
/// nearest pedestrian is relevant, otherwise the nearest vehicle.
pub fn check_contextual_scene(scene: &qxg_roi::scene::Scene, very_close: f64) -> Result<(), String> {
    use qxg_roi::scene::ObjectType::*;
    let vehicle = |k| matches!(k, Car | Truck | Bus | Bicycle | Motorcycle);
    for f in 0..scene.frame_count {
        let present: Vec<(&qxg_roi::scene::TrackedObject, f64)> = scene
            .objects
            .iter()
            .filter(|o| o.id != scene.ego_id)
            .filter_map(|o| ego_distance(scene, &o.id, f).map(|d| (o, d)))
            .collect();
        let crowded = present.iter().any(|(o, d)| vehicle(o.kind) && *d <= very_close);
        let want_ped = crowded;
        let best = present
            .iter()
            .filter(|(o, _)| if want_ped { o.kind == Pedestrian } else { vehicle(o.kind) })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(o, _)| o.id.clone())
            .ok_or(format!("frame {f}: no candidate"))?;
        let ids = scene.relevance.get(&f).ok_or(format!("frame {f} unannotated"))?;
        if ids.len() != 1 || !ids.contains(&best) {
            return Err(format!("frame {f}: labelled {ids:?}, oracle {best}"));
        }
    }
    Ok(())
}

pub type Structure = (
    std::collections::BTreeSet<String>,
    std::collections::BTreeMap<(String, String), std::collections::BTreeSet<usize>>,
);

/// Node ids and per-edge chain frames of a built graph, in the shape
/// returned by [`oracle_cooccurrence`]. Panics if an edge runs from the
/// larger id.
pub fn structure(q: &qxg_roi::qxg::Qxg) -> Structure {
    let nodes = q.nodes.iter().map(|n| n.id.clone()).collect();
    let edges = q
        .edges
        .iter()
        .map(|e| {
            let (a, b) = (q.nodes[e.a].id.clone(), q.nodes[e.b].id.clone());
            assert!(a < b, "edges run from the smaller id");
            ((a, b), e.chain.keys().copied().collect())
        })
        .collect();
    (nodes, edges)
}
