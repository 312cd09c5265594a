//! Qualitative Explainable Graph construction over a frame window.
//!
//! Nodes are the objects present in the window; an undirected edge joins
//! every pair that co-occurs in at least one window frame, and carries the
//! relation chain (one [`RelationTuple`] per co-occurrence frame).
//!
//! # JSON layout
//!
//! ```text
//! {
//!   "scene_id": "s0", "frame": 2, "window": [0, 2], "ego_index": 0,
//!   "nodes": [ {"id": "ego", "type": "ego"}, ... ],
//!   "edges": [ {"a": 0, "b": 1, "chain": {"0": [qdc, qtc1, qtc2, qtc3, ra_x, ra_y], ...}} ]
//! }
//! ```
//!
//! Edge endpoints are node indices ordered so that `nodes[a].id < nodes[b].id`;
//! every relation in the chain is computed with `a` as the first object.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calculi::{
    qdc_relation, qtc_relation, ra_relation, AllenRelation, CalculiConfig, QdcRelation,
    QtcRelation, QtcSymbol,
};
use crate::error::{Error, Result};
use crate::scene::{parse_frame_key, ObjectType, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RelationTuple {
    pub qdc: QdcRelation,
    pub qtc: QtcRelation,
    pub ra_x: AllenRelation,
    pub ra_y: AllenRelation,
}

/// Number of categories of each of the six edge features.
pub const EDGE_FEATURE_CARDINALITIES: [usize; 6] = [
    QdcRelation::CARDINALITY,
    QtcSymbol::CARDINALITY,
    QtcSymbol::CARDINALITY,
    QtcSymbol::CARDINALITY,
    AllenRelation::CARDINALITY,
    AllenRelation::CARDINALITY,
];

/// `[qdc, qtc_a, qtc_b, qtc_speed, ra_x, ra_y]` relation codes.
pub type EdgeFeatureVector = [u8; 6];

impl RelationTuple {
    pub fn codes(&self) -> EdgeFeatureVector {
        [
            self.qdc.code() as u8,
            self.qtc.a_motion.code() as u8,
            self.qtc.b_motion.code() as u8,
            self.qtc.speed_cmp.code() as u8,
            self.ra_x.code() as u8,
            self.ra_y.code() as u8,
        ]
    }

    pub fn from_codes(codes: &[u8; 6]) -> Option<Self> {
        Some(Self {
            qdc: QdcRelation::from_code(codes[0] as usize)?,
            qtc: QtcRelation::new(
                QtcSymbol::from_code(codes[1] as usize)?,
                QtcSymbol::from_code(codes[2] as usize)?,
                QtcSymbol::from_code(codes[3] as usize)?,
            ),
            ra_x: AllenRelation::from_code(codes[4] as usize)?,
            ra_y: AllenRelation::from_code(codes[5] as usize)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QxgNode {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: ObjectType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QxgEdge {
    pub a: usize,
    pub b: usize,
    pub chain: BTreeMap<usize, RelationTuple>,
}

impl QxgEdge {
    pub fn other(&self, node: usize) -> Option<usize> {
        if self.a == node {
            Some(self.b)
        } else if self.b == node {
            Some(self.a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Qxg {
    pub scene_id: String,
    /// Classification frame; the last frame of the window.
    pub frame: usize,
    pub window: (usize, usize),
    pub ego_index: usize,
    pub nodes: Vec<QxgNode>,
    pub edges: Vec<QxgEdge>,
}

/// Builds the graph for the window `[frame - window + 1, frame]` (clamped at 0).
pub fn build_qxg(scene: &Scene, frame: usize, window: usize, cfg: &CalculiConfig) -> Result<Qxg> {
    if frame >= scene.frame_count {
        return Err(Error::InvalidParameter(format!(
            "frame {frame} outside scene {} with {} frames",
            scene.scene_id, scene.frame_count
        )));
    }
    if window == 0 {
        return Err(Error::InvalidParameter("window must be >= 1".into()));
    }
    let start = (frame + 1).saturating_sub(window);
    let frames = start..=frame;

    let present: Vec<usize> = scene
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| o.boxes.range(frames.clone()).next().is_some())
        .map(|(i, _)| i)
        .collect();
    let nodes: Vec<QxgNode> = present
        .iter()
        .map(|&i| QxgNode {
            id: scene.objects[i].id.clone(),
            kind: scene.objects[i].kind,
        })
        .collect();
    let ego_index = nodes
        .iter()
        .position(|n| n.id == scene.ego_id)
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "ego {:?} absent from window [{start}, {frame}] of scene {}",
                scene.ego_id, scene.scene_id
            ))
        })?;

    let mut edges = Vec::new();
    for i in 0..present.len() {
        for j in i + 1..present.len() {
            // orient every relation from the smaller id to the larger one
            let (a, b) = if nodes[i].id < nodes[j].id { (i, j) } else { (j, i) };
            let (oa, ob) = (&scene.objects[present[a]], &scene.objects[present[b]]);
            let mut chain = BTreeMap::new();
            for f in frames.clone() {
                let (Some(ba), Some(bb)) = (oa.box_at(f), ob.box_at(f)) else {
                    continue;
                };
                let prev = if f > start {
                    oa.box_at(f - 1).zip(ob.box_at(f - 1))
                } else {
                    None
                };
                let qtc = match prev {
                    Some((pa, pb)) => qtc_relation(pa, ba, pb, bb, &cfg.qtc),
                    None => QtcRelation::STATIC,
                };
                let (ra_x, ra_y) = ra_relation(ba, bb);
                chain.insert(
                    f,
                    RelationTuple {
                        qdc: qdc_relation(ba, bb, &cfg.qdc),
                        qtc,
                        ra_x,
                        ra_y,
                    },
                );
            }
            if !chain.is_empty() {
                edges.push(QxgEdge { a, b, chain });
            }
        }
    }

    Ok(Qxg {
        scene_id: scene.scene_id.clone(),
        frame,
        window: (start, frame),
        ego_index,
        nodes,
        edges,
    })
}

/// Feature codes of `edge` at `frame`: the chain entry at that frame, else
/// the latest one before it, else the earliest one.
pub fn edge_features(edge: &QxgEdge, frame: usize) -> EdgeFeatureVector {
    let tuple = edge
        .chain
        .range(..=frame)
        .next_back()
        .or_else(|| edge.chain.iter().next())
        .map(|(_, t)| t)
        .expect("edge chain is never empty");
    tuple.codes()
}

/// Ego-incident edges as `(edge index, neighbor node)`, ascending by neighbor.
pub fn extract_star(qxg: &Qxg) -> Vec<(usize, usize)> {
    let mut star: Vec<(usize, usize)> = qxg
        .edges
        .iter()
        .enumerate()
        .filter_map(|(k, e)| e.other(qxg.ego_index).map(|n| (k, n)))
        .collect();
    star.sort_by_key(|&(_, n)| n);
    star
}

/// 1 for each star neighbor listed as relevant at `frame`, else 0.
pub fn label_star(qxg: &Qxg, scene: &Scene, frame: usize) -> Vec<u8> {
    let relevant = scene.relevance.get(&frame);
    extract_star(qxg)
        .into_iter()
        .map(|(_, n)| {
            let id = &qxg.nodes[n].id;
            u8::from(relevant.is_some_and(|set| set.contains(id)))
        })
        .collect()
}

impl Qxg {
    pub fn validate(&self) -> Result<()> {
        let (start, end) = self.window;
        if start > end || self.frame != end {
            return Err(Error::validation(
                "window",
                format!("window {:?} does not end at frame {}", self.window, self.frame),
            ));
        }
        if self.ego_index >= self.nodes.len() {
            return Err(Error::validation(
                "ego_index",
                format!("{} out of range for {} nodes", self.ego_index, self.nodes.len()),
            ));
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !ids.insert(n.id.as_str()) {
                return Err(Error::validation(
                    format!("nodes[{i}].id"),
                    format!("duplicate id {:?}", n.id),
                ));
            }
        }
        let mut pairs = std::collections::BTreeSet::new();
        for (k, e) in self.edges.iter().enumerate() {
            let path = format!("edges[{k}]");
            if e.a >= self.nodes.len() || e.b >= self.nodes.len() {
                return Err(Error::validation(path, "endpoint references a missing node"));
            }
            if e.a == e.b {
                return Err(Error::validation(path, "self-loop"));
            }
            if !pairs.insert((e.a.min(e.b), e.a.max(e.b))) {
                return Err(Error::validation(path, "duplicate edge"));
            }
            if e.chain.is_empty() {
                return Err(Error::validation(format!("{path}.chain"), "must not be empty"));
            }
            if let Some(f) = e.chain.keys().find(|f| **f < start || **f > end) {
                return Err(Error::validation(
                    format!("{path}.chain"),
                    format!("frame {f} outside window"),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&RawQxg::from(self)).expect("qxg serialization is infallible")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawQxg = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            what: format!("qxg at {}", e.path()),
            source: e.into_inner(),
        })?;
        let qxg = raw.into_qxg()?;
        qxg.validate()?;
        Ok(qxg)
    }
}

pub fn serialize_qxg(qxg: &Qxg, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, qxg.to_json_string()).map_err(|e| Error::io(path, e))
}

pub fn deserialize_qxg(path: impl AsRef<Path>) -> Result<Qxg> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Qxg::from_json_str(&text)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    a: usize,
    b: usize,
    chain: BTreeMap<String, [u8; 6]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawQxg {
    scene_id: String,
    frame: usize,
    window: (usize, usize),
    ego_index: usize,
    nodes: Vec<QxgNode>,
    edges: Vec<RawEdge>,
}

impl From<&Qxg> for RawQxg {
    fn from(q: &Qxg) -> Self {
        RawQxg {
            scene_id: q.scene_id.clone(),
            frame: q.frame,
            window: q.window,
            ego_index: q.ego_index,
            nodes: q.nodes.clone(),
            edges: q
                .edges
                .iter()
                .map(|e| RawEdge {
                    a: e.a,
                    b: e.b,
                    chain: e.chain.iter().map(|(f, t)| (f.to_string(), t.codes())).collect(),
                })
                .collect(),
        }
    }
}

impl RawQxg {
    pub(crate) fn into_qxg(self) -> Result<Qxg> {
        let mut edges = Vec::with_capacity(self.edges.len());
        for (k, raw) in self.edges.into_iter().enumerate() {
            let mut chain = BTreeMap::new();
            for (key, codes) in raw.chain {
                let path = format!("edges[{k}].chain");
                let f = parse_frame_key(&key, &path)?;
                let tuple = RelationTuple::from_codes(&codes).ok_or_else(|| {
                    Error::validation(
                        format!("{path}[\"{key}\"]"),
                        format!("relation codes {codes:?} out of range"),
                    )
                })?;
                chain.insert(f, tuple);
            }
            edges.push(QxgEdge {
                a: raw.a,
                b: raw.b,
                chain,
            });
        }
        Ok(Qxg {
            scene_id: self.scene_id,
            frame: self.frame,
            window: self.window,
            ego_index: self.ego_index,
            nodes: self.nodes,
            edges,
        })
    }
}

/// A graph together with the relevance labels of its star edges; the unit
/// the training pipeline consumes and the file format written by `build`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledQxg {
    pub qxg: Qxg,
    pub labels: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLabeled {
    qxg: RawQxg,
    labels: Vec<u8>,
}

impl LabeledQxg {
    pub fn from_scene(scene: &Scene, frame: usize, window: usize, cfg: &CalculiConfig) -> Result<Self> {
        let qxg = build_qxg(scene, frame, window, cfg)?;
        let labels = label_star(&qxg, scene, frame);
        Ok(Self { qxg, labels })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&RawLabeled {
            qxg: RawQxg::from(&self.qxg),
            labels: self.labels.clone(),
        })
        .expect("sample serialization is infallible")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawLabeled = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            what: format!("sample at {}", e.path()),
            source: e.into_inner(),
        })?;
        let qxg = raw.qxg.into_qxg()?;
        qxg.validate()?;
        let star = extract_star(&qxg).len();
        if raw.labels.len() != star {
            return Err(Error::validation(
                "labels",
                format!("{} labels for a star of {star} edges", raw.labels.len()),
            ));
        }
        if raw.labels.iter().any(|l| *l > 1) {
            return Err(Error::validation("labels", "labels must be 0 or 1"));
        }
        Ok(Self {
            qxg,
            labels: raw.labels,
        })
    }
}

/// One labeled sample per annotated frame of every scene.
pub fn build_samples(scenes: &[Scene], window: usize, cfg: &CalculiConfig) -> Result<Vec<LabeledQxg>> {
    let mut out = Vec::new();
    for scene in scenes {
        for frame in scene.annotated_frames() {
            out.push(LabeledQxg::from_scene(scene, frame, window, cfg)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculi::QtcSymbol::*;
    use crate::scene::{BoundingBox, TrackedObject};

    fn obj(id: &str, kind: ObjectType, frames: &[(usize, f64, f64)]) -> TrackedObject {
        TrackedObject {
            id: id.into(),
            kind,
            boxes: frames
                .iter()
                .map(|&(f, x, y)| (f, BoundingBox::new(x, y, 1.0, 2.0, 0.0)))
                .collect(),
        }
    }

    fn abc_scene() -> Scene {
        Scene {
            scene_id: "abc".into(),
            ego_id: "A".into(),
            frame_count: 3,
            objects: vec![
                obj("A", ObjectType::Ego, &[(0, 0.0, 0.0), (1, 0.0, 0.5), (2, 0.0, 1.0)]),
                obj("B", ObjectType::Car, &[(0, 5.0, 0.0), (1, 4.0, 0.0), (2, 3.0, 0.0)]),
                obj("C", ObjectType::Pedestrian, &[(2, -3.0, 4.0)]),
            ],
            relevance: [(2, ["C".to_string()].into())].into(),
        }
    }

    #[test]
    fn pair_in_single_frame() {
        let mut s = abc_scene();
        s.objects.truncate(2);
        s.relevance.clear();
        let g = build_qxg(&s, 0, 1, &CalculiConfig::default()).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].chain.len(), 1);
    }

    #[test]
    fn late_arrival_gets_short_chains() {
        let g = build_qxg(&abc_scene(), 2, 3, &CalculiConfig::default()).unwrap();
        assert_eq!(g.window, (0, 2));
        assert_eq!(g.nodes.len(), 3);
        let lens: Vec<(usize, usize, usize)> =
            g.edges.iter().map(|e| (e.a, e.b, e.chain.len())).collect();
        assert_eq!(lens, vec![(0, 1, 3), (0, 2, 1), (1, 2, 1)]);
        // first window frame has no predecessor
        assert_eq!(g.edges[0].chain[&0].qtc, QtcRelation::STATIC);
        // C has no predecessor inside the window at frame 2
        assert_eq!(g.edges[1].chain[&2].qtc, QtcRelation::STATIC);
        assert_eq!(g.edges[0].chain[&1].qtc.b_motion, Minus);

        let star = extract_star(&g);
        assert_eq!(star, vec![(0, 1), (1, 2)]);
        assert_eq!(label_star(&g, &abc_scene(), 2), vec![0, 1]);
    }

    #[test]
    fn single_object_scene_has_no_edges() {
        let mut s = abc_scene();
        s.objects.truncate(1);
        s.relevance.clear();
        let g = build_qxg(&s, 1, 2, &CalculiConfig::default()).unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert!(g.edges.is_empty());
        assert!(extract_star(&g).is_empty());
    }

    #[test]
    fn window_must_contain_ego() {
        let mut s = abc_scene();
        s.ego_id = "C".into();
        assert!(build_qxg(&s, 0, 1, &CalculiConfig::default()).is_err());
        assert!(build_qxg(&abc_scene(), 3, 1, &CalculiConfig::default()).is_err());
        assert!(build_qxg(&abc_scene(), 2, 0, &CalculiConfig::default()).is_err());
    }

    #[test]
    fn edge_feature_lookup_rule() {
        let t0 = RelationTuple {
            qdc: QdcRelation::VeryClose,
            qtc: QtcRelation::new(Minus, Zero, Plus),
            ra_x: AllenRelation::Equals,
            ra_y: AllenRelation::Before,
        };
        let t2 = RelationTuple {
            qdc: QdcRelation::Far,
            ..t0
        };
        let e = QxgEdge {
            a: 0,
            b: 1,
            chain: [(0, t0), (2, t2)].into(),
        };
        assert_eq!(edge_features(&e, 0), [0, 0, 1, 2, 6, 0]);
        assert_eq!(edge_features(&e, 1), [0, 0, 1, 2, 6, 0]);
        assert_eq!(edge_features(&e, 2)[0], 2);
        let late = QxgEdge {
            a: 0,
            b: 1,
            chain: [(2, t2)].into(),
        };
        assert_eq!(edge_features(&late, 0), t2.codes());
    }

    #[test]
    fn empty_relevance_labels_all_zero() {
        let mut s = abc_scene();
        s.relevance = [(2, Default::default())].into();
        let g = build_qxg(&s, 2, 3, &CalculiConfig::default()).unwrap();
        assert_eq!(label_star(&g, &s, 2), vec![0, 0]);
    }

    #[test]
    fn json_round_trip_and_tampering() {
        let g = build_qxg(&abc_scene(), 2, 3, &CalculiConfig::default()).unwrap();
        let back = Qxg::from_json_str(&g.to_json_string()).unwrap();
        assert_eq!(back, g);

        let tampered = g.to_json_string().replacen("\"b\": 2", "\"b\": 7", 1);
        let err = Qxg::from_json_str(&tampered).unwrap_err().to_string();
        assert!(err.contains("missing node"), "{err}");

        let sample = LabeledQxg::from_scene(&abc_scene(), 2, 3, &CalculiConfig::default()).unwrap();
        assert_eq!(LabeledQxg::from_json_str(&sample.to_json_string()).unwrap(), sample);
    }
}
