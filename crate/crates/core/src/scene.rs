//! Scenes of tracked, typed 2-D bounding boxes and their JSON format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bird's-eye-view box in world coordinates. `length` runs along the heading
/// given by `yaw`, `width` across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub length: f64,
    pub yaw: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, width: f64, length: f64, yaw: f64) -> Self {
        Self {
            cx,
            cy,
            width,
            length,
            yaw,
        }
    }

    /// Axis-aligned unit square centered at `(cx, cy)`.
    pub fn unit_at(cx: f64, cy: f64) -> Self {
        Self::new(cx, cy, 1.0, 1.0, 0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    pub fn centroid_distance(&self, other: &BoundingBox) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }

    /// World-frame axis-aligned extent `([x_lo, x_hi], [y_lo, y_hi])` of the
    /// rotated box.
    pub fn aabb(&self) -> ((f64, f64), (f64, f64)) {
        let (s, c) = self.yaw.sin_cos();
        let hx = 0.5 * (c.abs() * self.length + s.abs() * self.width);
        let hy = 0.5 * (s.abs() * self.length + c.abs() * self.width);
        ((self.cx - hx, self.cx + hx), (self.cy - hy, self.cy + hy))
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let fields = [
            ("cx", self.cx),
            ("cy", self.cy),
            ("width", self.width),
            ("length", self.length),
            ("yaw", self.yaw),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::validation(format!("{path}.{name}"), "must be finite"));
            }
        }
        if self.width <= 0.0 {
            return Err(Error::validation(format!("{path}.width"), "must be > 0"));
        }
        if self.length <= 0.0 {
            return Err(Error::validation(format!("{path}.length"), "must be > 0"));
        }
        if !(-std::f64::consts::PI..=std::f64::consts::PI).contains(&self.yaw) {
            return Err(Error::validation(format!("{path}.yaw"), "must lie in [-pi, pi]"));
        }
        Ok(())
    }
}

/// Closed object vocabulary. The discriminants are the embedding codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectType {
    Ego = 0,
    Car = 1,
    Truck = 2,
    Bus = 3,
    Pedestrian = 4,
    Bicycle = 5,
    Motorcycle = 6,
    TrafficCone = 7,
    Barrier = 8,
    Other = 9,
}

impl ObjectType {
    pub const ALL: [ObjectType; 10] = [
        ObjectType::Ego,
        ObjectType::Car,
        ObjectType::Truck,
        ObjectType::Bus,
        ObjectType::Pedestrian,
        ObjectType::Bicycle,
        ObjectType::Motorcycle,
        ObjectType::TrafficCone,
        ObjectType::Barrier,
        ObjectType::Other,
    ];
    pub const COUNT: usize = Self::ALL.len();

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectType::Ego => "ego",
            ObjectType::Car => "car",
            ObjectType::Truck => "truck",
            ObjectType::Bus => "bus",
            ObjectType::Pedestrian => "pedestrian",
            ObjectType::Bicycle => "bicycle",
            ObjectType::Motorcycle => "motorcycle",
            ObjectType::TrafficCone => "traffic_cone",
            ObjectType::Barrier => "barrier",
            ObjectType::Other => "other",
        }
    }

    /// Road users that drive rather than walk.
    pub fn is_vehicle(self) -> bool {
        matches!(
            self,
            ObjectType::Car
                | ObjectType::Truck
                | ObjectType::Bus
                | ObjectType::Bicycle
                | ObjectType::Motorcycle
        )
    }
}

impl fmt::Display for ObjectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::validation("type", format!("unknown object type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackedObject {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: ObjectType,
    pub boxes: BTreeMap<usize, BoundingBox>,
}

impl TrackedObject {
    pub fn box_at(&self, frame: usize) -> Option<&BoundingBox> {
        self.boxes.get(&frame)
    }

    pub fn present_at(&self, frame: usize) -> bool {
        self.boxes.contains_key(&frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scene {
    pub scene_id: String,
    pub ego_id: String,
    pub frame_count: usize,
    pub objects: Vec<TrackedObject>,
    pub relevance: BTreeMap<usize, BTreeSet<String>>,
}

impl Scene {
    pub fn object(&self, id: &str) -> Option<&TrackedObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn ego(&self) -> Option<&TrackedObject> {
        self.object(&self.ego_id)
    }

    /// Frames carrying a relevance annotation, ascending.
    pub fn annotated_frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.relevance.keys().copied()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::validation("frame_count", "must be >= 1"));
        }
        let mut seen = BTreeSet::new();
        for (i, obj) in self.objects.iter().enumerate() {
            let path = format!("objects[{i}]");
            if !seen.insert(obj.id.as_str()) {
                return Err(Error::validation(
                    format!("{path}.id"),
                    format!("duplicate object id {:?}", obj.id),
                ));
            }
            if obj.boxes.is_empty() {
                return Err(Error::validation(format!("{path}.boxes"), "must not be empty"));
            }
            for (frame, bbox) in &obj.boxes {
                let bpath = format!("{path}.boxes[\"{frame}\"]");
                if *frame >= self.frame_count {
                    return Err(Error::validation(
                        bpath,
                        format!("frame outside scene range 0..{}", self.frame_count),
                    ));
                }
                bbox.validate(&bpath)?;
            }
        }
        let ego = self.ego().ok_or_else(|| {
            Error::validation("ego_id", format!("ego {:?} not found in objects", self.ego_id))
        })?;
        if let Some(missing) = (0..self.frame_count).find(|f| !ego.present_at(*f)) {
            return Err(Error::validation(
                "ego_id",
                format!("ego {:?} absent at frame {missing}", self.ego_id),
            ));
        }
        for (frame, ids) in &self.relevance {
            let path = format!("relevance[\"{frame}\"]");
            if *frame >= self.frame_count {
                return Err(Error::validation(
                    path,
                    format!("frame outside scene range 0..{}", self.frame_count),
                ));
            }
            for id in ids {
                if *id == self.ego_id {
                    return Err(Error::validation(path, "the ego cannot be relevant"));
                }
                match self.object(id) {
                    None => {
                        return Err(Error::validation(
                            path,
                            format!("unknown object {id:?} at frame {frame}"),
                        ))
                    }
                    Some(o) if !o.present_at(*frame) => {
                        return Err(Error::validation(
                            path,
                            format!("object {id:?} absent at frame {frame}"),
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawScene = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            what: format!("scene at {}", e.path()),
            source: e.into_inner(),
        })?;
        let scene = raw.into_scene()?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serialization is infallible")
    }
}

/// Reads and validates a scene file.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scene::from_json_str(&text)
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scene.to_json_string()).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObject {
    id: String,
    #[serde(rename = "type")]
    kind: String,
    boxes: BTreeMap<String, BoundingBox>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    scene_id: String,
    ego_id: String,
    frame_count: i64,
    objects: Vec<RawObject>,
    relevance: BTreeMap<String, Vec<String>>,
}

pub(crate) fn parse_frame_key(key: &str, path: &str) -> Result<usize> {
    if key.is_empty() || !key.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::validation(
            path,
            format!("frame key {key:?} is not a base-10 integer"),
        ));
    }
    key.parse()
        .map_err(|_| Error::validation(path, format!("frame key {key:?} out of range")))
}

impl RawScene {
    fn into_scene(self) -> Result<Scene> {
        if self.frame_count < 1 {
            return Err(Error::validation("frame_count", "must be >= 1"));
        }
        let mut objects = Vec::with_capacity(self.objects.len());
        for (i, raw) in self.objects.into_iter().enumerate() {
            let kind = raw.kind.parse::<ObjectType>().map_err(|_| {
                Error::validation(
                    format!("objects[{i}].type"),
                    format!("unknown object type {:?}", raw.kind),
                )
            })?;
            let mut boxes = BTreeMap::new();
            for (key, bbox) in raw.boxes {
                let frame = parse_frame_key(&key, &format!("objects[{i}].boxes"))?;
                if boxes.insert(frame, bbox).is_some() {
                    return Err(Error::validation(
                        format!("objects[{i}].boxes"),
                        format!("duplicate frame {frame}"),
                    ));
                }
            }
            objects.push(TrackedObject {
                id: raw.id,
                kind,
                boxes,
            });
        }
        let mut relevance = BTreeMap::new();
        for (key, ids) in self.relevance {
            let frame = parse_frame_key(&key, "relevance")?;
            let count = ids.len();
            let set: BTreeSet<String> = ids.into_iter().collect();
            if set.len() != count {
                return Err(Error::validation(
                    format!("relevance[\"{key}\"]"),
                    "duplicate object id",
                ));
            }
            if relevance.insert(frame, set).is_some() {
                return Err(Error::validation("relevance", format!("duplicate frame {frame}")));
            }
        }
        Ok(Scene {
            scene_id: self.scene_id,
            ego_id: self.ego_id,
            frame_count: self.frame_count as usize,
            objects,
            relevance,
        })
    }
}
