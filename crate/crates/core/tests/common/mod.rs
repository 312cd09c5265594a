#![allow(dead_code)]

pub mod checks;
pub mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use qxg_roi::calculi::CalculiConfig;
use qxg_roi::model::{FeaturizedGraph, ModelConfig};
use qxg_roi::qxg::LabeledQxg;
use qxg_roi::scene::{BoundingBox, ObjectType, Scene, TrackedObject};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/fixture_scene.json")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    BoundingBox::new(
        rng.random_range(-15.0..15.0),
        rng.random_range(-15.0..15.0),
        rng.random_range(0.4..3.0),
        rng.random_range(0.4..8.0),
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
}

/// Scene with the ego present throughout; other objects appear in each frame
/// with probability `presence` and drift between frames. One present object
/// per frame is marked relevant.
pub fn random_scene(rng: &mut ChaCha8Rng, id: &str, others: usize, frames: usize, presence: f64) -> Scene {
    let mut objects = Vec::with_capacity(others + 1);
    for k in 0..=others {
        let (oid, kind) = if k == 0 {
            ("ego".to_owned(), ObjectType::Ego)
        } else {
            (format!("obj_{k:03}"), ObjectType::ALL[rng.random_range(1..ObjectType::COUNT)])
        };
        let mut b = random_box(rng);
        let mut boxes = BTreeMap::new();
        for f in 0..frames {
            b.cx += rng.random_range(-1.5..1.5);
            b.cy += rng.random_range(-1.5..1.5);
            if k == 0 || rng.random_bool(presence) {
                boxes.insert(f, b);
            }
        }
        if boxes.is_empty() {
            boxes.insert(frames - 1, b);
        }
        objects.push(TrackedObject { id: oid, kind, boxes });
    }
    let mut relevance = BTreeMap::new();
    for f in 0..frames {
        let present: Vec<&TrackedObject> = objects[1..].iter().filter(|o| o.present_at(f)).collect();
        if let Some(o) = present.choose(rng) {
            relevance.insert(f, BTreeSet::from([o.id.clone()]));
        }
    }
    objects.shuffle(rng);
    Scene {
        scene_id: id.to_owned(),
        ego_id: "ego".into(),
        frame_count: frames,
        objects,
        relevance,
    }
}

/// Labeled graph with `nodes` nodes (ego included), every object present at
/// the classified frame.
pub fn random_graph(rng: &mut ChaCha8Rng, nodes: usize) -> FeaturizedGraph {
    let mut scene = random_scene(rng, "g", nodes - 1, 3, 1.0);
    let o = rng.random_range(0..scene.objects.len());
    let id = scene.objects[o].id.clone();
    if id != "ego" {
        scene.relevance.insert(2, BTreeSet::from([id]));
    }
    let s = LabeledQxg::from_scene(&scene, 2, 3, &CalculiConfig::default()).unwrap();
    FeaturizedGraph::from_labeled(&s)
}

/// Under 2k parameters.
pub fn small_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        node_embed_dim: 4,
        edge_embed_dim: 2,
        edge_joint_dim: 4,
        gat_hidden: 2,
        heads: 2,
        gat_layers: 2,
        classifier_hidden: 8,
        leaky_relu_slope: 0.2,
        seed,
    }
}

/// Relabels nodes by a random permutation and shuffles the directed edges
/// and star pairs. Returns the new graph and, for each new star position,
/// its position in `g`.
pub fn permute_graph(rng: &mut ChaCha8Rng, g: &FeaturizedGraph) -> (FeaturizedGraph, Vec<usize>) {
    let n = g.num_nodes();
    let mut node_perm: Vec<usize> = (0..n).collect();
    node_perm.shuffle(rng);
    let mut edge_order: Vec<usize> = (0..g.num_edges()).collect();
    edge_order.shuffle(rng);
    let mut edge_pos = vec![0; edge_order.len()];
    for (new, &old) in edge_order.iter().enumerate() {
        edge_pos[old] = new;
    }
    let mut star_order: Vec<usize> = (0..g.star_len()).collect();
    star_order.shuffle(rng);

    let mut node_types = vec![0; n];
    let mut graph_of_node = vec![0; n];
    for (old, &new) in node_perm.iter().enumerate() {
        node_types[new] = g.node_types[old];
        graph_of_node[new] = g.graph_of_node[old];
    }
    let out = FeaturizedGraph {
        node_types,
        src: edge_order.iter().map(|&k| node_perm[g.src[k]]).collect(),
        dst: edge_order.iter().map(|&k| node_perm[g.dst[k]]).collect(),
        edge_codes: edge_order.iter().map(|&k| g.edge_codes[k]).collect(),
        star_edges: star_order.iter().map(|&s| edge_pos[g.star_edges[s]]).collect(),
        star_neighbors: star_order.iter().map(|&s| node_perm[g.star_neighbors[s]]).collect(),
        star_egos: star_order.iter().map(|&s| node_perm[g.star_egos[s]]).collect(),
        graph_of_node,
        num_graphs: g.num_graphs,
        labels: star_order.iter().filter_map(|&s| g.labels.get(s).copied()).collect(),
    };
    (out, star_order)
}
