//! Graph-attention edge classifier over QXGs.
//!
//! Node types and the six edge relations are embedded, the six edge
//! embeddings are aligned by one linear layer, two multi-head GAT layers
//! update the node states, and each ego-star pair is classified from
//! `[x_ego ‖ e_ego,j ‖ x_j]`.
//!
//! Directed edges carry the relation seen from their destination: the edge
//! `j → i` holds the codes of `relation(i, j)`. Self-loops carry a reserved
//! code (one past the last real category) in every feature table.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{NamedParam, ParamSet, Tape, Tensor, Var};
use crate::qxg::{edge_features, extract_star, LabeledQxg, Qxg, EDGE_FEATURE_CARDINALITIES};
use crate::scene::ObjectType;

/// Per-feature code reserved for self-loops.
pub const SELF_LOOP_CODES: [usize; 6] = EDGE_FEATURE_CARDINALITIES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub node_embed_dim: usize,
    /// Embedding width of each of the six edge features.
    pub edge_embed_dim: usize,
    pub edge_joint_dim: usize,
    /// Output width of one attention head.
    pub gat_hidden: usize,
    pub heads: usize,
    pub gat_layers: usize,
    pub classifier_hidden: usize,
    pub leaky_relu_slope: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            node_embed_dim: 16,
            edge_embed_dim: 8,
            edge_joint_dim: 16,
            gat_hidden: 8,
            heads: 4,
            gat_layers: 2,
            classifier_hidden: 64,
            leaky_relu_slope: 0.2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("node_embed_dim", self.node_embed_dim),
            ("edge_embed_dim", self.edge_embed_dim),
            ("edge_joint_dim", self.edge_joint_dim),
            ("gat_hidden", self.gat_hidden),
            ("heads", self.heads),
            ("gat_layers", self.gat_layers),
            ("classifier_hidden", self.classifier_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::validation(format!("model.{name}"), "must be positive"));
            }
        }
        if !(self.leaky_relu_slope.is_finite() && self.leaky_relu_slope >= 0.0) {
            return Err(Error::validation("model.leaky_relu_slope", "must be a finite value >= 0"));
        }
        Ok(())
    }

    /// Width of every GAT layer output (heads concatenated).
    pub fn gat_out_dim(&self) -> usize {
        self.heads * self.gat_hidden
    }

    pub fn classifier_in_dim(&self) -> usize {
        2 * self.gat_out_dim() + self.edge_joint_dim
    }
}

/// Model input assembled from one QXG, or the disjoint union of several.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedGraph {
    pub node_types: Vec<usize>,
    /// Directed edges `src[k] → dst[k]`: both directions of every QXG edge,
    /// then one self-loop per node.
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub edge_codes: Vec<[usize; 6]>,
    /// Directed edge `j → ego` of each star pair.
    pub star_edges: Vec<usize>,
    pub star_neighbors: Vec<usize>,
    pub star_egos: Vec<usize>,
    pub graph_of_node: Vec<usize>,
    pub num_graphs: usize,
    /// Star labels when built from a labeled sample.
    pub labels: Vec<u8>,
}

fn swap_codes(c: [usize; 6]) -> [usize; 6] {
    [c[0], c[2], c[1], 2 - c[3], 12 - c[4], 12 - c[5]]
}

impl FeaturizedGraph {
    pub fn from_qxg(qxg: &Qxg) -> Self {
        let n = qxg.nodes.len();
        let mut src = Vec::with_capacity(2 * qxg.edges.len() + n);
        let mut dst = Vec::with_capacity(src.capacity());
        let mut edge_codes = Vec::with_capacity(src.capacity());
        for e in &qxg.edges {
            let codes = edge_features(e, qxg.frame).map(usize::from);
            src.push(e.b);
            dst.push(e.a);
            edge_codes.push(codes);
            src.push(e.a);
            dst.push(e.b);
            edge_codes.push(swap_codes(codes));
        }
        for i in 0..n {
            src.push(i);
            dst.push(i);
            edge_codes.push(SELF_LOOP_CODES);
        }
        let ego = qxg.ego_index;
        let (star_edges, star_neighbors): (Vec<usize>, Vec<usize>) = extract_star(qxg)
            .into_iter()
            .map(|(k, j)| (if qxg.edges[k].a == ego { 2 * k } else { 2 * k + 1 }, j))
            .unzip();
        Self {
            node_types: qxg.nodes.iter().map(|nd| nd.kind.code()).collect(),
            star_egos: vec![ego; star_edges.len()],
            src,
            dst,
            edge_codes,
            star_edges,
            star_neighbors,
            graph_of_node: vec![0; n],
            num_graphs: 1,
            labels: Vec::new(),
        }
    }

    pub fn from_labeled(sample: &LabeledQxg) -> Self {
        let mut g = Self::from_qxg(&sample.qxg);
        g.labels = sample.labels.clone();
        g
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    pub fn star_len(&self) -> usize {
        self.star_edges.len()
    }

    /// Disjoint union; star pairs keep the order of `parts`.
    pub fn batch<'a>(parts: impl IntoIterator<Item = &'a FeaturizedGraph>) -> Self {
        let mut out = Self {
            node_types: Vec::new(),
            src: Vec::new(),
            dst: Vec::new(),
            edge_codes: Vec::new(),
            star_edges: Vec::new(),
            star_neighbors: Vec::new(),
            star_egos: Vec::new(),
            graph_of_node: Vec::new(),
            num_graphs: 0,
            labels: Vec::new(),
        };
        for g in parts {
            let (nodes, edges, graphs) = (out.num_nodes(), out.num_edges(), out.num_graphs);
            out.node_types.extend_from_slice(&g.node_types);
            out.src.extend(g.src.iter().map(|v| v + nodes));
            out.dst.extend(g.dst.iter().map(|v| v + nodes));
            out.edge_codes.extend_from_slice(&g.edge_codes);
            out.star_edges.extend(g.star_edges.iter().map(|v| v + edges));
            out.star_neighbors.extend(g.star_neighbors.iter().map(|v| v + nodes));
            out.star_egos.extend(g.star_egos.iter().map(|v| v + nodes));
            out.graph_of_node.extend(g.graph_of_node.iter().map(|v| v + graphs));
            out.num_graphs += g.num_graphs;
            out.labels.extend_from_slice(&g.labels);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        let m = self.num_edges();
        if self.dst.len() != m || self.edge_codes.len() != m {
            return Err(Error::validation("graph.edges", "edge arrays differ in length"));
        }
        if let Some(&bad) = self.src.iter().chain(&self.dst).find(|&&v| v >= n) {
            return Err(Error::OutOfRange {
                what: "edge endpoint",
                index: bad,
                size: n,
            });
        }
        let mut has_loop = vec![false; n];
        for k in 0..m {
            if self.src[k] == self.dst[k] {
                if self.edge_codes[k] != SELF_LOOP_CODES {
                    return Err(Error::validation(
                        format!("graph.edges[{k}]"),
                        "self-loop without the reserved self-edge codes",
                    ));
                }
                has_loop[self.src[k]] = true;
            }
        }
        if let Some(i) = has_loop.iter().position(|h| !h) {
            return Err(Error::validation(format!("graph.nodes[{i}]"), "node has no self-loop"));
        }
        for (s, (&e, &j)) in self.star_edges.iter().zip(&self.star_neighbors).enumerate() {
            if e >= m || self.src[e] != j || self.dst[e] != self.star_egos[s] {
                return Err(Error::validation(format!("graph.star[{s}]"), "inconsistent star edge"));
            }
        }
        if !self.labels.is_empty() && self.labels.len() != self.star_len() {
            return Err(Error::validation("graph.labels", "label count differs from star size"));
        }
        Ok(())
    }
}

/// Parameter variables of one GAT layer on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GatLayerVars {
    /// Node transform `[in, heads · hidden]`.
    pub w: Var,
    /// Edge transform `[edge_joint_dim, heads · hidden]`.
    pub w_e: Var,
    /// Attention vectors `[heads, hidden]` for the destination, source and
    /// edge parts of the score.
    pub att_dst: Var,
    pub att_src: Var,
    pub att_edge: Var,
}

/// All model parameters bound to a tape, in [`Model::params`] order.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub vars: Vec<Var>,
    node_embed: Var,
    edge_embed: [Var; 6],
    joint_w: Var,
    joint_b: Var,
    layers: Vec<GatLayerVars>,
    cls_w1: Var,
    cls_b1: Var,
    cls_w2: Var,
    cls_b2: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardPass {
    /// `[star, 1]` logits in star order.
    pub logits: Var,
}

/// Edge states computed once per distinct code tuple: `table` is
/// `[distinct, edge_joint_dim]` and `index[k]` is the row of directed edge `k`.
#[derive(Debug, Clone)]
pub struct EdgeStates {
    pub table: Var,
    pub index: Vec<usize>,
}

/// One GAT layer: returns the new node states `[N, heads · hidden]` and the
/// attention coefficients `[E, heads]`.
pub fn gat_layer(
    tape: &mut Tape,
    layer: &GatLayerVars,
    x: Var,
    e: &EdgeStates,
    g: &FeaturizedGraph,
    slope: f64,
) -> Result<(Var, Var)> {
    let n = g.num_nodes();
    let xw = tape.matmul(x, layer.w)?;
    let ew = tape.matmul(e.table, layer.w_e)?;
    let s_dst = tape.head_dot(xw, layer.att_dst)?;
    let s_src = tape.head_dot(xw, layer.att_src)?;
    let s_edge = tape.head_dot(ew, layer.att_edge)?;
    let s_edge = tape.gather_rows(s_edge, &e.index)?;
    let s_dst = tape.gather_rows(s_dst, &g.dst)?;
    let s_src = tape.gather_rows(s_src, &g.src)?;
    let score = tape.add(s_dst, s_src)?;
    let score = tape.add(score, s_edge)?;
    let score = tape.leaky_relu(score, slope)?;
    let alpha = tape.segment_softmax(score, &g.dst, n)?;
    let out = tape.attention_aggregate(xw, ew, alpha, &g.src, &e.index, &g.dst, n)?;
    Ok((out, alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    config: ModelConfig,
    params: Vec<NamedParam>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("initializer shape is consistent")
}

/// Deterministic `U(-1/√fan_in, 1/√fan_in)` initialization; embedding
/// tables use `fan_in = 1`.
pub fn init_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let c = config;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut p = ParamSet::new();
    let hd = c.gat_out_dim();
    p.push("node_embed", uniform(&mut rng, &[ObjectType::COUNT, c.node_embed_dim], 1));
    for (f, card) in EDGE_FEATURE_CARDINALITIES.iter().enumerate() {
        p.push(format!("edge_embed.{f}"), uniform(&mut rng, &[card + 1, c.edge_embed_dim], 1));
    }
    let joint_in = 6 * c.edge_embed_dim;
    p.push("edge_joint.w", uniform(&mut rng, &[joint_in, c.edge_joint_dim], joint_in));
    p.push("edge_joint.b", uniform(&mut rng, &[c.edge_joint_dim], joint_in));
    for l in 0..c.gat_layers {
        let d_in = if l == 0 { c.node_embed_dim } else { hd };
        p.push(format!("gat{l}.w"), uniform(&mut rng, &[d_in, hd], d_in));
        p.push(format!("gat{l}.w_e"), uniform(&mut rng, &[c.edge_joint_dim, hd], c.edge_joint_dim));
        for part in ["att_dst", "att_src", "att_edge"] {
            p.push(
                format!("gat{l}.{part}"),
                uniform(&mut rng, &[c.heads, c.gat_hidden], 3 * c.gat_hidden),
            );
        }
    }
    let cin = c.classifier_in_dim();
    p.push("classifier.w1", uniform(&mut rng, &[cin, c.classifier_hidden], cin));
    p.push("classifier.b1", uniform(&mut rng, &[c.classifier_hidden], cin));
    p.push("classifier.w2", uniform(&mut rng, &[c.classifier_hidden, 1], c.classifier_hidden));
    p.push("classifier.b2", uniform(&mut rng, &[1], c.classifier_hidden));
    Ok(Model {
        config: *config,
        params: p,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Places every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BoundModel {
        let vars: Vec<Var> = self
            .params
            .tensors()
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect();
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("parameter layout matches init_model");
        let node_embed = next();
        let edge_embed = [next(), next(), next(), next(), next(), next()];
        let joint_w = next();
        let joint_b = next();
        let layers = (0..self.config.gat_layers)
            .map(|_| GatLayerVars {
                w: next(),
                w_e: next(),
                att_dst: next(),
                att_src: next(),
                att_edge: next(),
            })
            .collect();
        let (cls_w1, cls_b1, cls_w2, cls_b2) = (next(), next(), next(), next());
        BoundModel {
            vars,
            node_embed,
            edge_embed,
            joint_w,
            joint_b,
            layers,
            cls_w1,
            cls_b1,
            cls_w2,
            cls_b2,
        }
    }

    /// Initial node states `[N, node_embed_dim]` and edge states.
    pub fn embed_inputs(&self, tape: &mut Tape, m: &BoundModel, g: &FeaturizedGraph) -> Result<(Var, EdgeStates)> {
        let x = tape.embedding_lookup(m.node_embed, &g.node_types)?;
        let mut rows: HashMap<[usize; 6], usize> = HashMap::new();
        let mut distinct = Vec::new();
        let index: Vec<usize> = g
            .edge_codes
            .iter()
            .map(|c| {
                *rows.entry(*c).or_insert_with(|| {
                    distinct.push(*c);
                    distinct.len() - 1
                })
            })
            .collect();
        let mut parts = Vec::with_capacity(6);
        for (f, table) in m.edge_embed.iter().enumerate() {
            let codes: Vec<usize> = distinct.iter().map(|c| c[f]).collect();
            parts.push(tape.embedding_lookup(*table, &codes)?);
        }
        let e = tape.concat(&parts, 1)?;
        let e = tape.matmul(e, m.joint_w)?;
        let table = tape.add(e, m.joint_b)?;
        Ok((x, EdgeStates { table, index }))
    }

    /// Records the forward pass; also returns each layer's attention.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        m: &BoundModel,
        g: &FeaturizedGraph,
    ) -> Result<(ForwardPass, Vec<Var>)> {
        if g.star_len() == 0 {
            return Err(Error::Empty("ego star"));
        }
        let (mut x, e) = self.embed_inputs(tape, m, g)?;
        let mut attention = Vec::with_capacity(m.layers.len());
        for layer in &m.layers {
            let (h, alpha) = gat_layer(tape, layer, x, &e, g, self.config.leaky_relu_slope)?;
            x = tape.relu(h)?;
            attention.push(alpha);
        }
        let x0 = tape.gather_rows(x, &g.star_egos)?;
        let xj = tape.gather_rows(x, &g.star_neighbors)?;
        let star_rows: Vec<usize> = g.star_edges.iter().map(|&k| e.index[k]).collect();
        let e0j = tape.gather_rows(e.table, &star_rows)?;
        let pair = tape.concat(&[x0, e0j, xj], 1)?;
        let h = tape.matmul(pair, m.cls_w1)?;
        let h = tape.add(h, m.cls_b1)?;
        let h = tape.relu(h)?;
        let z = tape.matmul(h, m.cls_w2)?;
        let logits = tape.add(z, m.cls_b2)?;
        Ok((ForwardPass { logits }, attention))
    }

    /// One logit per star pair.
    pub fn forward(&self, g: &FeaturizedGraph) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let m = self.bind(&mut tape, false);
        let (out, _) = self.forward_on_tape(&mut tape, &m, g)?;
        Ok(tape.value(out.logits).data().to_vec())
    }

    /// Attention coefficients `[E · heads]` (row-major) of every layer.
    pub fn attention(&self, g: &FeaturizedGraph) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let m = self.bind(&mut tape, false);
        let (_, att) = self.forward_on_tape(&mut tape, &m, g)?;
        Ok(att.iter().map(|a| tape.value(*a).data().to_vec()).collect())
    }

    pub fn probabilities(&self, g: &FeaturizedGraph) -> Result<Vec<f64>> {
        Ok(self.forward(g)?.into_iter().map(sigmoid).collect())
    }

    /// Labels (`1` iff probability ≥ `threshold`) and probabilities.
    pub fn predict(&self, g: &FeaturizedGraph, threshold: f64) -> Result<(Vec<u8>, Vec<f64>)> {
        let probs = self.probabilities(g)?;
        let labels = probs.iter().map(|&p| u8::from(p >= threshold)).collect();
        Ok((labels, probs))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&Checkpoint {
            config: self.config,
            params: self.params.to_named(),
        })
        .expect("checkpoint serialization is infallible")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let ck: Checkpoint = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            what: format!("checkpoint at {}", e.path()),
            source: e.into_inner(),
        })?;
        let mut model = init_model(&ck.config)?;
        model.params.load_named(ck.params)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}
