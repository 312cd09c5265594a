//! Experiment configuration, dataset directories and self-describing reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{run_baseline_cv, BaselineConfig};
use crate::calculi::CalculiConfig;
use crate::error::{Error, Result};
use crate::model::{FeaturizedGraph, ModelConfig};
use crate::qxg::LabeledQxg;
use crate::scene::{load_scene, Scene};
use crate::synth::SynthParams;
use crate::train::{ablate_losses, run_cross_validation, AblationReport, MetricsReport, TrainConfig};

/// Overrides [`ExperimentConfig::seed`] when set.
pub const SEED_ENV: &str = "QXG_ROI_SEED";

/// Everything an experiment depends on. `seed` is the single seed source:
/// [`ExperimentConfig::resolved`] copies it into the nested model, training
/// and forest configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Frames per QXG window, ending at the classified frame.
    pub window: usize,
    pub calculi: CalculiConfig,
    pub synth: SynthParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub baselines: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            window: 3,
            calculi: CalculiConfig::default(),
            synth: SynthParams::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }
}

fn under(section: &str, err: Error) -> Error {
    match err {
        Error::Validation { path, message } if !path.starts_with(&format!("{section}.")) => Error::Validation {
            path: format!("{section}.{path}"),
            message,
        },
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            what: format!("config at {}", e.path()),
            source: e.into_inner(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization is infallible")
    }

    /// Every validation failure, each keyed by its dotted path.
    pub fn validation_errors(&self) -> Vec<Error> {
        let mut out = Vec::new();
        if self.window == 0 {
            out.push(Error::validation("window", "must be >= 1"));
        }
        let checks = [
            ("calculi", self.calculi.validate()),
            ("synth", self.synth.validate()),
            ("model", self.model.validate()),
            ("train", self.train.validate()),
        ];
        out.extend(checks.into_iter().filter_map(|(s, r)| r.err().map(|e| under(s, e))));
        if self.baselines.forest.n_trees == 0 {
            out.push(Error::validation("baselines.forest.n_trees", "must be >= 1"));
        }
        if self.baselines.forest.min_leaf == 0 {
            out.push(Error::validation("baselines.forest.min_leaf", "must be >= 1"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.validation_errors().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Applies `QXG_ROI_SEED` if present.
    pub fn with_env_seed(self) -> Result<Self> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                let seed = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::validation(SEED_ENV, format!("`{v}` is not an unsigned integer")))?;
                Ok(Self { seed, ..self })
            }
            Err(_) => Ok(self),
        }
    }

    /// The config as actually run, with `seed` propagated.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.model.seed = c.seed;
        c.train.seed = c.seed;
        c.baselines.forest.seed = c.seed;
        c
    }

    /// SHA-256 of the resolved config's canonical JSON.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.resolved()).expect("config serialization is infallible");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// A result together with the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub result: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(cfg: &ExperimentConfig, result: T) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            config: cfg.resolved(),
            result,
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

/// Graph model against both context-free baselines under the same folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub gnn: MetricsReport,
    pub adaboost: MetricsReport,
    pub random_forest: MetricsReport,
}

pub fn cross_validate(cfg: &ExperimentConfig, samples: &[FeaturizedGraph], jobs: usize) -> Result<Report<MetricsReport>> {
    cfg.validate()?;
    let r = cfg.resolved();
    Ok(Report::new(cfg, run_cross_validation(samples, &r.model, &r.train, jobs)?))
}

pub fn ablate(cfg: &ExperimentConfig, samples: &[FeaturizedGraph], jobs: usize) -> Result<Report<AblationReport>> {
    cfg.validate()?;
    let r = cfg.resolved();
    Ok(Report::new(cfg, ablate_losses(samples, &r.model, &r.train, jobs)?))
}

pub fn compare_baselines(
    cfg: &ExperimentConfig,
    samples: &[FeaturizedGraph],
    jobs: usize,
) -> Result<Report<ComparisonReport>> {
    cfg.validate()?;
    let r = cfg.resolved();
    let gnn = run_cross_validation(samples, &r.model, &r.train, jobs)?;
    let b = run_baseline_cv(samples, &r.baselines, r.train.folds, r.train.seed, r.train.threshold)?;
    Ok(Report::new(
        cfg,
        ComparisonReport {
            gnn,
            adaboost: b.adaboost,
            random_forest: b.random_forest,
        },
    ))
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Name of the scene index written next to generated scenes.
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub scene_id: String,
    pub annotated_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub params: SynthParams,
    pub scenes: Vec<ManifestEntry>,
    /// One sample per annotated frame.
    pub samples: usize,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes one `<scene_id>.json` per scene plus the manifest.
pub fn write_scenes(dir: &Path, scenes: &[Scene], seed: u64, params: &SynthParams) -> Result<Manifest> {
    ensure_dir(dir)?;
    let mut entries = Vec::with_capacity(scenes.len());
    for s in scenes {
        let file = format!("{}.json", s.scene_id);
        write(&dir.join(&file), &s.to_json_string())?;
        entries.push(ManifestEntry {
            file,
            scene_id: s.scene_id.clone(),
            annotated_frames: s.annotated_frames().count(),
        });
    }
    let manifest = Manifest {
        seed,
        params: params.clone(),
        samples: entries.iter().map(|e| e.annotated_frames).sum(),
        scenes: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization is infallible");
    write(&dir.join(MANIFEST), &text)?;
    Ok(manifest)
}

/// Every scene file in `dir` (the manifest excluded), in file-name order.
pub fn read_scenes(dir: &Path) -> Result<Vec<Scene>> {
    let scenes = json_files(dir)?
        .into_iter()
        .filter(|p| p.file_name().is_none_or(|n| n != MANIFEST))
        .map(load_scene)
        .collect::<Result<Vec<_>>>()?;
    if scenes.is_empty() {
        return Err(Error::validation(dir.display().to_string(), "no scenes found"));
    }
    Ok(scenes)
}

/// Writes `<scene_id>_f<frame>.json` per sample; returns the paths written.
pub fn write_samples(dir: &Path, samples: &[LabeledQxg]) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    samples
        .iter()
        .map(|s| {
            let path = dir.join(format!("{}_f{:04}.json", s.qxg.scene_id, s.qxg.frame));
            write(&path, &s.to_json_string()).map(|_| path)
        })
        .collect()
}

pub fn read_samples(dir: &Path) -> Result<Vec<LabeledQxg>> {
    let samples = json_files(dir)?
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            LabeledQxg::from_json_str(&text).map_err(|e| match e {
                Error::Parse { what, source } => Error::Parse {
                    what: format!("{} ({what})", p.display()),
                    source,
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(Error::validation(dir.display().to_string(), "no samples found"));
    }
    Ok(samples)
}

/// Node and edge counts of a built dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub samples: usize,
    pub mean_nodes: f64,
    pub mean_edges: f64,
    pub mean_star_size: f64,
    pub positive_star_edges: usize,
    pub star_edges: usize,
}

impl DatasetStats {
    pub fn of(samples: &[LabeledQxg]) -> Self {
        let n = samples.len().max(1) as f64;
        let star_edges: usize = samples.iter().map(|s| s.labels.len()).sum();
        Self {
            samples: samples.len(),
            mean_nodes: samples.iter().map(|s| s.qxg.nodes.len()).sum::<usize>() as f64 / n,
            mean_edges: samples.iter().map(|s| s.qxg.edges.len()).sum::<usize>() as f64 / n,
            mean_star_size: star_edges as f64 / n,
            positive_star_edges: samples.iter().map(|s| s.labels.iter().filter(|&&l| l == 1).count()).sum(),
            star_edges,
        }
    }
}
