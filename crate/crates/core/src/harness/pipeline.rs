//! Directory-level stages behind the CLI: phantom dataset, preprocessing,
//! training, inference and evaluation.
//!
//! Layout: a dataset directory holds `<id>_image.vvol` and `<id>_label.vvol`
//! pairs; a preprocessed directory adds `stats.toml`; a model directory holds
//! `model.cnck`, the resolved `config.toml` and `train_log.tsv`; predictions
//! are written as `<id>_pred.vvol`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::infer::{infer, InferConfig};
use super::phantom::{gen_phantom_with, PhantomConfig};
use super::train::{train, train_fold, Case, EpochStats, TrainConfig};
use super::vvol::{read_labels, read_volume, write_labels, write_volume};
use crate::metrics::{aggregate, evaluate_case, write_tsv, EvalReport};
use crate::net::{load_checkpoint, save_checkpoint, Network, NetworkConfig};
use crate::prep::{foreground_stats, preprocess_case, PrepStats};
use crate::{Error, Result, Rng};

pub const IMAGE_SUFFIX: &str = "_image.vvol";
pub const LABEL_SUFFIX: &str = "_label.vvol";
pub const PRED_SUFFIX: &str = "_pred.vvol";
pub const STATS_FILE: &str = "stats.toml";
pub const MODEL_FILE: &str = "model.cnck";
pub const CONFIG_FILE: &str = "config.toml";
pub const TRAIN_LOG: &str = "train_log.tsv";
pub const EVAL_FILE: &str = "eval.tsv";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Everything a run needs; unspecified fields keep their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomDatasetConfig {
    pub cases: usize,
    pub dims: [usize; 3],
    /// Nominal spacing; each case jitters every axis by up to `jitter`.
    pub spacing: [f32; 3],
    pub jitter: f32,
    pub seed: u64,
    pub phantom: PhantomConfig,
}

impl Default for PhantomDatasetConfig {
    fn default() -> Self {
        PhantomDatasetConfig { cases: 5, dims: [64; 3], spacing: [1.5, 1.0, 1.0], jitter: 0.1, seed: 0, phantom: PhantomConfig::default() }
    }
}

pub fn case_id(i: usize) -> String {
    format!("case_{i:03}")
}

/// Writes seeded phantom cases into `dir`; returns their ids.
pub fn write_phantom_dataset(dir: &Path, cfg: &PhantomDatasetConfig) -> Result<Vec<String>> {
    if !(0.0..1.0).contains(&cfg.jitter) {
        return Err(Error::Config(format!("spacing jitter {} outside [0, 1)", cfg.jitter)));
    }
    fs::create_dir_all(dir)?;
    let mut ids = Vec::with_capacity(cfg.cases);
    for i in 0..cfg.cases {
        let id = case_id(i);
        let mut rng = Rng::for_name(cfg.seed, &format!("phantom/{id}"));
        let spacing = cfg.spacing.map(|s| s * (1.0 + cfg.jitter * (2.0 * rng.uniform() as f32 - 1.0)));
        let (v, m) = gen_phantom_with(&mut rng, cfg.dims, spacing, &cfg.phantom)?;
        write_volume(dir.join(format!("{id}{IMAGE_SUFFIX}")), &v)?;
        write_labels(dir.join(format!("{id}{LABEL_SUFFIX}")), &m)?;
        ids.push(id);
    }
    Ok(ids)
}

/// Sorted ids of every `<id><suffix>` file in `dir`.
pub fn list_ids(dir: &Path, suffix: &str) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(suffix)) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

fn path(dir: &Path, id: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{id}{suffix}"))
}

fn load_cases(dir: &Path) -> Result<Vec<Case>> {
    let ids = list_ids(dir, IMAGE_SUFFIX)?;
    if ids.is_empty() {
        return Err(Error::invalid(format!("no *{IMAGE_SUFFIX} files in {}", dir.display())));
    }
    ids.into_iter()
        .map(|id| {
            let image = read_volume(path(dir, &id, IMAGE_SUFFIX))?;
            let labels = read_labels(path(dir, &id, LABEL_SUFFIX))?;
            Ok(Case { id, image, labels })
        })
        .collect()
}

/// Computes dataset statistics over `input` and writes resampled,
/// normalized cases plus `stats.toml` into `output`.
pub fn preprocess_dir(input: &Path, output: &Path) -> Result<PrepStats> {
    let cases = load_cases(input)?;
    let (vols, masks): (Vec<_>, Vec<_>) = cases.iter().map(|c| (c.image.clone(), c.labels.clone())).unzip();
    let stats = foreground_stats(&vols, &masks)?;
    fs::create_dir_all(output)?;
    stats.save(output.join(STATS_FILE))?;
    for c in &cases {
        let (v, m) = preprocess_case(&c.image, Some(&c.labels), &stats)?;
        write_volume(path(output, &c.id, IMAGE_SUFFIX), &v)?;
        write_labels(path(output, &c.id, LABEL_SUFFIX), &m.expect("labels were given"))?;
    }
    Ok(stats)
}

/// Trains on a preprocessed directory and writes the model directory.
/// `folds <= 1` trains on every case and validates on the same cases.
pub fn train_dir(prep: &Path, out: &Path, cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochStats)) -> Result<Vec<EpochStats>> {
    let cases = load_cases(prep)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml()?)?;
    let mut log = fs::File::create(out.join(TRAIN_LOG))?;
    writeln!(log, "{}", EpochStats::TSV_HEADER)?;
    let mut io_err = None;
    let mut each = |e: &EpochStats| {
        if let Err(err) = writeln!(log, "{}", e.tsv_row()) {
            io_err.get_or_insert(err);
        }
        on_epoch(e);
    };
    let outcome = if cfg.train.folds <= 1 {
        train(&cases, &[], &cfg.train, &cfg.network, &mut each)?
    } else {
        train_fold(&cases, &cfg.train, &cfg.network, &mut each)?
    };
    if let Some(e) = io_err {
        return Err(e.into());
    }
    save_checkpoint(out.join(MODEL_FILE), &outcome.network)?;
    Ok(outcome.history)
}

/// Segments every image in `input` with the model in `model_dir`, using
/// `stats.toml` from `prep` and the inference settings echoed at training
/// time unless `cfg` overrides them.
pub fn infer_dir(input: &Path, model_dir: &Path, prep: &Path, out: &Path, cfg: Option<&InferConfig>) -> Result<Vec<String>> {
    let net: Network<f32> = load_checkpoint(model_dir.join(MODEL_FILE))?;
    let stats = PrepStats::load(prep.join(STATS_FILE))?;
    let cfg = match cfg {
        Some(c) => c.clone(),
        None => RunConfig::load(model_dir.join(CONFIG_FILE))?.infer,
    };
    let ids = list_ids(input, IMAGE_SUFFIX)?;
    fs::create_dir_all(out)?;
    for id in &ids {
        let v = read_volume(path(input, id, IMAGE_SUFFIX))?;
        write_labels(path(out, id, PRED_SUFFIX), &infer(&v, &net, &stats, &cfg)?)?;
    }
    Ok(ids)
}

/// Scores every prediction in `pred` against `<id>_label.vvol` in `gt`,
/// writing `eval.tsv` and `summary.txt` into `out`.
pub fn eval_dir(pred: &Path, gt: &Path, out: &Path) -> Result<Vec<EvalReport>> {
    let ids = list_ids(pred, PRED_SUFFIX)?;
    if ids.is_empty() {
        return Err(Error::invalid(format!("no *{PRED_SUFFIX} files in {}", pred.display())));
    }
    let reports = ids
        .iter()
        .map(|id| evaluate_case(id, &read_labels(path(pred, id, PRED_SUFFIX))?, &read_labels(path(gt, id, LABEL_SUFFIX))?))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    fs::write(out.join(EVAL_FILE), write_tsv(&reports))?;
    let summary: String = aggregate(&reports).iter().map(|a| format!("{a}\n")).collect();
    fs::write(out.join(SUMMARY_FILE), summary)?;
    Ok(reports)
}
