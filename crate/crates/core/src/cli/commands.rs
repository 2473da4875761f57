use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use serde::Serialize;

use super::config::{DataSource, ExperimentConfig};
use crate::data::{generate_synthetic, load_images, load_manifest, load_training_set, make_split, DataSplit, DatasetManifest};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_open_set, plot_bars, plot_roc, predict_in_batches, Evaluation};
use crate::model::{HeadKind, HybridModel, ModelConfig};
use crate::rejection::{fit_openmax, write_activations, ActivationRecord, OpenMaxModel, RejectionStrategy};
use crate::training::{train, Checkpoint, EpochMetrics, TrainConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const SWEEP_FILE: &str = "sweep.csv";

const DTYPE: DType = DType::F32;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Generates the synthetic dataset into `output_dir`; returns the manifest path.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let DataSource::Synthetic(gen) = &cfg.data else {
        return Err(Error::Usage("data source is an existing manifest; nothing to generate".into()));
    };
    create_dir(&cfg.output_dir)?;
    generate_synthetic(gen, &cfg.output_dir)?;
    Ok(cfg.output_dir.join(MANIFEST_FILE))
}

/// Loads (or first generates) the dataset and applies the split.
fn dataset(cfg: &ExperimentConfig) -> Result<(DatasetManifest, DataSplit)> {
    let manifest = match &cfg.data {
        DataSource::Synthetic(_) => {
            let path = cfg.output_dir.join(MANIFEST_FILE);
            if !path.is_file() {
                cmd_generate(cfg)?;
            }
            load_manifest(&path)?
        }
        DataSource::Manifest(path) => load_manifest(path)?,
    };
    let split = make_split(&manifest, &cfg.split)?;
    if split.closed_train.is_empty() {
        return Err(Error::Config(format!("split {} has no training samples", split.name)));
    }
    Ok((manifest, split))
}

/// Trains on the closed-set training samples in `dir`, appending one JSON
/// line per epoch to the metrics log.
fn train_in(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    manifest: &DatasetManifest,
    split: &DataSplit,
    dir: &Path,
    resume: Option<&Checkpoint>,
) -> Result<Checkpoint> {
    create_dir(dir)?;
    let device = Device::Cpu;
    let data = load_training_set(manifest, &split.closed_train, model_cfg, DTYPE, &device)?;
    let model = HybridModel::new(model_cfg.clone(), train_cfg.seed, DTYPE, &device)?;
    let log_path = dir.join(METRICS_FILE);
    let mut log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let ckpt = train(&model, &data, train_cfg, resume, |m: &EpochMetrics| {
        let line = serde_json::to_string(m)?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))
    })?;
    ckpt.save(&dir.join(CHECKPOINT_FILE))?;
    Ok(ckpt)
}

/// Trains the configured model; returns the checkpoint path.
pub fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<PathBuf> {
    let (manifest, split) = dataset(cfg)?;
    let resume = match resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            if ckpt.model_config != cfg.model {
                return Err(Error::Config(format!(
                    "checkpoint {} was trained with a different model configuration",
                    p.display()
                )));
            }
            Some(ckpt)
        }
        None => None,
    };
    train_in(&cfg.model, &cfg.train, &manifest, &split, &cfg.output_dir, resume.as_ref())?;
    Ok(cfg.output_dir.join(CHECKPOINT_FILE))
}

/// Fits OpenMax on the correctly classified closed-set training samples.
fn fit_openmax_on_train(
    cfg: &ExperimentConfig,
    model: &HybridModel,
    manifest: &DatasetManifest,
    split: &DataSplit,
    dir: &Path,
) -> Result<OpenMaxModel> {
    let indices: Vec<usize> = split.closed_train.iter().map(|s| s.index).collect();
    let m = model.config();
    let images = load_images(manifest, &indices, m.input_height, m.input_width, model.device())?.to_dtype(DTYPE)?;
    let outputs = predict_in_batches(model, &images)?;
    let records: Vec<ActivationRecord> = split
        .closed_train
        .iter()
        .zip(outputs)
        .map(|(s, o)| ActivationRecord {
            sample_id: manifest.samples[s.index].image_path.clone(),
            true_label: s.label.expect("closed-set sample"),
            pred_label: o.predicted_class(),
            logits: o.activation_vector,
        })
        .collect();
    let path = dir.join("activations.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_activations(file, &records)?;
    let om = fit_openmax(&records, cfg.openmax.tail_size, cfg.openmax.alpha_for(m.num_classes))?;
    write_file(&dir.join("openmax.json"), om.to_json()?)?;
    Ok(om)
}

/// Evaluates `model` and writes report, ROC tables and plots into `dir`.
fn evaluate_in(
    cfg: &ExperimentConfig,
    model: &HybridModel,
    manifest: &DatasetManifest,
    split: &DataSplit,
    dir: &Path,
) -> Result<Evaluation> {
    create_dir(&dir.join("plots"))?;
    let openmax = if cfg.needs_openmax() {
        Some(fit_openmax_on_train(cfg, model, manifest, split, dir)?)
    } else {
        None
    };
    let m = model.config();
    let load = |samples: &[crate::data::SplitSample]| {
        let idx: Vec<usize> = samples.iter().map(|s| s.index).collect();
        load_images(manifest, &idx, m.input_height, m.input_width, model.device())?
            .to_dtype(DTYPE)
            .map_err(Error::from)
    };
    let closed = load(&split.closed_test)?;
    let labels: Vec<usize> = split.closed_test.iter().map(|s| s.label.expect("closed-set sample")).collect();
    let open = if split.open_test.is_empty() { None } else { Some(load(&split.open_test)?) };
    let eval = evaluate_open_set(model, openmax.as_ref(), &split.name, &closed, &labels, open.as_ref(), &cfg.strategies)?;

    write_file(&dir.join(REPORT_FILE), eval.report.to_json()?)?;
    for (strategy, curve) in &eval.curves {
        write_file(&dir.join(format!("roc_{}.csv", strategy.name().to_lowercase())), curve.to_csv())?;
    }
    let curves: Vec<_> = eval.curves.values().collect();
    if !curves.is_empty() {
        plot_roc(&curves, &dir.join("plots/roc.png"))?;
    }
    let mut bars = vec![eval.report.closed_accuracy];
    bars.extend(eval.report.auc_by_strategy.values());
    plot_bars(&[bars], &dir.join("plots/summary.png"))?;
    Ok(eval)
}

/// Evaluates a checkpoint (best-validation parameters); returns the report path.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<PathBuf> {
    let (manifest, split) = dataset(cfg)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = HybridModel::new(cfg.model.clone(), cfg.train.seed, DTYPE, &Device::Cpu)?;
    model.params().restore(&ckpt.best_params)?;
    evaluate_in(cfg, &model, &manifest, &split, &cfg.output_dir)?;
    Ok(cfg.output_dir.join(REPORT_FILE))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    PatchSize,
    Architecture,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patch_size" => Ok(SweepAxis::PatchSize),
            "architecture" => Ok(SweepAxis::Architecture),
            _ => Err(Error::Usage(format!("unknown sweep axis {s:?} (expected patch_size or architecture)"))),
        }
    }
}

pub const ARCHITECTURES: [&str; 3] = ["backbone", "vit", "vit_fcn"];

/// Model configurations for each value of the axis. Every invalid value is
/// reported at once, before anything is trained.
pub fn sweep_variants(base: &ModelConfig, axis: SweepAxis, values: Option<&[String]>) -> Result<Vec<(String, ModelConfig)>> {
    let values: Vec<String> = match (values, axis) {
        (Some(v), _) => v.to_vec(),
        (None, SweepAxis::Architecture) => ARCHITECTURES.iter().map(|s| s.to_string()).collect(),
        (None, SweepAxis::PatchSize) => {
            let (hf, wf) = (base.feature_height(), base.feature_width());
            (1..=hf.min(wf)).filter(|p| hf % p == 0 && wf % p == 0).map(|p| p.to_string()).collect()
        }
    };
    let mut variants = Vec::new();
    let mut problems = Vec::new();
    for v in &values {
        let mut m = base.clone();
        match axis {
            SweepAxis::Architecture => match v.as_str() {
                "backbone" => {
                    m.head = HeadKind::Pooling;
                    m.localization_enabled = false;
                }
                "vit" => {
                    m.head = HeadKind::Transformer;
                    m.localization_enabled = false;
                }
                "vit_fcn" => {
                    m.head = HeadKind::Transformer;
                    m.localization_enabled = true;
                }
                _ => {
                    problems.push(format!("unknown architecture {v:?} (expected one of {ARCHITECTURES:?})"));
                    continue;
                }
            },
            SweepAxis::PatchSize => match v.parse::<usize>() {
                Ok(p) => m.patch_size = p,
                Err(_) => {
                    problems.push(format!("patch size {v:?} is not a positive integer"));
                    continue;
                }
            },
        }
        match m.validate() {
            Ok(()) => variants.push((
                match axis {
                    SweepAxis::Architecture => v.clone(),
                    SweepAxis::PatchSize => format!("P{v}"),
                },
                m,
            )),
            Err(e) => problems.push(format!("{v}: {e}")),
        }
    }
    if variants.is_empty() && problems.is_empty() {
        problems.push("no sweep values".into());
    }
    if problems.is_empty() {
        Ok(variants)
    } else {
        Err(Error::Config(format!("invalid sweep values: {}", problems.join("; "))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub variant: String,
    /// `None` for the across-seed mean row.
    pub seed: Option<u64>,
    pub closed_accuracy: f64,
    pub auc: BTreeMap<RejectionStrategy, f64>,
    /// Final-epoch localization loss; absent without the mask branch.
    pub final_train_mse: Option<f64>,
}

#[derive(Serialize)]
struct SweepReference {
    accuracy_gain_up_to: f64,
    auc_gain_up_to: f64,
    note: &'static str,
}

#[derive(Serialize)]
struct SweepMeta<'a> {
    axis: &'a str,
    seeds: Vec<u64>,
    variants: Vec<&'a str>,
    reference: SweepReference,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Trains and evaluates every variant for `seeds` consecutive seeds starting
/// at the configured one; writes `sweep.csv` and returns its path.
pub fn cmd_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: Option<&[String]>, seeds: usize) -> Result<PathBuf> {
    if seeds == 0 {
        return Err(Error::Usage("--seeds must be >= 1".into()));
    }
    let variants = sweep_variants(&cfg.model, axis, values)?;
    let (manifest, split) = dataset(cfg)?;
    let seed_list: Vec<u64> = (0..seeds as u64).map(|k| cfg.train.seed + k).collect();
    let mut rows = Vec::new();
    for (name, model_cfg) in &variants {
        let mut runs = Vec::new();
        for &seed in &seed_list {
            let dir = cfg.output_dir.join("sweep").join(name).join(format!("seed{seed}"));
            let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
            let run_cfg = ExperimentConfig {
                model: model_cfg.clone(),
                train: train_cfg.clone(),
                output_dir: dir.clone(),
                ..cfg.clone()
            };
            log::info!("sweep variant {name}, seed {seed}");
            train_in(model_cfg, &train_cfg, &manifest, &split, &dir, None)?;
            let ckpt = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
            let model = ckpt.build_model(true, &Device::Cpu)?;
            let eval = evaluate_in(&run_cfg, &model, &manifest, &split, &dir)?;
            let last: Option<EpochMetrics> = fs::read_to_string(dir.join(METRICS_FILE))
                .map_err(|e| Error::io(dir.join(METRICS_FILE), e))?
                .lines()
                .last()
                .map(serde_json::from_str)
                .transpose()?;
            runs.push(SweepRow {
                variant: name.clone(),
                seed: Some(seed),
                closed_accuracy: eval.report.closed_accuracy,
                auc: eval.report.auc_by_strategy.clone(),
                final_train_mse: last.and_then(|m| m.train_mse),
            });
        }
        let n = runs.len() as f64;
        let mean = SweepRow {
            variant: name.clone(),
            seed: None,
            closed_accuracy: runs.iter().map(|r| r.closed_accuracy).sum::<f64>() / n,
            auc: cfg
                .strategies
                .iter()
                .filter(|s| runs.iter().all(|r| r.auc.contains_key(s)))
                .map(|s| (*s, runs.iter().map(|r| r.auc[s]).sum::<f64>() / n))
                .collect(),
            final_train_mse: if runs.iter().all(|r| r.final_train_mse.is_some()) {
                Some(runs.iter().map(|r| r.final_train_mse.unwrap_or(0.0)).sum::<f64>() / n)
            } else {
                None
            },
        };
        rows.extend(runs);
        rows.push(mean);
    }

    let mut strategies = cfg.strategies.clone();
    strategies.sort();
    strategies.dedup();
    let path = cfg.output_dir.join(SWEEP_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut header = vec!["variant".to_string(), "seed".into(), "closed_accuracy".into()];
    header.extend(strategies.iter().map(|s| format!("auc_{}", s.name().to_lowercase())));
    header.push("final_train_mse".into());
    let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    for r in &rows {
        let mut rec = vec![
            r.variant.clone(),
            r.seed.map(|s| s.to_string()).unwrap_or_else(|| "mean".into()),
            r.closed_accuracy.to_string(),
        ];
        rec.extend(strategies.iter().map(|s| fmt_opt(r.auc.get(s).copied())));
        rec.push(fmt_opt(r.final_train_mse));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let meta = SweepMeta {
        axis: match axis {
            SweepAxis::PatchSize => "patch_size",
            SweepAxis::Architecture => "architecture",
        },
        seeds: seed_list,
        variants: variants.iter().map(|(n, _)| n.as_str()).collect(),
        reference: SweepReference {
            accuracy_gain_up_to: 0.10,
            auc_gain_up_to: 0.09,
            note: "reference gain of the transformer and mask branches over the backbone alone at full scale",
        },
    };
    let mut meta_json = serde_json::to_string_pretty(&meta)?;
    meta_json.push('\n');
    write_file(&cfg.output_dir.join("sweep_meta.json"), meta_json)?;

    create_dir(&cfg.output_dir.join("plots"))?;
    let groups: Vec<Vec<f64>> = rows
        .iter()
        .filter(|r| r.seed.is_none())
        .map(|r| std::iter::once(r.closed_accuracy).chain(r.auc.values().copied()).collect())
        .collect();
    plot_bars(&groups, &cfg.output_dir.join("plots/sweep.png"))?;
    Ok(path)
}

/// Reads `sweep.csv` back into rows (strategy columns parsed by header).
pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let header = r.headers().map_err(err)?.clone();
    let parse = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Config(format!("{}: bad number {s:?}", path.display())))
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(err)?;
        let mut auc = BTreeMap::new();
        for (h, v) in header.iter().zip(rec.iter()) {
            if let Some(name) = h.strip_prefix("auc_") {
                if let Some(x) = parse(v)? {
                    auc.insert(name.parse().map_err(Error::Config)?, x);
                }
            }
        }
        rows.push(SweepRow {
            variant: rec[0].to_string(),
            seed: rec[1].parse().ok(),
            closed_accuracy: parse(&rec[2])?.unwrap_or(f64::NAN),
            auc,
            final_train_mse: parse(&rec[rec.len() - 1])?,
        });
    }
    Ok(rows)
}
