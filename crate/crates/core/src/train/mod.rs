//! Staged fine-tuning: practice questions, then a source task, then the
//! target task, each stage starting from the previous stage's best-on-dev
//! parameters.

mod metrics;
mod optim;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{argmax, compute_metrics, is_tied, selection_metric_name, sigmoid_decisions, Metrics};
pub use optim::{clip_grad_norm, learning_rate, Adam, AdamConfig, CLIP_NORM, WARMUP_FRACTION};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Head, Model, ModelConfig, Params};
use crate::parallel;
use crate::strategies::{Encoder, OptionInput, OrderScheme};
use crate::text::{build_vocab, Tagger, Vocab};

pub const DEFAULT_LR: f64 = 2.5e-4;
pub const DEFAULT_BATCH_SIZE: usize = 8;
pub const DEFAULT_LAMBDA: f64 = 2.0;

fn default_lr() -> f64 {
    DEFAULT_LR
}
fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

/// Hyperparameters of one fine-tuning stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    pub epochs: usize,
    #[serde(default = "OrderScheme::dq_o")]
    pub scheme: OrderScheme,
    #[serde(default)]
    pub head: Head,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stop after the first epoch whose dev selection metric reaches this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at: Option<f64>,
}

impl StageConfig {
    pub fn new(name: impl Into<String>, epochs: usize) -> Self {
        StageConfig {
            name: name.into(),
            epochs,
            scheme: OrderScheme::dq_o(),
            head: Head::Softmax,
            lambda: DEFAULT_LAMBDA,
            lr: DEFAULT_LR,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            stop_at: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(format!("stage '{}': {msg}", self.name)));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be non-negative, got {}", self.lr));
        }
        Ok(())
    }
}

/// A stage as written in a plan file: hyperparameters plus dataset paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    #[serde(flatten)]
    pub config: StageConfig,
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
}

/// Relative paths are resolved against the plan file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    /// `vocab_size` is an upper bound; the built vocabulary may be smaller.
    pub model: ModelConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_dir: Option<PathBuf>,
    pub stages: Vec<StageSpec>,
}

impl StagePlan {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan: StagePlan = serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        plan.resolve_paths(base);
        Ok(plan)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.lexicon.as_mut().map(fix);
        self.init_checkpoint.as_mut().map(fix);
        self.run_dir.as_mut().map(fix);
        for s in &mut self.stages {
            fix(&mut s.train);
            s.dev.as_mut().map(fix);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean objective over the epoch's training instances, dropout active.
    pub train_loss: f64,
    pub train_classification: f64,
    pub train_lm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub stage: String,
    pub selection_metric: &'static str,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub selected_epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_value: Option<f64>,
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn dev_trajectory(&self) -> Vec<f64> {
        self.epochs
            .iter()
            .filter_map(|e| e.dev.as_ref().map(Metrics::selection_value))
            .collect()
    }
}

/// An instance ready for the model.
pub struct Encoded {
    pub inputs: Vec<OptionInput>,
    pub gold: Vec<usize>,
}

pub fn encode_dataset(encoder: &Encoder, dataset: &Dataset) -> Result<Vec<Encoded>> {
    parallel::install(|| {
        dataset
            .instances
            .par_iter()
            .map(|inst| {
                Ok(Encoded {
                    inputs: encoder.encode(inst)?,
                    gold: inst.gold.clone(),
                })
            })
            .collect()
    })
}

/// Per-instance option scores, in dataset order.
pub fn score_encoded(model: &Model, data: &[Encoded]) -> Result<Vec<Vec<f64>>> {
    parallel::install(|| data.par_iter().map(|e| model.forward_choice(&e.inputs)).collect())
}

fn require_labeled(dataset: &Dataset) -> Result<()> {
    match dataset.instances.iter().find(|i| !i.is_labeled()) {
        Some(inst) => Err(Error::invalid(format!("instance {:?} has no gold label", inst.id))),
        None => Ok(()),
    }
}

fn check_head(dataset: &Dataset, head: Head) -> Result<()> {
    if head == Head::Softmax && (dataset.multi_answer || dataset.instances.iter().any(|i| i.gold.len() > 1)) {
        return Err(Error::invalid("softmax head needs a single-answer dataset; use the sigmoid head"));
    }
    Ok(())
}

pub fn evaluate_encoded(model: &Model, data: &[Encoded], head: Head) -> Result<Metrics> {
    let scores = score_encoded(model, data)?;
    let gold: Vec<Vec<usize>> = data.iter().map(|e| e.gold.clone()).collect();
    Ok(compute_metrics(head, &scores, &gold))
}

pub fn evaluate(model: &Model, vocab: &Vocab, tagger: &Tagger, dataset: &Dataset, scheme: &OrderScheme, head: Head) -> Result<Metrics> {
    require_labeled(dataset)?;
    let encoder = Encoder::new(vocab, tagger, scheme.clone(), model.config.max_len);
    evaluate_encoded(model, &encode_dataset(&encoder, dataset)?, head)
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains `model` on `train` and returns the parameters of the best dev
/// epoch (the last epoch when there is no dev set).
pub fn train_stage(
    model: Model,
    vocab: &Vocab,
    tagger: &Tagger,
    train: &Dataset,
    dev: Option<&Dataset>,
    stage: &StageConfig,
) -> Result<(Model, TrainReport)> {
    stage.validate()?;
    if train.is_empty() {
        return Err(Error::invalid(format!("stage '{}': training set is empty", stage.name)));
    }
    require_labeled(train)?;
    check_head(train, stage.head)?;
    if let Some(dev) = dev {
        require_labeled(dev)?;
        check_head(dev, stage.head)?;
    }
    let start = Instant::now();
    let encoder = Encoder::new(vocab, tagger, stage.scheme.clone(), model.config.max_len);
    let train_data = encode_dataset(&encoder, train)?;
    let dev_data = dev.map(|d| encode_dataset(&encoder, d)).transpose()?;

    let mut model = model;
    let mut adam = Adam::new(&model.config, AdamConfig::default());
    let steps_per_epoch = train_data.len().div_ceil(stage.batch_size);
    let total_steps = steps_per_epoch * stage.epochs;
    let use_dropout = model.config.dropout > 0.0;
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut records = Vec::with_capacity(stage.epochs);
    let mut best: Option<(f64, usize, Params)> = None;

    for epoch in 0..stage.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(stage.seed, epoch as u64)));
        let mut sums = [0.0; 3];
        for (b, batch) in order.chunks(stage.batch_size).enumerate() {
            let step = epoch * steps_per_epoch + b;
            let weight = 1.0 / batch.len() as f64;
            let current = &model;
            let results: Vec<Result<_>> = parallel::install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let e = &train_data[i];
                        let mut grads = Params::zeros(&current.config);
                        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(stage.seed, step as u64), i as u64));
                        let out = current.objective(
                            &e.inputs,
                            &e.gold,
                            stage.lambda,
                            stage.head,
                            use_dropout.then_some(&mut rng),
                            Some((&mut grads, weight)),
                        )?;
                        Ok((out, grads))
                    })
                    .collect()
            });
            let mut grads = Params::zeros(&model.config);
            for r in results {
                let (out, g) = r?;
                if !out.loss.is_finite() {
                    return Err(Error::NonFinite {
                        stage: stage.name.clone(),
                        epoch: epoch + 1,
                        step,
                    });
                }
                sums[0] += out.loss;
                sums[1] += out.classification;
                sums[2] += out.lm;
                grads.add_assign(&g);
            }
            if !grads.is_finite() {
                return Err(Error::NonFinite {
                    stage: stage.name.clone(),
                    epoch: epoch + 1,
                    step,
                });
            }
            clip_grad_norm(&mut grads, CLIP_NORM);
            let lr = learning_rate(stage.lr, step, total_steps);
            if lr > 0.0 {
                adam.step(&mut model.params, &grads, lr);
            }
        }
        model.params.round_to_f32();
        let n = train_data.len() as f64;
        let dev_metrics = dev_data.as_ref().map(|d| evaluate_encoded(&model, d, stage.head)).transpose()?;
        let value = dev_metrics.as_ref().map(Metrics::selection_value);
        records.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: sums[0] / n,
            train_classification: sums[1] / n,
            train_lm: sums[2] / n,
            dev: dev_metrics,
        });
        let improved = match (&best, value) {
            (None, _) => true,
            (Some((b, _, _)), Some(v)) => v > *b,
            (Some(_), None) => true,
        };
        if improved {
            best = Some((value.unwrap_or(f64::NAN), epoch + 1, model.params.clone()));
        }
        if let (Some(v), Some(target)) = (value, stage.stop_at) {
            if v >= target {
                break;
            }
        }
    }

    let (value, selected_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    let report = TrainReport {
        stage: stage.name.clone(),
        selection_metric: selection_metric_name(stage.head),
        epochs: records,
        selected_epoch,
        selected_value: dev_data.is_some().then_some(value),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// A stage with its data already in memory.
pub struct StageData {
    pub config: StageConfig,
    pub train: Dataset,
    pub dev: Option<Dataset>,
}

#[derive(Debug)]
pub struct PipelineOutput {
    /// Parameters selected by the last stage, tagged with its scheme and head.
    pub checkpoint: Checkpoint,
    pub reports: Vec<TrainReport>,
    /// One checkpoint per stage, when a run directory was given.
    pub stage_checkpoints: Vec<PathBuf>,
}

/// Runs `stages` in order. With `run_dir`, writes `NN-name.ckpt`,
/// `NN-name.metrics.json` for each stage and `report.json` at the end.
pub fn run_stages(model: Model, vocab: Vocab, tagger: &Tagger, stages: &[StageData], run_dir: Option<&Path>) -> Result<PipelineOutput> {
    if stages.is_empty() {
        return Err(Error::invalid("plan has no stages"));
    }
    for s in stages {
        s.config.validate()?;
    }
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut model = model;
    let mut reports = Vec::new();
    let mut paths = Vec::new();
    let mut last = None;
    for (i, s) in stages.iter().enumerate() {
        let (trained, report) = train_stage(model, &vocab, tagger, &s.train, s.dev.as_ref(), &s.config)?;
        model = trained;
        let ckpt = Checkpoint {
            model: model.clone(),
            vocab: vocab.clone(),
            scheme: s.config.scheme.clone(),
            head: s.config.head,
        };
        if let Some(dir) = run_dir {
            let stem = format!("{:02}-{}", i + 1, s.config.name);
            let path = dir.join(format!("{stem}.ckpt"));
            ckpt.save(&path)?;
            write_json(&dir.join(format!("{stem}.metrics.json")), &report)?;
            paths.push(path);
        }
        reports.push(report);
        last = Some(ckpt);
    }
    if let Some(dir) = run_dir {
        write_json(&dir.join("report.json"), &reports)?;
    }
    Ok(PipelineOutput {
        checkpoint: last.expect("non-empty plan"),
        reports,
        stage_checkpoints: paths,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Loads every dataset named in `plan`, builds (or inherits) the
/// vocabulary, initializes the model and runs the stages.
pub fn run_pipeline(plan: &StagePlan) -> Result<PipelineOutput> {
    let tagger_owned;
    let tagger = match &plan.lexicon {
        Some(p) => {
            tagger_owned = Tagger::from_file(p)?;
            &tagger_owned
        }
        None => Tagger::bundled(),
    };
    let mut stages = Vec::with_capacity(plan.stages.len());
    for s in &plan.stages {
        s.config.validate()?;
        let multi = s.config.head == Head::Sigmoid;
        stages.push(StageData {
            config: s.config.clone(),
            train: Dataset::load_jsonl(&s.train, multi)?,
            dev: s.dev.as_ref().map(|d| Dataset::load_jsonl(d, multi)).transpose()?,
        });
    }
    let (model, vocab) = match &plan.init_checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let expected = ModelConfig {
                vocab_size: ck.model.config.vocab_size,
                ..plan.model.clone()
            };
            ck.model.config.check_compatible(&expected).map_err(|e| Error::Checkpoint {
                path: path.clone(),
                msg: e.to_string(),
            })?;
            (ck.model, ck.vocab)
        }
        None => {
            let texts: Vec<&str> = stages
                .iter()
                .flat_map(|s| s.train.texts().chain(s.dev.iter().flat_map(|d| d.texts())))
                .collect();
            let vocab = build_vocab(&texts, plan.model.vocab_size)?;
            let config = ModelConfig {
                vocab_size: vocab.len(),
                ..plan.model.clone()
            };
            let model = Model::new(config, &mut ChaCha8Rng::seed_from_u64(plan.seed))?;
            (model, vocab)
        }
    };
    run_stages(model, vocab, tagger, &stages, plan.run_dir.as_deref())
}
