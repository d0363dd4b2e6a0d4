//! The optimization loop, run history, checkpoint container, evaluation and
//! the gradient-check runner.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{batch_iter, generate_synthetic, Dataset, GenConfig};
use crate::encoders::PooledFeatures;
use crate::error::{M3vError, Result};
use crate::losses::{compute_loss, LossBreakdown, LossConfig, LossWeights};
use crate::metrics::{build_report, eer, EvalReport, ReportInputs};
use crate::model::{M3VParams, ModelDims, ViewScores};
use crate::numerics::{grad_check, AdamConfig, OptimizerState, Parameters, Rng, RngState};
use crate::policy::{policy1_decide, policy2_decide, PolicyArtifact};

pub const CHECKPOINT_MAGIC: &str = "M3VCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    /// Higher is better.
    #[default]
    AccuracyMulti,
    /// Lower is better.
    EerMulti,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub temperature: f64,
    pub dims: ModelDims,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub validation_metric: ValidationMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            loss: LossConfig::default(),
            temperature: 0.07,
            dims: ModelDims::default(),
            patience: 5,
            validation_metric: ValidationMetric::AccuracyMulti,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(M3vError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(M3vError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(M3vError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(M3vError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        let d = &self.dims;
        let all = [d.audio_feat, d.text_feat, d.audio_repr, d.text_repr, d.contrastive, d.hidden];
        if all.iter().any(|&v| v < 2) {
            return Err(M3vError::Config(format!("all dims must be at least 2, got {d:?}")));
        }
        self.loss.weights.validate()?;
        if self.batch_size < 2 {
            log::warn!("batch_size 1 leaves the contrastive loss without negatives");
        }
        Ok(())
    }

    fn check_dataset(&self, ds: &Dataset, which: &str) -> Result<()> {
        if ds.audio_feat_dim() != self.dims.audio_feat || ds.text_feat_dim() != self.dims.text_feat {
            return Err(M3vError::Config(format!(
                "{which} set has feature dims ({}, {}), config expects ({}, {})",
                ds.audio_feat_dim(),
                ds.text_feat_dim(),
                self.dims.audio_feat,
                self.dims.text_feat
            )));
        }
        Ok(())
    }
}

/// One row of the run history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean over the epoch's batches.
    pub train: LossBreakdown,
    pub valid_accuracy_multi: f64,
    pub valid_eer_multi: Option<f64>,
    /// Single-sample batches this epoch.
    pub degenerate_batches: usize,
    /// `s_k` at the end of the epoch.
    pub log_var: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub params: M3VParams,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters are stored.
    pub best_epoch: usize,
    /// Shuffle stream state at the end of `best_epoch`.
    pub rng_state: RngState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let body = serde_json::to_string(self).expect("checkpoint serializes");
        let digest = crate::util::sha256_hex(body.as_bytes());
        format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nsha256 {digest}\n{body}\n").into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| M3vError::Integrity("checkpoint is not valid UTF-8".into()))?;
        let mut parts = text.splitn(3, '\n');
        let header = parts.next().unwrap_or_default();
        let version = header
            .strip_prefix(CHECKPOINT_MAGIC)
            .and_then(|v| v.strip_prefix(' '))
            .ok_or_else(|| M3vError::Integrity("missing M3VCKPT header".into()))?;
        let version: u32 = version
            .trim()
            .parse()
            .map_err(|_| M3vError::Integrity(format!("bad version field {version:?}")))?;
        if version != CHECKPOINT_VERSION {
            return Err(M3vError::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let digest = parts
            .next()
            .and_then(|l| l.strip_prefix("sha256 "))
            .ok_or_else(|| M3vError::Integrity("missing digest line".into()))?;
        let body = parts
            .next()
            .and_then(|b| b.strip_suffix('\n'))
            .ok_or_else(|| M3vError::Integrity("checkpoint body is truncated".into()))?;
        if crate::util::sha256_hex(body.as_bytes()) != digest {
            return Err(M3vError::Integrity("checkpoint digest mismatch".into()));
        }
        let ckpt: Checkpoint =
            serde_json::from_str(body).map_err(|e| M3vError::Serde(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(M3vError::UnsupportedVersion {
                found: ckpt.version,
                supported: CHECKPOINT_VERSION,
            });
        }
        ckpt.params.validate()?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    crate::util::write_atomic(path.as_ref(), &ckpt.to_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| M3vError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn labels_of(ds: &Dataset) -> Vec<usize> {
    ds.samples().iter().map(|s| s.label.index()).collect()
}

fn bool_labels(ds: &Dataset) -> Vec<bool> {
    ds.samples().iter().map(|s| s.label.is_positive()).collect()
}

/// The four view scores of every sample, in dataset order.
pub fn score_dataset(params: &M3VParams, ds: &Dataset) -> Result<Vec<ViewScores>> {
    params.score_pooled(&PooledFeatures::from_dataset(ds)?)
}

/// Accuracy and EER of the multi head on a pre-pooled set.
fn validation_metrics(params: &M3VParams, pooled: &PooledFeatures, labels: &[bool]) -> Result<(f64, Option<f64>)> {
    let scores: Vec<f64> = params.score_pooled(pooled)?.iter().map(|s| s.v_multi).collect();
    let correct = scores.iter().zip(labels).filter(|(&s, &l)| (s > 0.5) == l).count();
    Ok((correct as f64 / labels.len() as f64, eer(&scores, labels).ok()))
}

fn mean_breakdown(acc: &[(LossBreakdown, usize)]) -> LossBreakdown {
    let total: usize = acc.iter().map(|(_, n)| n).sum();
    let mut out = LossBreakdown {
        l_audio: 0.0,
        l_text: 0.0,
        l_multi: 0.0,
        l_contrastive: 0.0,
        l_total: 0.0,
        effective_weights: [0.0; 4],
        regularizer: 0.0,
    };
    for (b, n) in acc {
        let w = *n as f64 / total as f64;
        out.l_audio += w * b.l_audio;
        out.l_text += w * b.l_text;
        out.l_multi += w * b.l_multi;
        out.l_contrastive += w * b.l_contrastive;
        out.l_total += w * b.l_total;
        out.regularizer += w * b.regularizer;
        for k in 0..4 {
            out.effective_weights[k] += w * b.effective_weights[k];
        }
    }
    out
}

/// Trains from scratch and returns the checkpoint of the best validation
/// epoch.
pub fn train(cfg: &TrainConfig, train_set: &Dataset, valid_set: &Dataset) -> Result<Checkpoint> {
    cfg.validate()?;
    cfg.check_dataset(train_set, "training")?;
    cfg.check_dataset(valid_set, "validation")?;
    let valid_labels = bool_labels(valid_set);
    if cfg.validation_metric == ValidationMetric::EerMulti
        && (valid_labels.iter().all(|&l| l) || valid_labels.iter().all(|&l| !l))
    {
        return Err(M3vError::Config(
            "eer_multi selection needs both classes in the validation set".into(),
        ));
    }

    let root = Rng::new(cfg.seed);
    let mut params = M3VParams::new(&cfg.dims, cfg.temperature, &mut root.fork(1))?;
    let mut shuffle = root.fork(2);
    let mut optim = OptimizerState::new(AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    });

    let train_pooled = PooledFeatures::from_dataset(train_set)?;
    let valid_pooled = PooledFeatures::from_dataset(valid_set)?;
    let train_labels = labels_of(train_set);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, M3VParams, RngState)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        let epoch_seed = shuffle.next_u64();
        let mut parts = Vec::new();
        let mut degenerate = 0usize;
        for (b, batch) in batch_iter(train_set, cfg.batch_size, epoch_seed).enumerate() {
            let pooled = train_pooled.select(&batch.indices);
            let labels: Vec<usize> = batch.indices.iter().map(|&i| train_labels[i]).collect();
            let (outputs, trace) = params.forward_traced(&pooled)?;
            let lg = compute_loss(&outputs, &labels, params.temperature, &cfg.loss, &params.loss_weights.log_var)?;
            if !lg.breakdown.is_finite() {
                return Err(M3vError::NonFiniteLoss { epoch, batch: b });
            }
            degenerate += usize::from(lg.degenerate);
            params.zero_grad();
            params.backward(&outputs, &trace, &lg.outputs)?;
            params.loss_weights.grad = lg.log_var;
            optim.step(&mut params)?;
            parts.push((lg.breakdown, batch.len()));
        }

        let (acc, eer_multi) = validation_metrics(&params, &valid_pooled, &valid_labels)?;
        let record = EpochRecord {
            epoch,
            train: mean_breakdown(&parts),
            valid_accuracy_multi: acc,
            valid_eer_multi: eer_multi,
            degenerate_batches: degenerate,
            log_var: params.loss_weights.log_var,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (a {:.4} t {:.4} m {:.4} c {:.4}) valid acc {:.4}",
            record.train.l_total,
            record.train.l_audio,
            record.train.l_text,
            record.train.l_multi,
            record.train.l_contrastive,
            acc
        );
        history.push(record);

        // larger is better in both cases after the sign flip
        let score = match cfg.validation_metric {
            ValidationMetric::AccuracyMulti => acc,
            ValidationMetric::EerMulti => -eer_multi.unwrap_or(1.0),
        };
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, epoch, params.clone(), shuffle.state()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                log::info!("no validation improvement for {since_best} epochs, stopping");
                break;
            }
        }
    }

    let (_, best_epoch, params, rng_state) = best.expect("at least one epoch ran");
    Ok(Checkpoint {
        version: CHECKPOINT_VERSION,
        params,
        config: cfg.clone(),
        history,
        best_epoch,
        rng_state,
    })
}

/// Scores `ds` and builds the report; policy rows are included when a
/// policy artifact is given.
pub fn evaluate(params: &M3VParams, ds: &Dataset, policy: Option<&PolicyArtifact>) -> Result<EvalReport> {
    let scores = score_dataset(params, ds)?;
    let labels = bool_labels(ds);
    let flags: Option<Vec<bool>> = ds
        .has_misalignment_flags()
        .then(|| ds.samples().iter().map(|s| s.misaligned).collect());
    let p1: Option<Vec<_>> = policy.map(|p| scores.iter().map(|s| policy1_decide(s, &p.thresholds)).collect());
    let p2: Option<Vec<_>> = policy.map(|p| {
        scores
            .iter()
            .map(|s| policy2_decide(s, &p.svm, p.thresholds.t_fusion))
            .collect()
    });
    build_report(ReportInputs {
        scores: &scores,
        labels: &labels,
        misaligned: flags.as_deref(),
        policy1: p1.as_deref(),
        policy2: p2.as_deref(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub batch_size: usize,
    pub h: f64,
    pub tolerance: f64,
    /// Coordinates probed per component; every coordinate when larger than
    /// the parameter count.
    pub probes: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            batch_size: 8,
            h: 1e-5,
            tolerance: 1e-4,
            probes: usize::MAX,
            temperature: 0.07,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// `(component, max relative error)` for `L_a`, `L_t`, `L_m`, `L_c` and
    /// the automatically weighted total.
    pub components: Vec<(String, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.components.iter().map(|c| c.1).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.tolerance
    }
}

/// Finite-difference check of every loss component through the whole
/// network on one random batch. `sabotage` perturbs the analytic gradient
/// and exists to prove the check can fail.
pub fn run_grad_check(cfg: &GradCheckConfig, sabotage: bool) -> Result<GradCheckReport> {
    if cfg.batch_size < 2 {
        return Err(M3vError::Config("grad check needs a batch of at least 2".into()));
    }
    if !(cfg.h > 0.0 && cfg.tolerance > 0.0) {
        return Err(M3vError::Config("h and tolerance must be positive".into()));
    }
    let dims = ModelDims {
        audio_feat: 6,
        text_feat: 5,
        audio_repr: 4,
        text_repr: 3,
        contrastive: 3,
        hidden: 5,
    };
    let data = generate_synthetic(&GenConfig {
        n_samples: cfg.batch_size,
        frames: (2, 4),
        tokens: (1, 3),
        audio_feat_dim: dims.audio_feat,
        text_feat_dim: dims.text_feat,
        content_dim: 2,
        seed: cfg.seed,
        ..GenConfig::default()
    })?;
    let pooled = PooledFeatures::from_dataset(&data)?;
    let labels = labels_of(&data);
    let root = Rng::new(cfg.seed);
    let mut base = M3VParams::new(&dims, cfg.temperature, &mut root.fork(1))?;
    // move the learned log-variances off zero so their gradients are exercised
    base.loss_weights.log_var = [0.3, -0.2, 0.1, -0.4];

    let one_hot = |k: usize| {
        let mut w = [0.0; 4];
        w[k] = 1.0;
        LossWeights::Fixed {
            audio: w[0],
            text: w[1],
            multi: w[2],
            contrastive: w[3],
        }
    };
    let cases = [
        ("L_a", one_hot(0)),
        ("L_t", one_hot(1)),
        ("L_m", one_hot(2)),
        ("L_c", one_hot(3)),
        ("automatic", LossWeights::Automatic),
    ];

    let mut components = Vec::new();
    for (k, (name, weights)) in cases.into_iter().enumerate() {
        let loss_cfg = LossConfig {
            weights,
            ..LossConfig::default()
        };
        let mut params = base.clone();
        let (outputs, trace) = params.forward_traced(&pooled)?;
        let lg = compute_loss(&outputs, &labels, params.temperature, &loss_cfg, &params.loss_weights.log_var)?;
        params.zero_grad();
        params.backward(&outputs, &trace, &lg.outputs)?;
        params.loss_weights.grad = lg.log_var;
        let theta = params.flat_params();
        let mut analytic = params.flat_grads();
        if sabotage {
            analytic.iter_mut().for_each(|g| *g = *g * 1.5 + 1e-3);
        }
        let mut probe_model = params.clone();
        let loss = |flat: &[f64]| {
            probe_model.set_flat_params(flat);
            let out = probe_model.forward(&pooled).expect("shapes fixed");
            compute_loss(&out, &labels, probe_model.temperature, &loss_cfg, &probe_model.loss_weights.log_var)
                .expect("valid batch")
                .breakdown
                .l_total
        };
        let err = grad_check(&theta, &analytic, loss, cfg.probes, cfg.h, &mut root.fork(10 + k as u64));
        components.push((name.to_string(), err));
    }
    Ok(GradCheckReport {
        components,
        tolerance: cfg.tolerance,
    })
}
