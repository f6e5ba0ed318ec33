//! Contrastive training loop with early stopping on validation loss.
//!
//! Each step runs every IMU sample through its own tape, evaluates the batch
//! objective on the pooled embeddings to get the gradient with respect to
//! each embedding, then backpropagates each row into the encoder. With
//! `recompute_activations` the per-sample tapes are dropped after the
//! forward pass and rebuilt for the backward pass, so memory is bounded by
//! one sample's activations regardless of batch size.

use std::time::Instant;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::TrainState;
use super::loss::{l2_normalize_rows, LossConfig, LossTerms};
use super::model::{AlignmentModel, EmbeddingStage, Pipeline};
use super::optim::{cosine_lr, AdamW, AdamWConfig};
use crate::data::{
    extract_window, make_batches, sequential_batches, ImuWindow, NormStats, PairedSample,
    WINDOW_LEN,
};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::linear;
use crate::params::ParamSet;
use crate::rng::{derive_seed, stream, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Validate every this many epochs; patience counts validations.
    pub eval_every: usize,
    pub drop_last: bool,
    /// Discard per-sample activations after the embedding pass and recompute
    /// them for the backward pass (bounded memory at full scale).
    pub recompute_activations: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            max_epochs: 100,
            patience: 10,
            lr: 1e-4,
            weight_decay: 1e-2,
            seed: 0,
            eval_every: 1,
            drop_last: false,
            recompute_activations: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.eval_every == 0 {
            return Err(Error::InvalidArgument(
                "max_epochs, patience and eval_every must be >= 1".into(),
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "contrastive batch size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(
                "lr must be > 0 and weight_decay >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_info_nce: f64,
    pub train_sup: f64,
    pub val_info_nce: f64,
    pub val_sup: f64,
    pub val_total: f64,
    pub lr: f64,
    pub wall_s: f64,
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records a validation loss; returns (improved, should_stop).
    pub fn observe(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// Supplies the validation loss after an epoch.
pub trait Validator {
    fn validate(&mut self, model: &AlignmentModel, epoch: usize) -> Result<LossTerms>;
}

/// Fixed validation losses, indexed by validation round (for tests and
/// dry runs of the stopping rule).
#[derive(Debug, Clone)]
pub struct ScriptedValidator {
    pub losses: Vec<f64>,
    calls: usize,
}

impl ScriptedValidator {
    pub fn new(losses: Vec<f64>) -> Self {
        Self { losses, calls: 0 }
    }
}

impl Validator for ScriptedValidator {
    fn validate(&mut self, _model: &AlignmentModel, _epoch: usize) -> Result<LossTerms> {
        let l = *self
            .losses
            .get(self.calls)
            .or(self.losses.last())
            .ok_or_else(|| Error::InvalidArgument("empty validation script".into()))?;
        self.calls += 1;
        Ok(LossTerms {
            info_nce: l,
            supervised: 0.0,
            total: l,
        })
    }
}

/// Loss of the current model over a held-out set, in sequential batches.
pub struct HeldOutValidator<'a> {
    samples: &'a [PairedSample],
    loss_cfg: LossConfig,
    batch_size: usize,
    vision: Option<Array2<f32>>,
}

impl<'a> HeldOutValidator<'a> {
    pub fn new(samples: &'a [PairedSample], loss_cfg: LossConfig, batch_size: usize) -> Self {
        Self {
            samples,
            loss_cfg,
            batch_size,
            vision: None,
        }
    }
}

impl Validator for HeldOutValidator<'_> {
    fn validate(&mut self, model: &AlignmentModel, _epoch: usize) -> Result<LossTerms> {
        if self.vision.is_none() {
            self.vision = Some(vision_matrix(model, self.samples)?);
        }
        let vis = self.vision.as_ref().expect("cached");
        evaluate_loss(model, self.samples, vis, &self.loss_cfg, self.batch_size)
    }
}

/// Normalized pooled vision embeddings for every sample (rows in order).
pub fn vision_matrix(model: &AlignmentModel, samples: &[PairedSample]) -> Result<Array2<f32>> {
    let rows: Vec<_> = samples
        .par_iter()
        .map(|s| model.vision_embedding(s))
        .collect::<Result<_>>()?;
    let raw = stack(&rows, model.d_model());
    l2_normalize_rows(raw.view())
}

/// Raw pooled IMU embeddings for every sample (eval mode, start-0 windows).
pub fn imu_matrix(model: &AlignmentModel, samples: &[PairedSample]) -> Result<Array2<f32>> {
    let rows: Vec<_> = samples
        .par_iter()
        .map(|s| model.imu_embedding(&s.imu))
        .collect::<Result<_>>()?;
    Ok(stack(&rows, model.d_model()))
}

fn stack(rows: &[ndarray::Array1<f32>], d: usize) -> Array2<f32> {
    let mut m = Array2::zeros((rows.len(), d));
    for (mut r, v) in m.rows_mut().into_iter().zip(rows) {
        r.assign(v);
    }
    m
}

/// Mean loss terms over sequential batches, weighted by batch size.
pub fn evaluate_loss(
    model: &AlignmentModel,
    samples: &[PairedSample],
    vision_norm: &Array2<f32>,
    loss_cfg: &LossConfig,
    batch_size: usize,
) -> Result<LossTerms> {
    let imu = imu_matrix(model, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut acc = (0.0, 0.0);
    for idx in sequential_batches(samples.len(), batch_size) {
        let imu_b = imu.select(Axis(0), &idx);
        let vis_b = vision_norm.select(Axis(0), &idx);
        let lab: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (terms, _) = batch_objective(&model.head, &imu_b, &vis_b, &lab, loss_cfg, false)?;
        let w = idx.len() as f64;
        acc.0 += terms.info_nce * w;
        acc.1 += terms.supervised * w;
    }
    let n = samples.len().max(1) as f64;
    Ok(LossTerms::combine(loss_cfg, acc.0 / n, acc.1 / n))
}

pub(crate) struct BatchGrads {
    pub imu_raw: Array2<f32>,
    pub head: Vec<Option<Array2<f32>>>,
}

/// infoNCE over normalized embeddings plus the supervised head on raw ones.
pub(crate) fn batch_objective(
    head: &ParamSet<f32>,
    imu_raw: &Array2<f32>,
    vis_norm: &Array2<f32>,
    labels: &[usize],
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(LossTerms, Option<BatchGrads>)> {
    let mut g = Graph::new();
    let x = g.input(imu_raw.clone(), want_grad);
    let xn = g.l2_normalize_rows(x)?;
    let v = g.constant(vis_norm.clone());
    let sim = g.matmul_nt(xn, v);
    let nce = g.info_nce(sim, cfg.tau, cfg.symmetric)?;
    let hb = head.bind(&mut g, want_grad);
    let logits = linear(&mut g, x, hb.id("weight"), Some(hb.id("bias")));
    let sup = g.cross_entropy(logits, labels)?;
    let total = g.add_scaled(nce, sup, cfg.lambda_sup as f32);
    let terms = LossTerms {
        info_nce: f64::from(g.scalar(nce)),
        supervised: f64::from(g.scalar(sup)),
        total: f64::from(g.scalar(total)),
    };
    if !want_grad {
        return Ok((terms, None));
    }
    let mut grads = g.backward_scalar(total);
    Ok((
        terms,
        Some(BatchGrads {
            imu_raw: grads
                .take(x)
                .unwrap_or_else(|| Array2::zeros(imu_raw.dim())),
            head: hb.grads(&grads),
        }),
    ))
}

/// One sample's training-mode tape; the dropout masks depend only on
/// `dropout_seed`, so a rebuilt tape reproduces the same forward pass.
struct SampleTape {
    graph: Graph<f32>,
    enc: crate::params::Bound,
    out: crate::graph::NodeId,
}

impl SampleTape {
    fn build(
        pipe: &Pipeline<f32>,
        window: &ImuWindow,
        dropout_seed: u64,
        stage: EmbeddingStage,
        grad: bool,
    ) -> Self {
        let mut graph = Graph::new();
        let enc = pipe.encoder.params.bind(&mut graph, grad);
        let res = pipe.resampler.params.bind(&mut graph, false);
        let x = graph.constant(window.values.clone());
        let mut rng = stream_rng(dropout_seed, stream::DROPOUT, &[]);
        let out = pipe.imu_pooled(
            &mut graph,
            &enc,
            &res,
            x,
            window.valid_len,
            Some(&mut rng),
            stage,
        );
        Self { graph, enc, out }
    }

    fn pooled(&self) -> ndarray::Array1<f32> {
        self.graph.value(self.out).row(0).to_owned()
    }

    /// Encoder gradients given d(loss)/d(pooled embedding).
    fn grads(&self, upstream: ArrayView1<'_, f32>) -> Vec<Option<Array2<f32>>> {
        let grads = self
            .graph
            .backward(self.out, upstream.to_owned().insert_axis(Axis(0)));
        self.enc.grads(&grads)
    }
}

/// Training-time window: a uniformly random start per epoch when the full
/// signal is longer than one window, otherwise the stored window.
fn training_window(sample: &PairedSample, seed: u64, epoch: usize) -> Result<ImuWindow> {
    match &sample.signal {
        Some(sig) if sig.nrows() > WINDOW_LEN => {
            let id_key = derive_seed(0, &sample.id, &[]);
            let mut rng = stream_rng(seed, stream::WINDOW, &[epoch as u64, id_key]);
            let start = rng.random_range(0..=sig.nrows() - WINDOW_LEN);
            extract_window(sig.view(), start, sample.signal_t0_s)
        }
        _ => Ok(sample.imu.clone()),
    }
}

fn add_into(acc: &mut [Option<Array2<f32>>], grads: Vec<Option<Array2<f32>>>) {
    for (a, g) in acc.iter_mut().zip(grads) {
        match (a.as_mut(), g) {
            (Some(a), Some(g)) => *a += &g,
            (None, Some(g)) => *a = Some(g),
            _ => {}
        }
    }
}

fn all_finite(grads: &[Option<Array2<f32>>]) -> bool {
    grads
        .iter()
        .flatten()
        .all(|g| g.iter().all(|v| v.is_finite()))
}

/// Result of a training run: the best-validation model and the epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AlignmentModel,
    pub state: TrainState,
    pub log: Vec<EpochRecord>,
    /// Loss on the training set before the first update.
    pub initial_train: LossTerms,
}

/// Trains with a held-out validator over `val`.
pub fn train(
    train_set: &[PairedSample],
    val_set: &[PairedSample],
    model: AlignmentModel,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let mut validator = HeldOutValidator::new(val_set, *loss_cfg, cfg.batch_size);
    train_with_validator(train_set, model, cfg, loss_cfg, &mut validator, on_epoch)
}

pub fn train_with_validator(
    train_set: &[PairedSample],
    mut model: AlignmentModel,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    validator: &mut dyn Validator,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::InvalidArgument(
            "training set needs at least two samples".into(),
        ));
    }
    let n_classes = model.n_classes();
    crate::alignment::loss::check_labels(
        &train_set.iter().map(|s| s.label).collect::<Vec<_>>(),
        n_classes,
    )?;

    model.norm = NormStats::fit(train_set.iter().map(|s| &s.imu));
    let frozen_before = model.frozen_digest();
    let stage = model.stage;
    let vis_norm = vision_matrix(&model, train_set)?;
    let initial_train = evaluate_loss(&model, train_set, &vis_norm, loss_cfg, cfg.batch_size)?;

    let mut enc_opt = AdamW::new(
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        &model.pipeline.encoder.params,
    );
    let mut head_opt = AdamW::new(
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        &model.head,
    );
    let steps_per_epoch = make_batches(
        train_set.len(),
        cfg.batch_size,
        cfg.seed,
        0,
        cfg.drop_last,
        true,
    )?
    .len();
    let total_steps = steps_per_epoch * cfg.max_epochs;
    let mut step = 0usize;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<(AlignmentModel, usize, f64)> = None;
    let mut log = Vec::new();
    let started = Instant::now();
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let batches = make_batches(
            train_set.len(),
            cfg.batch_size,
            cfg.seed,
            epoch,
            cfg.drop_last,
            true,
        )?;
        let mut sums = (0.0, 0.0, 0usize);
        let mut lr = cfg.lr;
        for (bi, idx) in batches.iter().enumerate() {
            lr = cosine_lr(cfg.lr, step, total_steps);
            let windows: Vec<ImuWindow> = idx
                .iter()
                .map(|&i| {
                    training_window(&train_set[i], cfg.seed, epoch).map(|w| model.norm.apply(&w))
                })
                .collect::<Result<_>>()?;
            let drop_seeds: Vec<u64> = idx
                .iter()
                .map(|&i| derive_seed(cfg.seed, stream::DROPOUT, &[epoch as u64, i as u64]))
                .collect();
            let pipe = &model.pipeline;
            let keep = !cfg.recompute_activations;
            let tapes: Vec<SampleTape> = windows
                .par_iter()
                .zip(drop_seeds.par_iter())
                .map(|(w, &s)| SampleTape::build(pipe, w, s, stage, keep))
                .collect();
            let rows: Vec<_> = tapes.iter().map(SampleTape::pooled).collect();
            let tapes = if keep { tapes } else { Vec::new() };
            let imu_raw = stack(&rows, model.d_model());
            let vis_b = vis_norm.select(Axis(0), idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train_set[i].label).collect();
            let (terms, grads) =
                batch_objective(&model.head, &imu_raw, &vis_b, &labels, loss_cfg, true)?;
            if !terms.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    info_nce: terms.info_nce,
                    supervised: terms.supervised,
                });
            }
            let grads = grads.expect("requested");
            let per_sample: Vec<_> = if keep {
                tapes
                    .par_iter()
                    .enumerate()
                    .map(|(k, t)| t.grads(grads.imu_raw.row(k)))
                    .collect()
            } else {
                windows
                    .par_iter()
                    .zip(drop_seeds.par_iter())
                    .enumerate()
                    .map(|(k, (w, &s))| {
                        SampleTape::build(pipe, w, s, stage, true).grads(grads.imu_raw.row(k))
                    })
                    .collect()
            };
            drop(tapes);
            let mut enc_grads: Vec<Option<Array2<f32>>> =
                vec![None; model.pipeline.encoder.params.len()];
            for g in per_sample {
                add_into(&mut enc_grads, g);
            }
            if !all_finite(&enc_grads) || !all_finite(&grads.head) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    info_nce: terms.info_nce,
                    supervised: terms.supervised,
                });
            }
            enc_opt.step(&mut model.pipeline.encoder.params, &enc_grads, lr)?;
            head_opt.step(&mut model.head, &grads.head, lr)?;
            step += 1;
            sums.0 += terms.info_nce * idx.len() as f64;
            sums.1 += terms.supervised * idx.len() as f64;
            sums.2 += idx.len();
        }
        if !model.pipeline.encoder.params.all_finite() {
            return Err(Error::NonFinite(format!(
                "encoder parameters after epoch {epoch}"
            )));
        }
        let seen = sums.2.max(1) as f64;
        let (train_nce, train_sup) = (sums.0 / seen, sums.1 / seen);

        if epoch % cfg.eval_every != 0 && epoch != cfg.max_epochs {
            continue;
        }
        let val = validator.validate(&model, epoch)?;
        let record = EpochRecord {
            epoch,
            train_info_nce: train_nce,
            train_sup,
            val_info_nce: val.info_nce,
            val_sup: val.supervised,
            val_total: val.total,
            lr,
            wall_s: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.push(record);
        let (improved, stop) = stopper.observe(epoch, val.total);
        if improved {
            best = Some((model.clone(), epoch, val.total));
        }
        if stop {
            break;
        }
    }

    if model.frozen_digest() != frozen_before {
        return Err(Error::Frozen(
            "resampler or vision provider changed during training".into(),
        ));
    }
    let (best_model, best_epoch, best_val) =
        best.unwrap_or_else(|| (model.clone(), epochs_run, f64::NAN));
    Ok(TrainOutcome {
        model: best_model,
        state: TrainState {
            best_epoch,
            best_val_loss: best_val,
            epochs_run,
            seed: cfg.seed,
        },
        log,
        initial_train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_rule() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(1, 3.0), (true, false));
        assert_eq!(s.observe(2, 2.0), (true, false));
        assert_eq!(s.observe(3, 2.1), (false, true));
        assert_eq!(s.best(), (2, 2.0));

        let mut s = EarlyStopping::new(3);
        let seq = [5.0, 4.0, 4.5, 4.2, 4.1];
        let stops: Vec<bool> = seq
            .iter()
            .enumerate()
            .map(|(i, &l)| s.observe(i + 1, l).1)
            .collect();
        assert_eq!(stops, [false, false, false, false, true]);
    }
}
