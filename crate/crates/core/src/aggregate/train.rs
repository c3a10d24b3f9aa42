//! Downstream training drivers: linear probing over cached features,
//! full fine-tuning through the encoder, and the layer-wise probe sweep.
//! Probing and fine-tuning share one batch loop, so fine-tuning with a
//! frozen encoder and a constant schedule reduces to probing exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::cache::FeatureSet;
use crate::aggregate::head::{
    build_head, head_forward, sigmoid_scores, BnState, HeadConfig, HeadIds, HeadMode,
};
use crate::aggregate::{aggregate_on_tape, layer_summaries, tape_layer_summaries, AggregationMode};
use crate::backbone::model::{cast_tensor, CaptureOpts, Mode, VitModel};
use crate::data::metrics::{evaluate, Metrics};
use crate::data::preprocess::preprocess;
use crate::data::record::{EcgRecord, SAMPLE_RATE, SIGNAL_LEN};
use crate::data::split::{assert_no_leakage, FoldDesignation};
use crate::error::{Error, Result};
use crate::numcore::optim::{AdamW, AdamWConfig};
use crate::numcore::params::ParamStore;
use crate::numcore::rng::{stream, StreamTag};
use crate::numcore::scalar::Scalar;
use crate::numcore::schedule::{LrSchedule, ScheduleKind};
use crate::numcore::tape::{NodeId, Tape};
use crate::numcore::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainKind {
    Probe,
    Finetune,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub scheduler: ScheduleKind,
    pub warmup_epochs: u64,
    pub threshold: f64,
    pub seed: u64,
    pub head: HeadConfig,
    pub optimizer: AdamWConfig,
    /// Pin the gate to exactly uniform weights (pooled-equivalent).
    pub freeze_gate_uniform: bool,
    /// Fine-tuning only: train the encoder; false reduces to probing.
    pub encoder_trainable: bool,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        DownstreamConfig::probe_default()
    }
}

impl DownstreamConfig {
    pub fn probe_default() -> Self {
        DownstreamConfig {
            epochs: 100,
            batch_size: 64,
            lr: 0.001,
            scheduler: ScheduleKind::Constant,
            warmup_epochs: 0,
            threshold: 0.5,
            seed: 0,
            head: HeadConfig::default(),
            optimizer: AdamWConfig::default(),
            freeze_gate_uniform: false,
            encoder_trainable: false,
        }
    }

    pub fn finetune_default() -> Self {
        DownstreamConfig {
            scheduler: ScheduleKind::CosineWithWarmup,
            warmup_epochs: 5,
            encoder_trainable: true,
            ..DownstreamConfig::probe_default()
        }
    }

    fn schedule(&self, epochs: usize) -> LrSchedule {
        match self.scheduler {
            ScheduleKind::Constant => LrSchedule::constant(self.lr),
            ScheduleKind::CosineWithWarmup => {
                LrSchedule::cosine(self.lr, self.warmup_epochs, epochs as u64)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DownstreamOutcome {
    pub metrics: Metrics,
    /// Per-test-sample gate weights (id, weights), gated mode only.
    pub gate_weights: Vec<(String, Vec<f64>)>,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
}

/// Stored signals are already preprocessed; re-running preprocessing at
/// ingestion is the documented contract and is idempotent up to storage
/// precision.
pub fn record_signal(record: &EcgRecord) -> Result<Vec<Vec<f64>>> {
    let leads: Vec<Vec<f64>> = (0..record.signal.len() / SIGNAL_LEN)
        .map(|c| record.lead(c).iter().map(|&v| v as f64).collect())
        .collect();
    preprocess(&leads, SAMPLE_RATE)
}

/// Frozen-encoder feature extraction: per-record layer summaries, in record
/// order, parallel across records.
pub fn extract_features<S: Scalar>(
    model: &VitModel<S>,
    records: &[EcgRecord],
) -> Result<FeatureSet> {
    let summaries: Result<Vec<_>> = records
        .par_iter()
        .map(|r| {
            let signal = record_signal(r)?;
            let (acts, layout) = model.capture_activations(&signal, CaptureOpts::hidden_only())?;
            layer_summaries(&acts, &layout)
        })
        .collect();
    let summaries = summaries?;
    Ok(FeatureSet {
        depth: model.config.depth,
        dim: model.config.embed_dim,
        ids: records.iter().map(|r| r.id.clone()).collect(),
        labels: records.iter().map(|r| r.labels.clone()).collect(),
        summaries,
    })
}

fn batch_targets<S: Scalar>(labels: &[&Vec<u8>]) -> Tensor<S> {
    let cols = labels[0].len();
    let mut data = Vec::with_capacity(labels.len() * cols);
    for l in labels {
        data.extend(l.iter().map(|&v| S::of(v as f64)));
    }
    Tensor::matrix(labels.len(), cols, data).expect("target shape")
}

/// Where parameters live and where summaries come from. For probing the
/// source owns a standalone head store and reads cached features; for
/// fine-tuning it borrows the model, whose store carries encoder and head
/// parameters together.
enum Source<'a, S: Scalar> {
    Cached {
        features: &'a FeatureSet,
        store: ParamStore<S>,
    },
    Model {
        model: &'a mut VitModel<S>,
        signals: Vec<Vec<Vec<f64>>>,
    },
}

impl<'a, S: Scalar> Source<'a, S> {
    fn dims(&self) -> (usize, usize) {
        match self {
            Source::Cached { features, .. } => (features.depth, features.dim),
            Source::Model { model, .. } => (model.config.depth, model.config.embed_dim),
        }
    }

    fn store_ref(&self) -> &ParamStore<S> {
        match self {
            Source::Cached { store, .. } => store,
            Source::Model { model, .. } => &model.store,
        }
    }

    fn store_mut(&mut self) -> &mut ParamStore<S> {
        match self {
            Source::Cached { store, .. } => store,
            Source::Model { model, .. } => &mut model.store,
        }
    }

    fn summaries(&self, tape: &mut Tape<S>, idx: usize, mode: &mut Mode) -> Result<NodeId> {
        match self {
            Source::Cached { features, .. } => {
                let s = cast_tensor::<f64, S>(&features.summaries[idx]);
                Ok(tape.input(&s))
            }
            Source::Model { model, signals } => {
                let (_, cap, layout) =
                    model.forward_record(tape, &signals[idx], mode, CaptureOpts::hidden_only())?;
                tape_layer_summaries(tape, &cap, &layout)
            }
        }
    }
}

/// One (fold, seed) downstream run over the shared batch loop.
fn run_downstream<S: Scalar>(
    source: &mut Source<S>,
    agg: AggregationMode,
    cfg: &DownstreamConfig,
    ids: &[String],
    labels: &[Vec<u8>],
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<DownstreamOutcome> {
    let (depth, dim) = source.dims();
    agg.validate(depth)?;
    let label_count = labels[0].len();

    let head = {
        let mut init_rng = stream(cfg.seed, StreamTag::Init, &[1]);
        build_head(
            source.store_mut(),
            &mut init_rng,
            dim,
            label_count,
            depth,
            cfg.head,
            agg.uses_gate(),
        )
    };
    let mut bn = BnState::new(dim);
    let mut optimizer = AdamW::new(cfg.optimizer, source.store_ref());
    let schedule = cfg.schedule(cfg.epochs);

    let mut train_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch as u64);
        let mut order = train_idx.to_vec();
        {
            use rand::seq::SliceRandom;
            let mut rng = stream(cfg.seed, StreamTag::Shuffle, &[epoch as u64]);
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut dropout_rng =
                stream(cfg.seed, StreamTag::Dropout, &[epoch as u64, step as u64]);
            let mut tape = Tape::new();
            let mut rows = Vec::with_capacity(batch.len());
            for &idx in batch {
                let mut mode = Mode::Train {
                    rng: &mut dropout_rng,
                };
                let summaries = source.summaries(&mut tape, idx, &mut mode)?;
                let (feature, _) = aggregate_on_tape(
                    &mut tape,
                    source.store_ref(),
                    summaries,
                    agg,
                    head.gate.as_ref(),
                    cfg.freeze_gate_uniform,
                )?;
                rows.push(feature);
            }
            let features = tape.concat_rows(&rows)?;
            let logits = head_forward(
                &mut tape,
                source.store_ref(),
                &head,
                features,
                &mut bn,
                &mut HeadMode::Train {
                    rng: &mut dropout_rng,
                },
            )?;
            let batch_labels: Vec<&Vec<u8>> = batch.iter().map(|&i| &labels[i]).collect();
            let targets = batch_targets::<S>(&batch_labels);
            let loss = tape.bce_with_logits(logits, &targets)?;
            let loss_val = tape.data(loss)[0].as_f64();
            if !loss_val.is_finite() {
                return Err(Error::Numeric {
                    context: "downstream training",
                    message: format!("non-finite loss at epoch {epoch} step {step}"),
                });
            }
            tape.backward(loss)?;
            {
                let store = source.store_mut();
                tape.accumulate_param_grads(store)?;
                optimizer.step(store, lr);
                store.zero_grads();
            }
            epoch_loss += loss_val;
            steps += 1;
        }
        train_loss.push(epoch_loss / steps.max(1) as f64);
    }

    let (metrics, gate_weights) =
        evaluate_head(source, &head, &mut bn, agg, cfg, ids, labels, test_idx)?;
    Ok(DownstreamOutcome {
        metrics,
        gate_weights,
        train_loss,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_head<S: Scalar>(
    source: &Source<S>,
    head: &HeadIds,
    bn: &mut BnState<S>,
    agg: AggregationMode,
    cfg: &DownstreamConfig,
    ids: &[String],
    labels: &[Vec<u8>],
    test_idx: &[usize],
) -> Result<(Metrics, Vec<(String, Vec<f64>)>)> {
    let label_count = labels[0].len();
    let mut tape = Tape::new();
    let mut rows = Vec::with_capacity(test_idx.len());
    let mut weight_nodes = Vec::new();
    for &idx in test_idx {
        let mut mode = Mode::Eval;
        let summaries = source.summaries(&mut tape, idx, &mut mode)?;
        let (feature, weights) = aggregate_on_tape(
            &mut tape,
            source.store_ref(),
            summaries,
            agg,
            head.gate.as_ref(),
            cfg.freeze_gate_uniform,
        )?;
        rows.push(feature);
        if let Some(w) = weights {
            weight_nodes.push((ids[idx].clone(), w));
        }
    }
    let features = tape.concat_rows(&rows)?;
    let logits = head_forward(
        &mut tape,
        source.store_ref(),
        head,
        features,
        bn,
        &mut HeadMode::Eval,
    )?;
    let scores = sigmoid_scores(tape.data(logits));
    let mut targets = Vec::with_capacity(test_idx.len() * label_count);
    for &idx in test_idx {
        targets.extend_from_slice(&labels[idx]);
    }
    let metrics = evaluate(&scores, &targets, test_idx.len(), label_count, cfg.threshold)?;
    let gate_weights = weight_nodes
        .into_iter()
        .map(|(id, w)| {
            (
                id,
                tape.data(w).iter().map(|v| v.as_f64()).collect::<Vec<f64>>(),
            )
        })
        .collect();
    Ok((metrics, gate_weights))
}

fn designation_indices(
    ids: &[String],
    designation: &FoldDesignation,
) -> Result<(Vec<usize>, Vec<usize>)> {
    assert_no_leakage(designation)?;
    let lookup: std::collections::HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let resolve = |set: &[String]| -> Result<Vec<usize>> {
        set.iter()
            .map(|id| {
                lookup
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::DataIntegrity(format!("unknown record id {id:?}")))
            })
            .collect()
    };
    Ok((resolve(&designation.train)?, resolve(&designation.test)?))
}

/// Linear probing: only head and gate parameters train; the encoder is never
/// touched, summaries come from the cached feature set.
pub fn probe_train<S: Scalar>(
    features: &FeatureSet,
    designation: &FoldDesignation,
    agg: AggregationMode,
    cfg: &DownstreamConfig,
) -> Result<DownstreamOutcome> {
    let (train_idx, test_idx) = designation_indices(&features.ids, designation)?;
    let ids = features.ids.clone();
    let labels = features.labels.clone();
    let mut source = Source::Cached {
        features,
        store: ParamStore::new(),
    };
    run_downstream::<S>(&mut source, agg, cfg, &ids, &labels, &train_idx, &test_idx)
}

/// Full fine-tuning: head and gate parameters are appended to the model
/// store and everything trains under one optimizer.
pub fn finetune_train<S: Scalar>(
    model: &mut VitModel<S>,
    records: &[EcgRecord],
    designation: &FoldDesignation,
    agg: AggregationMode,
    cfg: &DownstreamConfig,
) -> Result<DownstreamOutcome> {
    if model.store.index_of("head.out.w").is_some() {
        return Err(Error::Usage(
            "model store already carries a head; fine-tune a freshly loaded model".into(),
        ));
    }
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let labels: Vec<Vec<u8>> = records.iter().map(|r| r.labels.clone()).collect();
    let (train_idx, test_idx) = designation_indices(&ids, designation)?;
    let signals: Result<Vec<Vec<Vec<f64>>>> = records.iter().map(record_signal).collect();
    model.set_trainable(cfg.encoder_trainable);
    let mut source = Source::Model {
        model,
        signals: signals?,
    };
    run_downstream::<S>(&mut source, agg, cfg, &ids, &labels, &train_idx, &test_idx)
}

/// Probe every single layer k = 1..depth and report the metric table.
pub fn layerwise_probe_sweep<S: Scalar>(
    features: &FeatureSet,
    designation: &FoldDesignation,
    cfg: &DownstreamConfig,
) -> Result<Vec<(usize, Metrics)>> {
    (1..=features.depth)
        .map(|k| {
            let outcome =
                probe_train::<S>(features, designation, AggregationMode::Layer(k), cfg)?;
            Ok((k, outcome.metrics))
        })
        .collect()
}
