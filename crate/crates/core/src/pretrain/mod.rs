//! Masked pretraining: mask sampling, visible-token encoding, the shared
//! lead-wise decoder with order restoration, the reconstruction objective,
//! and the seeded training loop. Two schemes share the whole path: the
//! baseline feeds the encoder's last layer to the decoder, the in-pretraining
//! pooled variant feeds the unweighted mean of all encoder layers.

pub mod mask;
#[cfg(test)]
mod tests;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::config::{DecoderConfig, VitConfig};
use crate::backbone::layout::TokenLayout;
use crate::backbone::model::{
    cast_tensor, patchify, CaptureIds, CaptureOpts, Mode, ParamCache, VitModel,
};
use crate::error::{Error, Result};
use crate::numcore::optim::{AdamW, AdamWConfig};
use crate::numcore::rng::{stream, StreamTag};
use crate::numcore::scalar::Scalar;
use crate::numcore::schedule::LrSchedule;
use crate::numcore::tape::{NodeId, Tape};
use crate::numcore::tensor::{Tensor, Tensor64};

pub use mask::{sample_mask, MaskPlan};

/// Which representation the decoder consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Last encoder layer (the baseline masked-modeling objective).
    Stmem,
    /// Mean of all encoder layers, pooled inside pretraining.
    Ipastmem,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::Stmem => write!(f, "stmem"),
            Scheme::Ipastmem => write!(f, "ipastmem"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: u64,
    pub mask_ratio: f64,
    pub mode: Scheme,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    /// Checkpoint every k epochs in addition to the final one (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 800,
            batch_size: 128,
            base_lr: 0.0006,
            warmup_epochs: 40,
            mask_ratio: 0.75,
            mode: Scheme::Stmem,
            seed: 0,
            optimizer: AdamWConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) || self.mask_ratio <= 0.0 {
            return Err(Error::Config(format!(
                "mask ratio must lie in (0,1), got {}",
                self.mask_ratio
            )));
        }
        if self.warmup_epochs >= self.epochs as u64 {
            return Err(Error::Config(format!(
                "warmup {} must be smaller than epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        Ok(())
    }
}

/// Visible-token bookkeeping produced by [`encode_visible`].
pub struct VisibleEncoding {
    /// Encoder output over the visible sequence, (C*(S+2)) x D.
    pub encoded: NodeId,
    /// Per-layer capture (hidden always present for the pooled scheme).
    pub capture: CaptureIds,
    /// Layout of the visible sequence (interior = S).
    pub layout: TokenLayout,
}

/// Embed only the visible patches (plus the per-lead SEP pair), add lead
/// embeddings, and run the encoder over the joint visible sequence.
pub fn encode_visible<S: Scalar>(
    model: &VitModel<S>,
    tape: &mut Tape<S>,
    cache: &mut ParamCache,
    patches: &[Tensor<S>],
    plan: &MaskPlan,
    mode: &mut Mode,
    capture: CaptureOpts,
) -> Result<VisibleEncoding> {
    let cfg = &model.config;
    plan.validate(cfg.leads, cfg.num_patches())?;
    let n = cfg.num_patches();
    let mut leads = Vec::with_capacity(cfg.leads);
    for c in 0..cfg.leads {
        let full = model.embed_lead_tokens(tape, cache, &patches[c])?;
        // rows: leading SEP, visible patches in order, trailing SEP
        let mut rows = Vec::with_capacity(plan.visible[c].len() + 2);
        rows.push(0);
        rows.extend(plan.visible[c].iter().map(|&i| i + 1));
        rows.push(n + 1);
        let vis = tape.gather_rows(full, &rows)?;
        leads.push(model.add_lead_embedding(tape, cache, vis, c)?);
    }
    let tokens = tape.concat_rows(&leads)?;
    let (encoded, cap) = model.encoder_forward(tape, cache, tokens, mode, capture)?;
    Ok(VisibleEncoding {
        encoded,
        capture: cap,
        layout: TokenLayout::new(cfg.leads, plan.visible_count()),
    })
}

/// Unweighted mean of all captured encoder layers; bit-identical to the last
/// layer when depth is 1.
pub fn pool_layers<S: Scalar>(tape: &mut Tape<S>, capture: &CaptureIds) -> Result<NodeId> {
    if capture.hidden.is_empty() {
        return Err(Error::Usage("layer pooling requires hidden capture".into()));
    }
    let mut acc = capture.hidden[0];
    for &h in &capture.hidden[1..] {
        acc = tape.add(acc, h)?;
    }
    Ok(tape.scale(acc, S::of(1.0 / capture.hidden.len() as f64)))
}

/// Project the encoder output to decoder width, insert the shared mask
/// embedding at masked slots, restore original patch order, add decoder
/// positional embeddings, run the shared decoder per lead, and project the
/// masked rows back to patch samples. Returns the (C*S') x P predictions,
/// lead-major then mask-rank order.
pub fn decode_and_reconstruct<S: Scalar>(
    model: &VitModel<S>,
    tape: &mut Tape<S>,
    cache: &mut ParamCache,
    encoded: NodeId,
    plan: &MaskPlan,
    mode: &mut Mode,
) -> Result<NodeId> {
    let cfg = &model.config;
    let dec = model
        .decoder
        .as_ref()
        .ok_or_else(|| Error::Usage("decoding requires a model with a decoder".into()))?
        .clone();
    let n = cfg.num_patches();
    let s = plan.visible_count();
    let s_masked = plan.masked_count();
    let rows_per_lead = s + 2;
    if tape.rows(encoded) != cfg.leads * rows_per_lead {
        return Err(Error::Internal(format!(
            "encoded sequence has {} rows, plan expects {}",
            tape.rows(encoded),
            cfg.leads * rows_per_lead
        )));
    }

    let w_d = cache.get(tape, &model.store, dec.w_d);
    let b_d = cache.get(tape, &model.store, dec.b_d);
    let e_mask = cache.get(tape, &model.store, dec.e_mask);
    let e_pos = cache.get(tape, &model.store, dec.e_pos);
    let w_r = cache.get(tape, &model.store, dec.w_r);
    let b_r = cache.get(tape, &model.store, dec.b_r);

    let mut lead_preds = Vec::with_capacity(cfg.leads);
    for c in 0..cfg.leads {
        let lead_rows: Vec<usize> = (c * rows_per_lead..(c + 1) * rows_per_lead).collect();
        let lead_slice = tape.gather_rows(encoded, &lead_rows)?;
        let z0 = tape.matmul(lead_slice, w_d)?;
        let z0 = tape.add_row(z0, b_d)?;

        // mask embeddings for this lead, one shared row repeated
        let mask_rows = tape.gather_rows(e_mask, &vec![0; s_masked])?;
        let cat = tape.concat_rows(&[z0, mask_rows])?;

        // permutation restoring original order: cat holds
        // [SEP, visible..., SEP, masked...]
        let mut perm = vec![0usize; n + 2];
        perm[0] = 0;
        perm[n + 1] = s + 1;
        for (rank, &i) in plan.visible[c].iter().enumerate() {
            perm[i + 1] = 1 + rank;
        }
        for (rank, &j) in plan.masked[c].iter().enumerate() {
            perm[j + 1] = s + 2 + rank;
        }
        let ordered = tape.gather_rows(cat, &perm)?;
        let z = tape.add(ordered, e_pos)?;
        let decoded = model.decoder_forward(tape, cache, z, mode)?;

        let masked_token_rows: Vec<usize> = plan.masked[c].iter().map(|&j| j + 1).collect();
        let masked_out = tape.gather_rows(decoded, &masked_token_rows)?;
        let pred = tape.matmul(masked_out, w_r)?;
        lead_preds.push(tape.add_row(pred, b_r)?);
    }
    tape.concat_rows(&lead_preds)
}

/// Gather the ground-truth masked patches in the same (lead, mask-rank)
/// order the decoder emits.
pub fn masked_targets<S: Scalar>(patches64: &[Tensor64], plan: &MaskPlan) -> Tensor<S> {
    let p = patches64[0].cols();
    let total: usize = plan.total_masked();
    let mut data = Vec::with_capacity(total * p);
    for (c, masked) in plan.masked.iter().enumerate() {
        for &j in masked {
            data.extend(patches64[c].row(j).iter().map(|&v| S::of(v)));
        }
    }
    Tensor::matrix(total, p, data).expect("target shape")
}

/// Mean over masked patches of the per-element mean squared error:
/// `(1/|M'|) * (1/P) * sum ||pred - target||^2`.
pub fn reconstruction_loss<S: Scalar>(
    tape: &mut Tape<S>,
    pred: NodeId,
    targets: &Tensor<S>,
) -> Result<NodeId> {
    if targets.rows() == 0 {
        return Err(Error::Config("reconstruction loss over an empty mask set".into()));
    }
    let t = tape.input(targets);
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul_elem(diff, diff)?;
    Ok(tape.mean_all(sq))
}

/// One masked-modeling forward: returns the loss node.
pub fn pretrain_step<S: Scalar>(
    model: &VitModel<S>,
    tape: &mut Tape<S>,
    signal: &[Vec<f64>],
    plan: &MaskPlan,
    scheme: Scheme,
    mode: &mut Mode,
) -> Result<NodeId> {
    let patches64 = patchify(signal, model.config.patch_len)?;
    let patches: Vec<Tensor<S>> = patches64.iter().map(cast_tensor).collect();
    let mut cache = ParamCache::new(&model.store);
    let capture = match scheme {
        Scheme::Stmem => CaptureOpts::none(),
        Scheme::Ipastmem => CaptureOpts::hidden_only(),
    };
    let enc = encode_visible(model, tape, &mut cache, &patches, plan, mode, capture)?;
    let decoder_input = match scheme {
        Scheme::Stmem => enc.encoded,
        Scheme::Ipastmem => pool_layers(tape, &enc.capture)?,
    };
    let pred = decode_and_reconstruct(model, tape, &mut cache, decoder_input, plan, mode)?;
    let targets: Tensor<S> = masked_targets(&patches64, plan);
    reconstruction_loss(tape, pred, &targets)
}

/// One logged training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub rows: Vec<LossRow>,
    pub epoch_mean_loss: Vec<f64>,
}

/// Seeded pretraining loop over preprocessed signals. Shuffling, masking and
/// dropout streams are keyed by (seed, epoch, position), so a resumed run
/// replays the interrupted trajectory bitwise. `on_epoch_end` observes the
/// model after each epoch (checkpointing hook).
pub fn pretrain_loop<S: Scalar>(
    model: &mut VitModel<S>,
    optimizer: &mut AdamW<S>,
    config: &PretrainConfig,
    signals: &[Vec<Vec<f64>>],
    start_epoch: usize,
    mut on_epoch_end: impl FnMut(usize, &VitModel<S>, &AdamW<S>) -> Result<()>,
) -> Result<PretrainOutcome> {
    config.validate()?;
    if signals.is_empty() {
        return Err(Error::Input("pretraining needs a non-empty dataset".into()));
    }
    let schedule = LrSchedule::cosine(config.base_lr, config.warmup_epochs, config.epochs as u64);
    let cfg = model.config;
    let mut rows = Vec::new();
    let mut epoch_mean_loss = Vec::new();

    for epoch in start_epoch..config.epochs {
        let lr = schedule.lr_at(epoch as u64);
        let mut order: Vec<usize> = (0..signals.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut shuffle_rng = stream(config.seed, StreamTag::Shuffle, &[epoch as u64]);
            order.shuffle(&mut shuffle_rng);
        }

        let mut epoch_loss_sum = 0.0;
        let mut epoch_steps = 0usize;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            model.store.zero_grads();
            let mut batch_loss = 0.0;
            for (offset, &rec) in batch.iter().enumerate() {
                let pos = (step * config.batch_size + offset) as u64;
                let mut mask_rng = stream(config.seed, StreamTag::Mask, &[epoch as u64, pos]);
                let plan = sample_mask(
                    &mut mask_rng,
                    cfg.leads,
                    cfg.num_patches(),
                    config.mask_ratio,
                )?;
                let mut dropout_rng =
                    stream(config.seed, StreamTag::Dropout, &[epoch as u64, pos]);
                let mut mode = Mode::Train {
                    rng: &mut dropout_rng,
                };
                let mut tape = Tape::new();
                let loss = pretrain_step(
                    model,
                    &mut tape,
                    &signals[rec],
                    &plan,
                    config.mode,
                    &mut mode,
                )?;
                let loss_val = tape.data(loss)[0].as_f64();
                if !loss_val.is_finite() {
                    return Err(Error::Numeric {
                        context: "pretrain_loop",
                        message: format!("non-finite loss {loss_val} at epoch {epoch} step {step}"),
                    });
                }
                batch_loss += loss_val;
                tape.backward(loss)?;
                tape.accumulate_param_grads(&mut model.store)?;
            }
            model
                .store
                .scale_grads(S::of(1.0 / batch.len() as f64));
            optimizer.step(&mut model.store, lr);
            let mean_loss = batch_loss / batch.len() as f64;
            rows.push(LossRow {
                epoch,
                step,
                loss: mean_loss,
                lr,
            });
            epoch_loss_sum += mean_loss;
            epoch_steps += 1;
        }
        epoch_mean_loss.push(epoch_loss_sum / epoch_steps as f64);
        log::info!(
            "epoch {epoch}: mean loss {:.6}, lr {lr:.6}",
            epoch_loss_sum / epoch_steps as f64
        );
        on_epoch_end(epoch, model, optimizer)?;
    }
    Ok(PretrainOutcome {
        rows,
        epoch_mean_loss,
    })
}

/// Save a resumable training checkpoint: parameters plus optimizer moments.
pub fn save_train_checkpoint<S: Scalar>(
    path: &Path,
    model: &VitModel<S>,
    optimizer: &AdamW<S>,
    config: &PretrainConfig,
    next_epoch: usize,
) -> Result<()> {
    let (t, m, v) = {
        let (t, m, v) = optimizer.state();
        (t, m.to_vec(), v.to_vec())
    };
    let mut extra = Vec::new();
    for (idx, p) in model.store.iter().enumerate() {
        let shape = p.value.shape().to_vec();
        extra.push((
            format!("optim.m.{}", p.name),
            Tensor::new(shape.clone(), m[idx].clone()).expect("moment shape"),
        ));
        extra.push((
            format!("optim.v.{}", p.name),
            Tensor::new(shape, v[idx].clone()).expect("moment shape"),
        ));
    }
    let meta = serde_json::json!({
        "next_epoch": next_epoch,
        "optimizer_step": t,
        "mode": config.mode.to_string(),
        "mask_ratio": config.mask_ratio,
    });
    crate::backbone::checkpoint::save_checkpoint(path, model, meta, &extra)
}

/// Restore a training checkpoint: model, optimizer (moments + step counter),
/// and the epoch to resume from.
pub fn load_train_checkpoint<S: Scalar>(
    path: &Path,
    adamw: AdamWConfig,
) -> Result<(VitModel<S>, AdamW<S>, usize)> {
    let loaded = crate::backbone::checkpoint::load_checkpoint::<S>(path)?;
    let model = loaded.model;
    let mut optimizer = AdamW::new(adamw, &model.store);
    let t = loaded.meta["optimizer_step"].as_u64().unwrap_or(0);
    let mut m = Vec::with_capacity(model.store.len());
    let mut v = Vec::with_capacity(model.store.len());
    for p in model.store.iter() {
        let mk = format!("optim.m.{}", p.name);
        let vk = format!("optim.v.{}", p.name);
        match (loaded.extra.get(&mk), loaded.extra.get(&vk)) {
            (Some(mt), Some(vt)) => {
                m.push(mt.data().to_vec());
                v.push(vt.data().to_vec());
            }
            _ => {
                m.push(vec![S::zero(); p.value.len()]);
                v.push(vec![S::zero(); p.value.len()]);
            }
        }
    }
    optimizer.restore(t, m, v);
    let next_epoch = loaded.meta["next_epoch"].as_u64().unwrap_or(0) as usize;
    Ok((model, optimizer, next_epoch))
}

/// Desk-scale profile used by tests: the tiny encoder/decoder pair.
pub fn tiny_pretrain_model<S: Scalar>(seed: u64) -> Result<VitModel<S>> {
    VitModel::new(VitConfig::tiny(), Some(DecoderConfig::tiny()), seed)
}
