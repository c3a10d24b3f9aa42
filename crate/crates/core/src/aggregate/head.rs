//! Downstream classification head: batch norm over the feature dimension,
//! dropout, an optional ReLU hidden layer (off for linear probing), and the
//! final linear map to label logits. The mixture gate over encoder layers
//! lives here too.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::model::LN_EPS;
use crate::error::{Error, Result};
use crate::numcore::params::{init_ones, init_weight, init_zeros, ParamStore};
use crate::numcore::scalar::Scalar;
use crate::numcore::tape::{NodeId, Tape};
use crate::numcore::tensor::Tensor;

pub const BN_EPS: f64 = LN_EPS;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub dropout: f64,
    /// Extra D -> D linear + ReLU before the output layer. Kept off for
    /// linear probing so the probe stays linear.
    pub hidden: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            dropout: 0.1,
            hidden: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GateIds {
    pub w: usize,
    pub b: usize,
}

/// Parameter indices of one classifier head inside some [`ParamStore`].
#[derive(Debug, Clone)]
pub struct HeadIds {
    pub config: HeadConfig,
    pub dim: usize,
    pub labels: usize,
    bn_gamma: usize,
    bn_beta: usize,
    hidden: Option<(usize, usize)>,
    out_w: usize,
    out_b: usize,
    pub gate: Option<GateIds>,
}

/// Batch-norm running statistics, updated in train mode, used in eval mode.
#[derive(Debug, Clone)]
pub struct BnState<S: Scalar> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
    pub initialized: bool,
}

impl<S: Scalar> BnState<S> {
    pub fn new(dim: usize) -> Self {
        BnState {
            mean: vec![S::zero(); dim],
            var: vec![S::one(); dim],
            initialized: false,
        }
    }

    pub fn update(&mut self, batch_mean: &[S], batch_var: &[S]) {
        let mom = S::of(BN_MOMENTUM);
        let keep = S::of(1.0 - BN_MOMENTUM);
        if !self.initialized {
            self.mean.copy_from_slice(batch_mean);
            self.var.copy_from_slice(batch_var);
            self.initialized = true;
            return;
        }
        for j in 0..self.mean.len() {
            self.mean[j] = keep * self.mean[j] + mom * batch_mean[j];
            self.var[j] = keep * self.var[j] + mom * batch_var[j];
        }
    }
}

/// Append head (and optionally gate) parameters to a store. `depth` is the
/// encoder depth the gate emits weights for. Head and gate draw from
/// separate init streams, so the head starts identically with or without a
/// gate.
pub fn build_head<S: Scalar>(
    store: &mut ParamStore<S>,
    seed: u64,
    dim: usize,
    labels: usize,
    depth: usize,
    config: HeadConfig,
    with_gate: bool,
) -> HeadIds {
    use crate::numcore::rng::{stream, StreamTag};
    let mut gate_rng = stream(seed, StreamTag::Init, &[3]);
    let rng = &mut stream(seed, StreamTag::Init, &[2]);
    let gate = with_gate.then(|| GateIds {
        w: store.add("gate.w", init_weight(&mut gate_rng, dim, depth), true),
        b: store.add("gate.b", init_zeros(1, depth), true),
    });
    let hidden = config.hidden.then(|| {
        (
            store.add("head.hidden.w", init_weight(rng, dim, dim), true),
            store.add("head.hidden.b", init_zeros(1, dim), true),
        )
    });
    HeadIds {
        config,
        dim,
        labels,
        bn_gamma: store.add("head.bn.gamma", init_ones(1, dim), true),
        bn_beta: store.add("head.bn.beta", init_zeros(1, dim), true),
        hidden,
        out_w: store.add("head.out.w", init_weight(rng, dim, labels), true),
        out_b: store.add("head.out.b", init_zeros(1, labels), true),
        gate,
    }
}

pub enum HeadMode<'a> {
    /// Batch statistics + dropout; updates the running stats.
    Train { rng: &'a mut ChaCha8Rng },
    /// Running statistics, no dropout.
    Eval,
}

/// Head forward over a batch of aggregated features (B x D) to logits
/// (B x labels).
pub fn head_forward<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    ids: &HeadIds,
    features: NodeId,
    bn: &mut BnState<S>,
    mode: &mut HeadMode,
) -> Result<NodeId> {
    if tape.cols(features) != ids.dim {
        return Err(Error::Shape {
            op: "head_forward",
            left: vec![tape.rows(features), tape.cols(features)],
            right: vec![ids.dim],
        });
    }
    let gamma = tape.param(store, ids.bn_gamma);
    let beta = tape.param(store, ids.bn_beta);
    let mut h = match mode {
        HeadMode::Train { .. } => {
            let (node, mean, var) = tape.batch_norm(features, gamma, beta, S::of(BN_EPS))?;
            bn.update(&mean, &var);
            node
        }
        HeadMode::Eval => {
            // eval-mode BN folds the running stats into constant scale/shift
            let rows = tape.rows(features);
            let dim = ids.dim;
            let g = store.value(ids.bn_gamma).data().to_vec();
            let b = store.value(ids.bn_beta).data().to_vec();
            let mut scale = vec![S::zero(); dim];
            let mut shift = vec![S::zero(); dim];
            for j in 0..dim {
                let inv = S::one() / (bn.var[j] + S::of(BN_EPS)).sqrt();
                scale[j] = g[j] * inv;
                shift[j] = b[j] - bn.mean[j] * g[j] * inv;
            }
            let scale_mat = tape.input(&Tensor::matrix(
                rows,
                dim,
                scale
                    .iter()
                    .cycle()
                    .take(rows * dim)
                    .copied()
                    .collect::<Vec<S>>(),
            )?);
            let shift_row = tape.input(&Tensor::row_vector(shift));
            let scaled = tape.mul_elem(features, scale_mat)?;
            tape.add_row(scaled, shift_row)?
        }
    };
    if let HeadMode::Train { rng } = mode {
        use rand::Rng;
        h = tape.dropout(h, ids.config.dropout, || rng.gen::<f64>())?;
    }
    if let Some((w, b)) = ids.hidden {
        let wn = tape.param(store, w);
        let bn_ = tape.param(store, b);
        let lin = tape.matmul(h, wn)?;
        let lin = tape.add_row(lin, bn_)?;
        h = tape.relu(lin);
    }
    let w = tape.param(store, ids.out_w);
    let b = tape.param(store, ids.out_b);
    let logits = tape.matmul(h, w)?;
    tape.add_row(logits, b)
}

/// Sigmoid scores from logits, for metric evaluation.
pub fn sigmoid_scores<S: Scalar>(logits: &[S]) -> Vec<f64> {
    logits
        .iter()
        .map(|&z| 1.0 / (1.0 + (-z.as_f64()).exp()))
        .collect()
}
