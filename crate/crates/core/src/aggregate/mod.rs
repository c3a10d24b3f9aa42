//! Cross-layer aggregation of encoder representations and the downstream
//! classification drivers: per-layer token-mean summaries, the pooling and
//! gated-mixture fusion schemes, linear probing and fine-tuning, and the
//! layer-wise probe sweep.

pub mod cache;
pub mod head;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::backbone::layout::TokenLayout;
use crate::backbone::model::{CaptureIds, LayerActivations};
use crate::error::{Error, Result};
use crate::numcore::scalar::Scalar;
use crate::numcore::tape::{NodeId, Tape};
use crate::numcore::tensor::{Tensor, Tensor64};

pub use cache::{load_feature_cache, save_feature_cache, FeatureSet, ACT_FORMAT_VERSION};
pub use head::{
    build_head, head_forward, sigmoid_scores, BnState, GateIds, HeadConfig, HeadIds, HeadMode,
};
pub use train::{
    extract_features, finetune_train, layerwise_probe_sweep, probe_train, DownstreamConfig,
    DownstreamOutcome, TrainKind,
};

/// Layer-fusion strategy for downstream classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "layer")]
pub enum AggregationMode {
    /// Use a single encoder layer k (1-based, 1 <= k <= depth).
    Layer(usize),
    /// Last encoder layer only.
    Last,
    /// Unweighted mean over all layers.
    Ppa,
    /// Gated mixture over layers with per-sample softmax weights.
    Pma,
}

impl AggregationMode {
    pub fn uses_gate(&self) -> bool {
        matches!(self, AggregationMode::Pma)
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if let AggregationMode::Layer(k) = self {
            if *k < 1 || *k > depth {
                return Err(Error::Config(format!(
                    "layer index {k} out of range 1..={depth}"
                )));
            }
        }
        if depth == 0 {
            return Err(Error::Config("aggregation needs encoder depth >= 1".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "last" => Ok(AggregationMode::Last),
            "ppa" => Ok(AggregationMode::Ppa),
            "pma" => Ok(AggregationMode::Pma),
            other => {
                if let Some(k) = other.strip_prefix("layer:") {
                    let k: usize = k
                        .parse()
                        .map_err(|_| Error::Config(format!("bad layer index {k:?}")))?;
                    Ok(AggregationMode::Layer(k))
                } else {
                    Err(Error::Config(format!(
                        "unknown aggregation {other:?}; expected last|ppa|pma|layer:<k>"
                    )))
                }
            }
        }
    }
}

impl std::fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AggregationMode::Layer(k) => write!(f, "layer:{k}"),
            AggregationMode::Last => write!(f, "last"),
            AggregationMode::Ppa => write!(f, "ppa"),
            AggregationMode::Pma => write!(f, "pma"),
        }
    }
}

/// Per-layer sample representation: the mean over non-SEP token rows of each
/// captured layer, stacked into a depth x D matrix. Row accumulation order
/// matches the tape's `mean_rows`, so cached and on-tape summaries agree
/// bitwise.
pub fn layer_summaries(acts: &LayerActivations, layout: &TokenLayout) -> Result<Tensor64> {
    if acts.hidden.is_empty() {
        return Err(Error::Usage(
            "layer summaries require hidden-state capture".into(),
        ));
    }
    let rows = layout.non_sep_rows();
    let dim = acts.hidden[0].cols();
    let mut data = Vec::with_capacity(acts.hidden.len() * dim);
    for h in &acts.hidden {
        if h.rows() != layout.total_tokens() {
            return Err(Error::Internal(format!(
                "captured layer has {} rows, layout expects {}",
                h.rows(),
                layout.total_tokens()
            )));
        }
        let mut acc = vec![0.0f64; dim];
        for &r in &rows {
            for (j, a) in acc.iter_mut().enumerate() {
                *a += h.at(r, j);
            }
        }
        let n = rows.len() as f64;
        data.extend(acc.into_iter().map(|v| v / n));
    }
    Tensor::matrix(acts.hidden.len(), dim, data)
}

/// Tape-side layer summaries for fine-tuning: gathers non-SEP rows of every
/// captured layer and stacks the row means into a depth x D node.
pub fn tape_layer_summaries<S: Scalar>(
    tape: &mut Tape<S>,
    capture: &CaptureIds,
    layout: &TokenLayout,
) -> Result<NodeId> {
    if capture.hidden.is_empty() {
        return Err(Error::Usage(
            "layer summaries require hidden-state capture".into(),
        ));
    }
    let rows = layout.non_sep_rows();
    let mut means = Vec::with_capacity(capture.hidden.len());
    for &h in &capture.hidden {
        let non_sep = tape.gather_rows(h, &rows)?;
        means.push(tape.mean_rows(non_sep));
    }
    tape.concat_rows(&means)
}

/// Uniform weight row used by the pooled scheme and by the frozen-uniform
/// gate; sharing the construction keeps the two bitwise identical.
pub fn uniform_weights<S: Scalar>(depth: usize) -> Tensor<S> {
    Tensor::row_vector(vec![S::of(1.0 / depth as f64); depth])
}

/// Aggregate a depth x D summary node into a 1 x D feature on the tape.
/// Returns the feature node and, for the gated mode, the weight node.
pub fn aggregate_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    store: &crate::numcore::params::ParamStore<S>,
    summaries: NodeId,
    mode: AggregationMode,
    gate: Option<&GateIds>,
    freeze_gate_uniform: bool,
) -> Result<(NodeId, Option<NodeId>)> {
    let depth = tape.rows(summaries);
    mode.validate(depth)?;
    match mode {
        AggregationMode::Layer(k) => {
            let f = tape.gather_rows(summaries, &[k - 1])?;
            Ok((f, None))
        }
        AggregationMode::Last => {
            let f = tape.gather_rows(summaries, &[depth - 1])?;
            Ok((f, None))
        }
        AggregationMode::Ppa => {
            let w = uniform_weights::<S>(depth);
            let wn = tape.input(&w);
            let f = tape.matmul(wn, summaries)?;
            Ok((f, None))
        }
        AggregationMode::Pma => {
            let gate = gate.ok_or_else(|| {
                Error::Usage("gated aggregation requires gate parameters".into())
            })?;
            let weights = if freeze_gate_uniform {
                // zero logits through the same softmax path: exactly uniform
                let zeros = tape.input(&Tensor::row_vector(vec![S::zero(); depth]));
                tape.softmax_rows(zeros)?
            } else {
                let gate_in = tape.mean_rows(summaries);
                let w = tape.param(store, gate.w);
                let b = tape.param(store, gate.b);
                let logits = tape.matmul(gate_in, w)?;
                let logits = tape.add_row(logits, b)?;
                tape.softmax_rows(logits)?
            };
            let f = tape.matmul(weights, summaries)?;
            Ok((f, Some(weights)))
        }
    }
}

/// Plain-f64 pooled aggregation (mean over layers), for oracles and cached
/// paths.
pub fn ppa_aggregate(summaries: &Tensor64) -> Vec<f64> {
    let depth = summaries.rows();
    let dim = summaries.cols();
    let w = 1.0 / depth as f64;
    let mut out = vec![0.0; dim];
    for l in 0..depth {
        for (j, o) in out.iter_mut().enumerate() {
            *o += w * summaries.at(l, j);
        }
    }
    out
}

/// Plain-f64 gated aggregation given gate parameters; returns the feature
/// and the softmax weights.
pub fn pma_aggregate(
    summaries: &Tensor64,
    gate_w: &Tensor64,
    gate_b: &Tensor64,
) -> (Vec<f64>, Vec<f64>) {
    let depth = summaries.rows();
    let dim = summaries.cols();
    let mut gate_in = vec![0.0; dim];
    for l in 0..depth {
        for (j, g) in gate_in.iter_mut().enumerate() {
            *g += summaries.at(l, j);
        }
    }
    for g in gate_in.iter_mut() {
        *g /= depth as f64;
    }
    let mut logits = vec![0.0; depth];
    for (l, logit) in logits.iter_mut().enumerate() {
        let mut s = gate_b.at(0, l);
        for j in 0..dim {
            s += gate_in[j] * gate_w.at(j, l);
        }
        *logit = s;
    }
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let mut out = vec![0.0; dim];
    for l in 0..depth {
        for (j, o) in out.iter_mut().enumerate() {
            *o += weights[l] * summaries.at(l, j);
        }
    }
    (out, weights)
}

#[cfg(test)]
mod tests;
