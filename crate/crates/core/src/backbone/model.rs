//! The 1D vision transformer: patch embedding with SEP / positional / lead
//! embeddings, and the stacked post-norm encoder with per-layer activation
//! and attention capture. The decoder blocks used in masked pretraining share
//! the same layer machinery.

use rand_chacha::ChaCha8Rng;

use crate::backbone::config::{DecoderConfig, VitConfig};
use crate::backbone::layout::TokenLayout;
use crate::error::{Error, Result};
use crate::numcore::params::{init_ones, init_weight, init_zeros, ParamStore};
use crate::numcore::rng::{stream, StreamTag};
use crate::numcore::scalar::Scalar;
use crate::numcore::tape::{NodeId, Tape};
use crate::numcore::tensor::{Tensor, Tensor64};

pub const LN_EPS: f64 = 1e-5;

/// Forward mode: training enables dropout, evaluation never does.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CaptureOpts {
    pub hidden: bool,
    pub attention: bool,
}

impl CaptureOpts {
    pub fn all() -> Self {
        CaptureOpts {
            hidden: true,
            attention: true,
        }
    }

    pub fn hidden_only() -> Self {
        CaptureOpts {
            hidden: true,
            attention: false,
        }
    }

    pub fn none() -> Self {
        CaptureOpts::default()
    }
}

/// Tape node ids of captured per-layer state. `hidden[l]` is H^(l+1);
/// `attention[l][h]` the row-stochastic attention matrix of head h.
#[derive(Debug, Clone, Default)]
pub struct CaptureIds {
    pub hidden: Vec<NodeId>,
    pub attention: Vec<Vec<NodeId>>,
}

/// Captured activations materialized as f64, the input to all diagnostics.
#[derive(Debug, Clone)]
pub struct LayerActivations {
    pub hidden: Vec<Tensor64>,
    pub attention: Vec<Vec<Tensor64>>,
}

impl LayerActivations {
    pub fn extract<S: Scalar>(tape: &Tape<S>, ids: &CaptureIds) -> Self {
        LayerActivations {
            hidden: ids.hidden.iter().map(|&h| tape.value(h).to_f64()).collect(),
            attention: ids
                .attention
                .iter()
                .map(|heads| heads.iter().map(|&a| tape.value(a).to_f64()).collect())
                .collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }
}

#[derive(Debug, Clone)]
struct EmbedIds {
    w_e: usize,
    b_e: usize,
    sep: usize,
    e_pos: usize,
    e_lead: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerIds {
    wq: Vec<usize>,
    wk: Vec<usize>,
    wv: Vec<usize>,
    wo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderIds {
    pub w_d: usize,
    pub b_d: usize,
    pub e_mask: usize,
    pub e_pos: usize,
    pub layers: Vec<LayerIds>,
    pub w_r: usize,
    pub b_r: usize,
}

/// Memoizes one tape leaf per parameter per forward pass.
pub struct ParamCache {
    nodes: Vec<Option<NodeId>>,
}

impl ParamCache {
    pub fn new<S: Scalar>(store: &ParamStore<S>) -> Self {
        ParamCache {
            nodes: vec![None; store.len()],
        }
    }

    pub fn get<S: Scalar>(
        &mut self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        idx: usize,
    ) -> NodeId {
        if let Some(n) = self.nodes[idx] {
            return n;
        }
        let n = tape.param(store, idx);
        self.nodes[idx] = Some(n);
        n
    }
}

/// Split a C x L signal into non-overlapping patches, one N x P matrix per
/// lead. A trailing remainder shorter than P is discarded.
pub fn patchify(signal: &[Vec<f64>], patch_len: usize) -> Result<Vec<Tensor64>> {
    let mut out = Vec::with_capacity(signal.len());
    for (c, lead) in signal.iter().enumerate() {
        if lead.len() < patch_len {
            return Err(Error::Input(format!(
                "lead {c}: signal length {} shorter than patch length {patch_len}",
                lead.len()
            )));
        }
        let n = lead.len() / patch_len;
        let data: Vec<f64> = lead[..n * patch_len].to_vec();
        out.push(Tensor::matrix(n, patch_len, data)?);
    }
    Ok(out)
}

/// Full parameter set of the encoder plus the optional shared lead-wise
/// decoder. Parameters live in one [`ParamStore`], so downstream heads can
/// append their own and share a single optimizer.
pub struct VitModel<S: Scalar> {
    pub config: VitConfig,
    pub decoder_config: Option<DecoderConfig>,
    pub store: ParamStore<S>,
    embed: EmbedIds,
    enc_layers: Vec<LayerIds>,
    pub(crate) decoder: Option<DecoderIds>,
}

fn add_layer<S: Scalar>(
    store: &mut ParamStore<S>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    dim: usize,
    heads: usize,
    head_dim: usize,
    mlp_ratio: usize,
) -> LayerIds {
    let mut wq = Vec::with_capacity(heads);
    let mut wk = Vec::with_capacity(heads);
    let mut wv = Vec::with_capacity(heads);
    for h in 0..heads {
        wq.push(store.add(format!("{prefix}.head{h}.w_q"), init_weight(rng, dim, head_dim), true));
        wk.push(store.add(format!("{prefix}.head{h}.w_k"), init_weight(rng, dim, head_dim), true));
        wv.push(store.add(format!("{prefix}.head{h}.w_v"), init_weight(rng, dim, head_dim), true));
    }
    let hidden = dim * mlp_ratio;
    LayerIds {
        wq,
        wk,
        wv,
        wo: store.add(
            format!("{prefix}.w_o"),
            init_weight(rng, heads * head_dim, dim),
            true,
        ),
        ln1_g: store.add(format!("{prefix}.ln1.gamma"), init_ones(1, dim), true),
        ln1_b: store.add(format!("{prefix}.ln1.beta"), init_zeros(1, dim), true),
        w1: store.add(format!("{prefix}.ffn.w1"), init_weight(rng, dim, hidden), true),
        b1: store.add(format!("{prefix}.ffn.b1"), init_zeros(1, hidden), true),
        w2: store.add(format!("{prefix}.ffn.w2"), init_weight(rng, hidden, dim), true),
        b2: store.add(format!("{prefix}.ffn.b2"), init_zeros(1, dim), true),
        ln2_g: store.add(format!("{prefix}.ln2.gamma"), init_ones(1, dim), true),
        ln2_b: store.add(format!("{prefix}.ln2.beta"), init_zeros(1, dim), true),
    }
}

impl<S: Scalar> VitModel<S> {
    pub fn new(config: VitConfig, decoder: Option<DecoderConfig>, seed: u64) -> Result<Self> {
        config.validate()?;
        if let Some(d) = &decoder {
            d.validate()?;
        }
        let mut rng = stream(seed, StreamTag::Init, &[]);
        let mut store = ParamStore::new();
        let d = config.embed_dim;
        let n2 = config.tokens_per_lead();

        let embed = EmbedIds {
            w_e: store.add("enc.embed.w_e", init_weight(&mut rng, config.patch_len, d), true),
            b_e: store.add("enc.embed.b_e", init_zeros(1, d), true),
            sep: store.add("enc.embed.sep", init_weight(&mut rng, 1, d), true),
            e_pos: store.add("enc.embed.e_pos", init_weight(&mut rng, n2, d), true),
            e_lead: store.add("enc.embed.e_lead", init_weight(&mut rng, config.leads, d), true),
        };

        let enc_layers = (0..config.depth)
            .map(|l| {
                add_layer(
                    &mut store,
                    &mut rng,
                    &format!("enc.layer{l}"),
                    d,
                    config.heads,
                    config.head_dim(),
                    config.mlp_ratio,
                )
            })
            .collect();

        let decoder_ids = decoder.as_ref().map(|dc| {
            let dd = dc.dim;
            DecoderIds {
                w_d: store.add("dec.proj.w_d", init_weight(&mut rng, d, dd), true),
                b_d: store.add("dec.proj.b_d", init_zeros(1, dd), true),
                e_mask: store.add("dec.e_mask", init_weight(&mut rng, 1, dd), true),
                e_pos: store.add("dec.e_pos", init_weight(&mut rng, n2, dd), true),
                layers: (0..dc.depth)
                    .map(|l| {
                        add_layer(
                            &mut store,
                            &mut rng,
                            &format!("dec.layer{l}"),
                            dd,
                            dc.heads,
                            dc.head_dim(),
                            dc.mlp_ratio,
                        )
                    })
                    .collect(),
                w_r: store.add("dec.out.w_r", init_weight(&mut rng, dd, config.patch_len), true),
                b_r: store.add("dec.out.b_r", init_zeros(1, config.patch_len), true),
            }
        });

        Ok(VitModel {
            config,
            decoder_config: decoder,
            store,
            embed,
            enc_layers,
            decoder: decoder_ids,
        })
    }

    pub fn has_decoder(&self) -> bool {
        self.decoder.is_some()
    }

    /// Full-sequence token layout (every patch present).
    pub fn full_layout(&self) -> TokenLayout {
        TokenLayout::new(self.config.leads, self.config.num_patches())
    }

    /// Mark every encoder/decoder parameter as frozen or trainable.
    pub fn set_trainable(&mut self, trainable: bool) {
        for idx in 0..self.store.len() {
            let name = self.store.name(idx).to_string();
            if name.starts_with("enc.") || name.starts_with("dec.") {
                self.store.set_trainable(idx, trainable);
            }
        }
    }

    fn maybe_dropout(
        &self,
        tape: &mut Tape<S>,
        x: NodeId,
        p: f64,
        mode: &mut Mode,
    ) -> Result<NodeId> {
        match mode {
            Mode::Eval => Ok(x),
            Mode::Train { rng } => {
                use rand::Rng;
                tape.dropout(x, p, || rng.gen::<f64>())
            }
        }
    }

    /// One post-norm transformer layer: LayerNorm(x + MSA(x)) then
    /// LayerNorm(y + FFN(y)). Returns the output and per-head attention
    /// matrices.
    fn transformer_layer(
        &self,
        tape: &mut Tape<S>,
        cache: &mut ParamCache,
        x: NodeId,
        ids: &LayerIds,
        head_dim: usize,
        dropout: f64,
        mode: &mut Mode,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let scale = S::of(1.0 / (head_dim as f64).sqrt());
        let mut heads = Vec::with_capacity(ids.wq.len());
        let mut attns = Vec::with_capacity(ids.wq.len());
        for h in 0..ids.wq.len() {
            let wq = cache.get(tape, &self.store, ids.wq[h]);
            let wk = cache.get(tape, &self.store, ids.wk[h]);
            let wv = cache.get(tape, &self.store, ids.wv[h]);
            let q = tape.matmul(x, wq)?;
            let k = tape.matmul(x, wk)?;
            let v = tape.matmul(x, wv)?;
            let kt = tape.transpose(k);
            let scores = tape.matmul(q, kt)?;
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scaled)?;
            attns.push(attn);
            heads.push(tape.matmul(attn, v)?);
        }
        let cat = tape.concat_cols(&heads)?;
        let wo = cache.get(tape, &self.store, ids.wo);
        let msa = tape.matmul(cat, wo)?;
        let msa = self.maybe_dropout(tape, msa, dropout, mode)?;
        let sum1 = tape.add(x, msa)?;
        let ln1_g = cache.get(tape, &self.store, ids.ln1_g);
        let ln1_b = cache.get(tape, &self.store, ids.ln1_b);
        let y = tape.layer_norm(sum1, ln1_g, ln1_b, S::of(LN_EPS))?;

        let w1 = cache.get(tape, &self.store, ids.w1);
        let b1 = cache.get(tape, &self.store, ids.b1);
        let w2 = cache.get(tape, &self.store, ids.w2);
        let b2 = cache.get(tape, &self.store, ids.b2);
        let f1 = tape.matmul(y, w1)?;
        let f1 = tape.add_row(f1, b1)?;
        let g = tape.gelu(f1);
        let f2 = tape.matmul(g, w2)?;
        let f2 = tape.add_row(f2, b2)?;
        let f2 = self.maybe_dropout(tape, f2, dropout, mode)?;
        let sum2 = tape.add(y, f2)?;
        let ln2_g = cache.get(tape, &self.store, ids.ln2_g);
        let ln2_b = cache.get(tape, &self.store, ids.ln2_b);
        let out = tape.layer_norm(sum2, ln2_g, ln2_b, S::of(LN_EPS))?;
        Ok((out, attns))
    }

    /// Per-lead embedding rows [SEP, patches..., SEP] with positional
    /// embeddings added; the lead embedding is applied separately so the
    /// masked path can subset rows first.
    pub fn embed_lead_tokens(
        &self,
        tape: &mut Tape<S>,
        cache: &mut ParamCache,
        patches: &Tensor<S>,
    ) -> Result<NodeId> {
        if patches.cols() != self.config.patch_len || patches.rows() != self.config.num_patches()
        {
            return Err(Error::Config(format!(
                "patches {}x{} do not match config N={} P={}",
                patches.rows(),
                patches.cols(),
                self.config.num_patches(),
                self.config.patch_len
            )));
        }
        let w_e = cache.get(tape, &self.store, self.embed.w_e);
        let b_e = cache.get(tape, &self.store, self.embed.b_e);
        let sep = cache.get(tape, &self.store, self.embed.sep);
        let e_pos = cache.get(tape, &self.store, self.embed.e_pos);

        let p = tape.input(patches);
        let y0 = tape.matmul(p, w_e)?;
        let y0 = tape.add_row(y0, b_e)?;
        let with_sep = tape.concat_rows(&[sep, y0, sep])?;
        tape.add(with_sep, e_pos)
    }

    /// Add the lead embedding row to a (rows x D) token block.
    pub fn add_lead_embedding(
        &self,
        tape: &mut Tape<S>,
        cache: &mut ParamCache,
        tokens: NodeId,
        lead: usize,
    ) -> Result<NodeId> {
        let e_lead = cache.get(tape, &self.store, self.embed.e_lead);
        let row = tape.gather_rows(e_lead, &[lead])?;
        tape.add_row(tokens, row)
    }

    /// Embed a full unmasked record into the joint token sequence
    /// (C*(N+2) x D).
    pub fn embed_record(
        &self,
        tape: &mut Tape<S>,
        cache: &mut ParamCache,
        patches: &[Tensor<S>],
    ) -> Result<NodeId> {
        if patches.len() != self.config.leads {
            return Err(Error::Config(format!(
                "expected {} leads of patches, got {}",
                self.config.leads,
                patches.len()
            )));
        }
        let mut leads = Vec::with_capacity(patches.len());
        for (c, p) in patches.iter().enumerate() {
            let tokens = self.embed_lead_tokens(tape, cache, p)?;
            leads.push(self.add_lead_embedding(tape, cache, tokens, c)?);
        }
        tape.concat_rows(&leads)
    }

    /// Run the encoder stack over a token matrix, optionally capturing every
    /// layer's output and attention maps.
    pub fn encoder_forward(
        &self,
        tape: &mut Tape<S>,
        cache: &mut ParamCache,
        tokens: NodeId,
        mode: &mut Mode,
        capture: CaptureOpts,
    ) -> Result<(NodeId, CaptureIds)> {
        let mut h = tokens;
        let mut cap = CaptureIds::default();
        for ids in &self.enc_layers {
            let (out, attns) = self.transformer_layer(
                tape,
                cache,
                h,
                ids,
                self.config.head_dim(),
                self.config.dropout,
                mode,
            )?;
            h = out;
            if capture.hidden {
                cap.hidden.push(h);
            }
            if capture.attention {
                cap.attention.push(attns);
            }
        }
        Ok((h, cap))
    }

    /// Decoder stack (shared weights, applied per lead).
    pub(crate) fn decoder_forward(
        &self,
        tape: &mut Tape<S>,
        cache: &mut ParamCache,
        tokens: NodeId,
        mode: &mut Mode,
    ) -> Result<NodeId> {
        let dec = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Usage("model built without a decoder".into()))?;
        let dc = self.decoder_config.as_ref().unwrap();
        let mut h = tokens;
        for ids in &dec.layers {
            let (out, _) =
                self.transformer_layer(tape, cache, h, ids, dc.head_dim(), 0.0, mode)?;
            h = out;
        }
        Ok(h)
    }

    /// Full unmasked forward over a preprocessed C x L signal: patchify,
    /// embed, encode. Returns the final representation node, capture ids,
    /// and the token layout.
    pub fn forward_record(
        &self,
        tape: &mut Tape<S>,
        signal: &[Vec<f64>],
        mode: &mut Mode,
        capture: CaptureOpts,
    ) -> Result<(NodeId, CaptureIds, TokenLayout)> {
        let patches64 = patchify(signal, self.config.patch_len)?;
        let patches: Vec<Tensor<S>> = patches64.iter().map(cast_tensor).collect();
        let mut cache = ParamCache::new(&self.store);
        let tokens = self.embed_record(tape, &mut cache, &patches)?;
        let (out, cap) = self.encoder_forward(tape, &mut cache, tokens, mode, capture)?;
        Ok((out, cap, self.full_layout()))
    }

    /// Capture activations of a frozen model in eval mode (the diagnostics
    /// and probing entry point).
    pub fn capture_activations(
        &self,
        signal: &[Vec<f64>],
        capture: CaptureOpts,
    ) -> Result<(LayerActivations, TokenLayout)> {
        let mut tape = Tape::new();
        let (_, cap, layout) = self.forward_record(&mut tape, signal, &mut Mode::Eval, capture)?;
        Ok((LayerActivations::extract(&tape, &cap), layout))
    }
}

pub fn cast_tensor<A: Scalar, B: Scalar>(t: &Tensor<A>) -> Tensor<B> {
    Tensor::new(
        t.shape().to_vec(),
        t.data().iter().map(|&v| B::of(v.as_f64())).collect(),
    )
    .expect("cast preserves shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> VitModel<f64> {
        let config = VitConfig {
            leads: 2,
            signal_len: 200,
            patch_len: 50,
            embed_dim: 8,
            depth: 2,
            heads: 2,
            mlp_ratio: 2,
            dropout: 0.0,
        };
        VitModel::new(config, None, 1).unwrap()
    }

    fn test_signal(leads: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::Rng;
        let mut rng = stream(seed, StreamTag::Synth, &[99]);
        (0..leads)
            .map(|_| (0..len).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
            .collect()
    }

    #[test]
    fn patchify_counts() {
        // 12 leads, 1000 samples, P=50 -> 20 patches
        let signal = test_signal(12, 1000, 0);
        let patches = patchify(&signal, 50).unwrap();
        assert_eq!(patches.len(), 12);
        assert!(patches.iter().all(|p| p.rows() == 20 && p.cols() == 50));

        // L == P -> single patch equal to the signal
        let one = vec![vec![1.0, 2.0, 3.0]];
        let p = patchify(&one, 3).unwrap();
        assert_eq!(p[0].rows(), 1);
        assert_eq!(p[0].row(0), &[1.0, 2.0, 3.0]);

        // L=103, P=50 -> 2 patches, last 3 samples dropped
        let odd = vec![(0..103).map(|x| x as f64).collect::<Vec<_>>()];
        let p = patchify(&odd, 50).unwrap();
        assert_eq!(p[0].rows(), 2);
        assert_eq!(p[0].at(1, 49), 99.0);

        assert!(patchify(&[vec![1.0; 10]], 50).is_err());
    }

    #[test]
    fn embed_is_additive_in_lead_embedding() {
        let model = tiny_model();
        let signal = test_signal(2, 200, 1);
        // same patch content on both leads
        let same = vec![signal[0].clone(), signal[0].clone()];
        let patches64 = patchify(&same, 50).unwrap();
        let patches: Vec<Tensor<f64>> = patches64.iter().map(cast_tensor).collect();
        let mut tape = Tape::new();
        let mut cache = ParamCache::new(&model.store);
        let tokens = model.embed_record(&mut tape, &mut cache, &patches).unwrap();
        let t = tape.value(tokens);
        let rows = model.config.tokens_per_lead();
        let e_lead = model.store.value(model.embed.e_lead).clone();
        for pos in 0..rows {
            for j in 0..model.config.embed_dim {
                let diff = t.at(rows + pos, j) - t.at(pos, j);
                let expect = e_lead.at(1, j) - e_lead.at(0, j);
                assert!(
                    (diff - expect).abs() < 1e-12,
                    "lead embedding difference mismatch at pos {pos} dim {j}"
                );
            }
        }
    }

    #[test]
    fn embed_reduces_to_lead_embedding_when_weights_zero() {
        let mut model = tiny_model();
        // zero out everything except the lead table
        for name in ["enc.embed.w_e", "enc.embed.b_e", "enc.embed.sep", "enc.embed.e_pos"] {
            let idx = model.store.index_of(name).unwrap();
            let shape = model.store.value(idx).shape().to_vec();
            model.store.load_value(name, Tensor::zeros(shape)).unwrap();
        }
        let signal = vec![vec![0.0; 200], vec![0.0; 200]];
        let patches64 = patchify(&signal, 50).unwrap();
        let patches: Vec<Tensor<f64>> = patches64.iter().map(cast_tensor).collect();
        let mut tape = Tape::new();
        let mut cache = ParamCache::new(&model.store);
        let tokens = model.embed_record(&mut tape, &mut cache, &patches).unwrap();
        let t = tape.value(tokens);
        let rows = model.config.tokens_per_lead();
        let e_lead = model.store.value(model.embed.e_lead).clone();
        for lead in 0..2 {
            for pos in 0..rows {
                for j in 0..model.config.embed_dim {
                    assert_eq!(t.at(lead * rows + pos, j), e_lead.at(lead, j));
                }
            }
        }
    }

    #[test]
    fn depth_zero_encoder_is_identity() {
        let config = VitConfig {
            leads: 1,
            signal_len: 100,
            patch_len: 50,
            embed_dim: 8,
            depth: 0,
            heads: 2,
            mlp_ratio: 2,
            dropout: 0.0,
        };
        let model: VitModel<f64> = VitModel::new(config, None, 3).unwrap();
        let mut tape = Tape::new();
        let mut cache = ParamCache::new(&model.store);
        let x = tape.input_matrix(3, 8, (0..24).map(|v| v as f64 * 0.1).collect());
        let (out, cap) = model
            .encoder_forward(&mut tape, &mut cache, x, &mut Mode::Eval, CaptureOpts::all())
            .unwrap();
        assert_eq!(out, x);
        assert!(cap.hidden.is_empty());
    }

    #[test]
    fn single_token_attention_is_one() {
        let config = VitConfig {
            leads: 1,
            signal_len: 100,
            patch_len: 50,
            embed_dim: 8,
            depth: 2,
            heads: 2,
            mlp_ratio: 2,
            dropout: 0.0,
        };
        let model: VitModel<f64> = VitModel::new(config, None, 4).unwrap();
        let mut tape = Tape::new();
        let mut cache = ParamCache::new(&model.store);
        let x = tape.input_matrix(1, 8, (0..8).map(|v| v as f64 * 0.3).collect());
        let (_, cap) = model
            .encoder_forward(&mut tape, &mut cache, x, &mut Mode::Eval, CaptureOpts::all())
            .unwrap();
        for layer in &cap.attention {
            for &a in layer {
                assert_eq!(tape.data(a), &[1.0]);
            }
        }
    }

    #[test]
    fn attention_rows_are_stochastic_everywhere() {
        let model = tiny_model();
        let signal = test_signal(2, 200, 5);
        let (acts, _) = model
            .capture_activations(&signal, CaptureOpts::all())
            .unwrap();
        for layer in &acts.attention {
            for head in layer {
                for i in 0..head.rows() {
                    let mut sum = 0.0;
                    for j in 0..head.cols() {
                        let v = head.at(i, j);
                        assert!(v >= 0.0);
                        sum += v;
                    }
                    assert!((sum - 1.0).abs() < 1e-9, "row sum {sum}");
                }
            }
        }
    }

    #[test]
    fn capture_is_complete() {
        let model = tiny_model();
        let signal = test_signal(2, 200, 6);
        let (acts, layout) = model
            .capture_activations(&signal, CaptureOpts::all())
            .unwrap();
        assert_eq!(acts.hidden.len(), model.config.depth);
        assert_eq!(acts.attention.len(), model.config.depth);
        for layer in &acts.attention {
            assert_eq!(layer.len(), model.config.heads);
        }
        // token count constant across layers
        for h in &acts.hidden {
            assert_eq!(h.rows(), layout.total_tokens());
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant_without_positional_info() {
        let model = tiny_model();
        let mut tape = Tape::new();
        let mut cache = ParamCache::new(&model.store);
        let n = 5;
        let d = model.config.embed_dim;
        let data: Vec<f64> = (0..n * d).map(|v| ((v * 37) % 11) as f64 * 0.1 - 0.5).collect();
        let x = tape.input_matrix(n, d, data.clone());
        let (out, _) = model
            .encoder_forward(&mut tape, &mut cache, x, &mut Mode::Eval, CaptureOpts::none())
            .unwrap();
        let y = tape.value(out);

        // permute input rows; outputs must permute identically
        let perm = [3usize, 0, 4, 1, 2];
        let mut pdata = vec![0.0; n * d];
        for (new_r, &old_r) in perm.iter().enumerate() {
            pdata[new_r * d..(new_r + 1) * d].copy_from_slice(&data[old_r * d..(old_r + 1) * d]);
        }
        let mut tape2 = Tape::new();
        let mut cache2 = ParamCache::new(&model.store);
        let xp = tape2.input_matrix(n, d, pdata);
        let (outp, _) = model
            .encoder_forward(&mut tape2, &mut cache2, xp, &mut Mode::Eval, CaptureOpts::none())
            .unwrap();
        let yp = tape2.value(outp);
        for (new_r, &old_r) in perm.iter().enumerate() {
            for j in 0..d {
                assert!(
                    (yp.at(new_r, j) - y.at(old_r, j)).abs() < 1e-9,
                    "row {old_r} -> {new_r} dim {j}"
                );
            }
        }
    }

    #[test]
    fn distinct_leads_make_identical_content_distinct() {
        let model = tiny_model();
        let signal = test_signal(1, 200, 7);
        let same = vec![signal[0].clone(), signal[0].clone()];
        let patches64 = patchify(&same, 50).unwrap();
        let patches: Vec<Tensor<f64>> = patches64.iter().map(cast_tensor).collect();
        let mut tape = Tape::new();
        let mut cache = ParamCache::new(&model.store);
        let tokens = model.embed_record(&mut tape, &mut cache, &patches).unwrap();
        let t = tape.value(tokens);
        let rows = model.config.tokens_per_lead();
        let mut any_diff = false;
        for pos in 0..rows {
            for j in 0..model.config.embed_dim {
                if (t.at(pos, j) - t.at(rows + pos, j)).abs() > 1e-12 {
                    any_diff = true;
                }
            }
        }
        assert!(any_diff, "lead embeddings must separate identical content");
    }
}
