//! Model configuration and the named-tensor parameter bag.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Seq2SeqError;

/// Architecture and seed of the micro encoder-decoder model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size_src: u32,
    pub vocab_size_tgt: u32,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults: 2 layers, 64 hidden units, 2 heads, 128 FFN.
    pub fn new(vocab_size_src: u32, vocab_size_tgt: u32, seed: u64) -> Self {
        Self {
            vocab_size_src,
            vocab_size_tgt,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 128,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), Seq2SeqError> {
        if self.vocab_size_src < 2 || self.vocab_size_tgt < 2 {
            return Err(Seq2SeqError::InvalidConfig("vocab sizes must be at least 2"));
        }
        if self.hidden_dim == 0 || self.num_layers == 0 || self.num_heads == 0 || self.ffn_dim == 0
        {
            return Err(Seq2SeqError::InvalidConfig("all dimensions must be positive"));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Seq2SeqError::InvalidConfig("hidden_dim must be divisible by num_heads"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub ln_attn: LayerNormParams,
    pub attn: AttentionParams,
    pub ln_ffn: LayerNormParams,
    pub ffn: FfnParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerParams {
    pub ln_self: LayerNormParams,
    pub self_attn: AttentionParams,
    pub ln_cross: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln_ffn: LayerNormParams,
    pub ffn: FfnParams,
}

/// All model parameters as named f64 tensors. Pre-LN transformer:
/// `x + attn(ln(x))`, `x + ffn(ln(x))`, with a final layer norm after each
/// stack and a separate output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    /// `[vocab_size_src, hidden_dim]`
    pub src_embed: Vec<f64>,
    /// `[vocab_size_tgt, hidden_dim]`
    pub tgt_embed: Vec<f64>,
    pub encoder: Vec<EncoderLayerParams>,
    pub enc_ln: LayerNormParams,
    pub decoder: Vec<DecoderLayerParams>,
    pub dec_ln: LayerNormParams,
    /// `[vocab_size_tgt, hidden_dim]`
    pub out_w: Vec<f64>,
    /// `[vocab_size_tgt]`
    pub out_b: Vec<f64>,
}

/// Read-only view of one named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorView<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

fn ln_zeros(d: usize) -> LayerNormParams {
    LayerNormParams { gain: vec![0.0; d], bias: vec![0.0; d] }
}

fn attn_zeros(d: usize) -> AttentionParams {
    AttentionParams {
        wq: vec![0.0; d * d],
        bq: vec![0.0; d],
        wk: vec![0.0; d * d],
        bk: vec![0.0; d],
        wv: vec![0.0; d * d],
        bv: vec![0.0; d],
        wo: vec![0.0; d * d],
        bo: vec![0.0; d],
    }
}

fn ffn_zeros(d: usize, f: usize) -> FfnParams {
    FfnParams { w1: vec![0.0; f * d], b1: vec![0.0; f], w2: vec![0.0; d * f], b2: vec![0.0; d] }
}

impl Parameters {
    /// All-zero parameters (gradient and moment buffers).
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.hidden_dim;
        let f = config.ffn_dim;
        Self {
            config: *config,
            src_embed: vec![0.0; config.vocab_size_src as usize * d],
            tgt_embed: vec![0.0; config.vocab_size_tgt as usize * d],
            encoder: (0..config.num_layers)
                .map(|_| EncoderLayerParams {
                    ln_attn: ln_zeros(d),
                    attn: attn_zeros(d),
                    ln_ffn: ln_zeros(d),
                    ffn: ffn_zeros(d, f),
                })
                .collect(),
            enc_ln: ln_zeros(d),
            decoder: (0..config.num_layers)
                .map(|_| DecoderLayerParams {
                    ln_self: ln_zeros(d),
                    self_attn: attn_zeros(d),
                    ln_cross: ln_zeros(d),
                    cross_attn: attn_zeros(d),
                    ln_ffn: ln_zeros(d),
                    ffn: ffn_zeros(d, f),
                })
                .collect(),
            dec_ln: ln_zeros(d),
            out_w: vec![0.0; config.vocab_size_tgt as usize * d],
            out_b: vec![0.0; config.vocab_size_tgt as usize],
        }
    }

    /// Seeded scaled-uniform initialization.
    ///
    /// Weight matrices draw from U(−a, a) with a = sqrt(6 / (fan_in +
    /// fan_out)); embeddings use a = sqrt(3 / hidden_dim); biases start at
    /// zero, layer-norm gains at one. Draws happen in the fixed tensor
    /// order, so a seed pins every parameter bitwise.
    pub fn init(config: &ModelConfig) -> Result<Self, Seq2SeqError> {
        config.validate()?;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Self::zeros(config);
        let d = config.hidden_dim;
        let f = config.ffn_dim;
        let emb_a = libm::sqrt(3.0 / d as f64);
        let attn_a = libm::sqrt(6.0 / (d + d) as f64);
        let w1_a = libm::sqrt(6.0 / (d + f) as f64);
        let w2_a = libm::sqrt(6.0 / (f + d) as f64);
        let out_a = libm::sqrt(6.0 / (d + config.vocab_size_tgt as usize) as f64);

        fill_uniform(&mut rng, &mut params.src_embed, emb_a);
        fill_uniform(&mut rng, &mut params.tgt_embed, emb_a);
        for layer in &mut params.encoder {
            init_ln(&mut layer.ln_attn);
            init_attn(&mut rng, &mut layer.attn, attn_a);
            init_ln(&mut layer.ln_ffn);
            init_ffn(&mut rng, &mut layer.ffn, w1_a, w2_a);
        }
        init_ln(&mut params.enc_ln);
        for layer in &mut params.decoder {
            init_ln(&mut layer.ln_self);
            init_attn(&mut rng, &mut layer.self_attn, attn_a);
            init_ln(&mut layer.ln_cross);
            init_attn(&mut rng, &mut layer.cross_attn, attn_a);
            init_ln(&mut layer.ln_ffn);
            init_ffn(&mut rng, &mut layer.ffn, w1_a, w2_a);
        }
        init_ln(&mut params.dec_ln);
        fill_uniform(&mut rng, &mut params.out_w, out_a);
        Ok(params)
    }

    /// Named tensors with dimensions, in the canonical order.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let d = self.config.hidden_dim;
        let f = self.config.ffn_dim;
        let vs = self.config.vocab_size_src as usize;
        let vt = self.config.vocab_size_tgt as usize;
        let mut v: Vec<TensorView<'_>> = Vec::new();
        v.push(TensorView { name: "src_embed".into(), dims: vec![vs, d], data: &self.src_embed });
        v.push(TensorView { name: "tgt_embed".into(), dims: vec![vt, d], data: &self.tgt_embed });
        for (i, layer) in self.encoder.iter().enumerate() {
            push_ln(&mut v, &format!("encoder.{i}.ln_attn"), d, &layer.ln_attn);
            push_attn(&mut v, &format!("encoder.{i}.attn"), d, &layer.attn);
            push_ln(&mut v, &format!("encoder.{i}.ln_ffn"), d, &layer.ln_ffn);
            push_ffn(&mut v, &format!("encoder.{i}.ffn"), d, f, &layer.ffn);
        }
        push_ln(&mut v, "enc_ln", d, &self.enc_ln);
        for (i, layer) in self.decoder.iter().enumerate() {
            push_ln(&mut v, &format!("decoder.{i}.ln_self"), d, &layer.ln_self);
            push_attn(&mut v, &format!("decoder.{i}.self_attn"), d, &layer.self_attn);
            push_ln(&mut v, &format!("decoder.{i}.ln_cross"), d, &layer.ln_cross);
            push_attn(&mut v, &format!("decoder.{i}.cross_attn"), d, &layer.cross_attn);
            push_ln(&mut v, &format!("decoder.{i}.ln_ffn"), d, &layer.ln_ffn);
            push_ffn(&mut v, &format!("decoder.{i}.ffn"), d, f, &layer.ffn);
        }
        push_ln(&mut v, "dec_ln", d, &self.dec_ln);
        v.push(TensorView { name: "out_w".into(), dims: vec![vt, d], data: &self.out_w });
        v.push(TensorView { name: "out_b".into(), dims: vec![vt], data: &self.out_b });
        v
    }

    /// Tensor data in the canonical order, without names.
    pub fn data(&self) -> Vec<&Vec<f64>> {
        let mut v: Vec<&Vec<f64>> = Vec::new();
        v.push(&self.src_embed);
        v.push(&self.tgt_embed);
        for layer in &self.encoder {
            data_ln(&mut v, &layer.ln_attn);
            data_attn(&mut v, &layer.attn);
            data_ln(&mut v, &layer.ln_ffn);
            data_ffn(&mut v, &layer.ffn);
        }
        data_ln(&mut v, &self.enc_ln);
        for layer in &self.decoder {
            data_ln(&mut v, &layer.ln_self);
            data_attn(&mut v, &layer.self_attn);
            data_ln(&mut v, &layer.ln_cross);
            data_attn(&mut v, &layer.cross_attn);
            data_ln(&mut v, &layer.ln_ffn);
            data_ffn(&mut v, &layer.ffn);
        }
        data_ln(&mut v, &self.dec_ln);
        v.push(&self.out_w);
        v.push(&self.out_b);
        v
    }

    /// Mutable tensor data in the canonical order.
    pub fn data_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = Vec::new();
        v.push(&mut self.src_embed);
        v.push(&mut self.tgt_embed);
        for layer in &mut self.encoder {
            let EncoderLayerParams { ln_attn, attn, ln_ffn, ffn } = layer;
            data_ln_mut(&mut v, ln_attn);
            data_attn_mut(&mut v, attn);
            data_ln_mut(&mut v, ln_ffn);
            data_ffn_mut(&mut v, ffn);
        }
        data_ln_mut(&mut v, &mut self.enc_ln);
        for layer in &mut self.decoder {
            let DecoderLayerParams { ln_self, self_attn, ln_cross, cross_attn, ln_ffn, ffn } =
                layer;
            data_ln_mut(&mut v, ln_self);
            data_attn_mut(&mut v, self_attn);
            data_ln_mut(&mut v, ln_cross);
            data_attn_mut(&mut v, cross_attn);
            data_ln_mut(&mut v, ln_ffn);
            data_ffn_mut(&mut v, ffn);
        }
        data_ln_mut(&mut v, &mut self.dec_ln);
        v.push(&mut self.out_w);
        v.push(&mut self.out_b);
        v
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.data().iter().map(|t| t.len()).sum()
    }
}

fn init_ln(p: &mut LayerNormParams) {
    p.gain.fill(1.0);
    p.bias.fill(0.0);
}

fn fill_uniform(rng: &mut ChaCha8Rng, data: &mut [f64], a: f64) {
    for v in data {
        *v = rng.random_range(-a..a);
    }
}

fn init_attn(rng: &mut ChaCha8Rng, p: &mut AttentionParams, a: f64) {
    fill_uniform(rng, &mut p.wq, a);
    fill_uniform(rng, &mut p.wk, a);
    fill_uniform(rng, &mut p.wv, a);
    fill_uniform(rng, &mut p.wo, a);
}

fn init_ffn(rng: &mut ChaCha8Rng, p: &mut FfnParams, a1: f64, a2: f64) {
    fill_uniform(rng, &mut p.w1, a1);
    fill_uniform(rng, &mut p.w2, a2);
}

fn push_ln<'a>(v: &mut Vec<TensorView<'a>>, prefix: &str, d: usize, p: &'a LayerNormParams) {
    v.push(TensorView { name: format!("{prefix}.gain"), dims: vec![d], data: &p.gain });
    v.push(TensorView { name: format!("{prefix}.bias"), dims: vec![d], data: &p.bias });
}

fn push_attn<'a>(v: &mut Vec<TensorView<'a>>, prefix: &str, d: usize, p: &'a AttentionParams) {
    for (suffix, w, b) in
        [("q", &p.wq, &p.bq), ("k", &p.wk, &p.bk), ("v", &p.wv, &p.bv), ("o", &p.wo, &p.bo)]
    {
        v.push(TensorView { name: format!("{prefix}.w{suffix}"), dims: vec![d, d], data: w });
        v.push(TensorView { name: format!("{prefix}.b{suffix}"), dims: vec![d], data: b });
    }
}

fn push_ffn<'a>(v: &mut Vec<TensorView<'a>>, prefix: &str, d: usize, f: usize, p: &'a FfnParams) {
    v.push(TensorView { name: format!("{prefix}.w1"), dims: vec![f, d], data: &p.w1 });
    v.push(TensorView { name: format!("{prefix}.b1"), dims: vec![f], data: &p.b1 });
    v.push(TensorView { name: format!("{prefix}.w2"), dims: vec![d, f], data: &p.w2 });
    v.push(TensorView { name: format!("{prefix}.b2"), dims: vec![d], data: &p.b2 });
}

fn data_ln<'a>(v: &mut Vec<&'a Vec<f64>>, p: &'a LayerNormParams) {
    v.push(&p.gain);
    v.push(&p.bias);
}

fn data_attn<'a>(v: &mut Vec<&'a Vec<f64>>, p: &'a AttentionParams) {
    v.push(&p.wq);
    v.push(&p.bq);
    v.push(&p.wk);
    v.push(&p.bk);
    v.push(&p.wv);
    v.push(&p.bv);
    v.push(&p.wo);
    v.push(&p.bo);
}

fn data_ffn<'a>(v: &mut Vec<&'a Vec<f64>>, p: &'a FfnParams) {
    v.push(&p.w1);
    v.push(&p.b1);
    v.push(&p.w2);
    v.push(&p.b2);
}

fn data_ln_mut<'a>(v: &mut Vec<&'a mut Vec<f64>>, p: &'a mut LayerNormParams) {
    v.push(&mut p.gain);
    v.push(&mut p.bias);
}

fn data_attn_mut<'a>(v: &mut Vec<&'a mut Vec<f64>>, p: &'a mut AttentionParams) {
    v.push(&mut p.wq);
    v.push(&mut p.bq);
    v.push(&mut p.wk);
    v.push(&mut p.bk);
    v.push(&mut p.wv);
    v.push(&mut p.bv);
    v.push(&mut p.wo);
    v.push(&mut p.bo);
}

fn data_ffn_mut<'a>(v: &mut Vec<&'a mut Vec<f64>>, p: &'a mut FfnParams) {
    v.push(&mut p.w1);
    v.push(&mut p.b1);
    v.push(&mut p.w2);
    v.push(&mut p.b2);
}
