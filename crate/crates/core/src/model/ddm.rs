//! DDM branch: patch embedding, global token, positional encoding, channel
//! aggregation and the spatial–channel attention encoder.
//!
//! Each CYGNSS channel is one attention head (`d_model = h = 4`, `d_k = 1`).
//! Q/K/V projections are diagonal so every head only sees its own channel;
//! all cross-channel mixing happens in `W^O` (dense under CD, diagonal
//! under CI). Under CI the FFN is block-diagonal and normalization statistics
//! are taken per channel column, so no information crosses channels.

use super::config::{ModelConfig, Strategy, CHANNELS, DDM_TYPES};
use super::weights::Bound;
use super::Ctx;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Four channels × three DDM types × `W` Doppler bins × `H` delay bins.
#[derive(Clone, Debug, PartialEq)]
pub struct DdmStack(Tensor);

impl DdmStack {
    pub fn new(values: Tensor) -> Result<Self> {
        match values.shape() {
            [CHANNELS, DDM_TYPES, _, _] => {}
            s => {
                return Err(Error::dim(
                    "ddm_stack",
                    format!("expected {CHANNELS}×{DDM_TYPES}×W×H, got {s:?}"),
                ))
            }
        }
        if !values.is_finite() {
            return Err(Error::Contract("DDM stack contains non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[3]
    }
}

/// Sinusoidal encoding: column `2i` holds `sin(pos / 10000^(2i/dim))`, column `2i+1` the cosine.
pub fn positional_encoding(seq_len: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || seq_len == 0 {
        return Err(Error::dim("positional_encoding", "seq_len and dim must be positive"));
    }
    let mut data = Vec::with_capacity(seq_len * dim);
    for pos in 0..seq_len {
        for j in 0..dim {
            let pair = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![seq_len, dim], data)
}

#[derive(Clone, Debug)]
pub struct EmbedVars {
    pub kernels: [Var; DDM_TYPES],
    pub biases: [Var; DDM_TYPES],
    pub global: Var,
}

impl EmbedVars {
    pub fn bind(b: &Bound) -> Result<Self> {
        let kernel = |t: usize| b.get(&format!("ddm.embed.kernel{t}"));
        let bias = |t: usize| b.get(&format!("ddm.embed.bias{t}"));
        Ok(Self {
            kernels: [kernel(0)?, kernel(1)?, kernel(2)?],
            biases: [bias(0)?, bias(1)?, bias(2)?],
            global: b.get("ddm.embed.global")?,
        })
    }
}

/// Embeds one channel's `3×W×H` DDMs into a `(3N+1) × D_e` token sequence:
/// `[global, brcs patches, eff_scatter patches, power_analog patches] + PE`.
pub fn embed_channel(tape: &mut Tape, ddms: Var, vars: &EmbedVars, cfg: &ModelConfig) -> Result<Var> {
    let shape = tape.shape(ddms).to_vec();
    if shape != [DDM_TYPES, cfg.ddm_width, cfg.ddm_height] {
        return Err(Error::dim(
            "embed_channel",
            format!("expected {DDM_TYPES}×{}×{}, got {shape:?}", cfg.ddm_width, cfg.ddm_height),
        ));
    }
    let mut parts = Vec::with_capacity(DDM_TYPES + 1);
    parts.push(tape.reshape(vars.global, &[1, cfg.embed_dim])?);
    for t in 0..DDM_TYPES {
        let map = tape.slice(ddms, 0, t, 1)?;
        let emb = tape.conv_patchify(map, vars.kernels[t], vars.biases[t])?;
        parts.push(tape.transpose(emb)?);
    }
    let seq = tape.concat(&parts, 0)?;
    let pe = tape.constant(positional_encoding(cfg.seq_len(), cfg.embed_dim)?)?;
    tape.add(seq, pe)
}

/// Flattens each channel's sequence row-major over (ddm type, token, embed dim)
/// and stacks the four as columns of an `M × 4` token matrix.
pub fn aggregate_channels(tape: &mut Tape, per_channel: &[Var]) -> Result<Var> {
    if per_channel.len() != CHANNELS {
        return Err(Error::dim("aggregate_channels", format!("expected {CHANNELS} channels, got {}", per_channel.len())));
    }
    let flat = per_channel
        .iter()
        .map(|&v| tape.flatten(v))
        .collect::<Result<Vec<_>>>()?;
    tape.stack(&flat, 1)
}

#[derive(Clone, Debug)]
pub struct NormVars {
    pub gamma: Var,
    pub beta: Var,
}

#[derive(Clone, Debug)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
}

impl DenseVars {
    pub fn bind(b: &Bound, name: &str) -> Result<Self> {
        Ok(Self {
            w: b.get(&format!("{name}.w"))?,
            b: b.get(&format!("{name}.b"))?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(x, self.w, self.b)
    }
}

#[derive(Clone, Debug)]
pub enum FfnVars {
    Dense { l1: DenseVars, l2: DenseVars },
    PerChannel(Vec<(DenseVars, DenseVars)>),
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    pub q_scale: Var,
    pub k_scale: Var,
    pub v_scale: Var,
    pub w_o: Var,
    pub norm1: NormVars,
    pub norm2: NormVars,
    pub ffn: FfnVars,
}

impl LayerVars {
    pub fn bind(b: &Bound, layer: usize, strategy: Strategy) -> Result<Self> {
        let pre = format!("ddm.layer{layer}");
        let norm = |n: &str| -> Result<NormVars> {
            Ok(NormVars {
                gamma: b.get(&format!("{pre}.{n}.gamma"))?,
                beta: b.get(&format!("{pre}.{n}.beta"))?,
            })
        };
        let ffn = match strategy {
            Strategy::CD => FfnVars::Dense {
                l1: DenseVars::bind(b, &format!("{pre}.ffn.l1"))?,
                l2: DenseVars::bind(b, &format!("{pre}.ffn.l2"))?,
            },
            Strategy::CI => FfnVars::PerChannel(
                (0..CHANNELS)
                    .map(|c| {
                        Ok((
                            DenseVars::bind(b, &format!("{pre}.ffn.ch{c}.l1"))?,
                            DenseVars::bind(b, &format!("{pre}.ffn.ch{c}.l2"))?,
                        ))
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Self {
            q_scale: b.get(&format!("{pre}.attn.q_scale"))?,
            k_scale: b.get(&format!("{pre}.attn.k_scale"))?,
            v_scale: b.get(&format!("{pre}.attn.v_scale"))?,
            w_o: b.get(&format!("{pre}.attn.w_o"))?,
            norm1: norm("norm1")?,
            norm2: norm("norm2")?,
            ffn,
        })
    }
}

#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub embed: EmbedVars,
    pub layers: Vec<LayerVars>,
}

impl EncoderVars {
    pub fn bind(b: &Bound, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            embed: EmbedVars::bind(b)?,
            layers: (0..cfg.n_layers)
                .map(|l| LayerVars::bind(b, l, cfg.strategy))
                .collect::<Result<_>>()?,
        })
    }
}

/// Attention output plus the per-head `M × M` weight matrices.
#[derive(Clone, Debug)]
pub struct Attention {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Channels-as-heads self-attention over an `M × 4` token matrix.
pub fn sca_attention(tape: &mut Tape, tokens: Var, vars: &LayerVars) -> Result<Attention> {
    let shape = tape.shape(tokens).to_vec();
    if shape.len() != 2 || shape[1] != CHANNELS {
        return Err(Error::dim("sca_attention", format!("expected M×{CHANNELS}, got {shape:?}")));
    }
    // d_k = d_model / h = 1
    let inv_sqrt_dk = 1.0;
    let q = tape.mul(tokens, vars.q_scale)?;
    let k = tape.mul(tokens, vars.k_scale)?;
    let v = tape.mul(tokens, vars.v_scale)?;
    let (qs, ks, vs) = (tape.split(q, 1, CHANNELS)?, tape.split(k, 1, CHANNELS)?, tape.split(v, 1, CHANNELS)?);
    let mut heads = Vec::with_capacity(CHANNELS);
    let mut weights = Vec::with_capacity(CHANNELS);
    for i in 0..CHANNELS {
        let kt = tape.transpose(ks[i])?;
        let scores = tape.matmul(qs[i], kt)?;
        let scores = tape.scale(scores, inv_sqrt_dk)?;
        let attn = tape.softmax_rows(scores)?;
        heads.push(tape.matmul(attn, vs[i])?);
        weights.push(attn);
    }
    let h = tape.concat(&heads, 1)?;
    let output = match tape.shape(vars.w_o).len() {
        2 => tape.matmul(h, vars.w_o)?,
        _ => tape.mul(h, vars.w_o)?,
    };
    Ok(Attention { output, weights })
}

/// Normalization of an `M × 4` matrix: per token across channels (CD) or
/// per channel across tokens (CI), followed by the per-channel affine map.
pub fn normalize(tape: &mut Tape, x: Var, norm: &NormVars, cfg: &ModelConfig) -> Result<Var> {
    match cfg.strategy {
        Strategy::CD => tape.layer_norm(x, norm.gamma, norm.beta, cfg.ln_eps),
        Strategy::CI => {
            let xt = tape.transpose(x)?;
            let st = tape.standardize(xt, cfg.ln_eps)?;
            let s = tape.transpose(st)?;
            let g = tape.mul(s, norm.gamma)?;
            tape.add(g, norm.beta)
        }
    }
}

/// `base + Dropout(LN(sublayer))`. After attention `base` is the attention
/// output itself; after the FFN it is the FFN input.
pub fn add_norm(
    tape: &mut Tape,
    ctx: &mut Ctx,
    base: Var,
    sublayer: Var,
    norm: &NormVars,
    cfg: &ModelConfig,
) -> Result<Var> {
    let n = normalize(tape, sublayer, norm, cfg)?;
    let d = ctx.dropout(tape, n, cfg.dropout)?;
    tape.add(base, d)
}

/// Conventional post-norm residual `LN(x + sublayer)`.
pub fn residual_norm(tape: &mut Tape, x: Var, sublayer: Var, norm: &NormVars, cfg: &ModelConfig) -> Result<Var> {
    let s = tape.add(x, sublayer)?;
    normalize(tape, s, norm, cfg)
}

/// Position-wise feed-forward `L2(Dropout(ReLU(L1(x))))`, before its Add & Norm.
pub fn ffn(tape: &mut Tape, ctx: &mut Ctx, x: Var, vars: &FfnVars, cfg: &ModelConfig) -> Result<Var> {
    let mut block = |tape: &mut Tape, x: Var, l1: &DenseVars, l2: &DenseVars| -> Result<Var> {
        let h = l1.apply(tape, x)?;
        let h = tape.relu(h)?;
        let h = ctx.dropout(tape, h, cfg.dropout)?;
        l2.apply(tape, h)
    };
    match vars {
        FfnVars::Dense { l1, l2 } => block(tape, x, l1, l2),
        FfnVars::PerChannel(blocks) => {
            let cols = tape.split(x, 1, CHANNELS)?;
            let outs = cols
                .into_iter()
                .zip(blocks)
                .map(|(c, (l1, l2))| block(tape, c, l1, l2))
                .collect::<Result<Vec<_>>>()?;
            tape.concat(&outs, 1)
        }
    }
}

/// One encoder layer: attention → Add & Norm → FFN → Add & Norm.
pub fn encoder_layer(tape: &mut Tape, ctx: &mut Ctx, x: Var, vars: &LayerVars, cfg: &ModelConfig) -> Result<Var> {
    let o = sca_attention(tape, x, vars)?.output;
    if cfg.standard_residual {
        let d = residual_norm(tape, x, o, &vars.norm1, cfg)?;
        let f = ffn(tape, ctx, d, &vars.ffn, cfg)?;
        return residual_norm(tape, d, f, &vars.norm2, cfg);
    }
    let d = add_norm(tape, ctx, o, o, &vars.norm1, cfg)?;
    let f = ffn(tape, ctx, d, &vars.ffn, cfg)?;
    add_norm(tape, ctx, d, f, &vars.norm2, cfg)
}

/// Full DDM branch from a `4×3×W×H` stack to the `M × 4` encoder output.
pub fn encoder_forward(tape: &mut Tape, ctx: &mut Ctx, stack: Var, vars: &EncoderVars, cfg: &ModelConfig) -> Result<Var> {
    let shape = tape.shape(stack).to_vec();
    if shape != [CHANNELS, DDM_TYPES, cfg.ddm_width, cfg.ddm_height] {
        return Err(Error::dim(
            "encoder_forward",
            format!(
                "expected {CHANNELS}×{DDM_TYPES}×{}×{}, got {shape:?}",
                cfg.ddm_width, cfg.ddm_height
            ),
        ));
    }
    let mut per_channel = Vec::with_capacity(CHANNELS);
    for c in 0..CHANNELS {
        let ch = tape.slice(stack, 0, c, 1)?;
        let ch = tape.reshape(ch, &[DDM_TYPES, cfg.ddm_width, cfg.ddm_height])?;
        per_channel.push(embed_channel(tape, ch, &vars.embed, cfg)?);
    }
    let mut x = aggregate_channels(tape, &per_channel)?;
    for layer in &vars.layers {
        x = encoder_layer(tape, ctx, x, layer, cfg)?;
    }
    Ok(x)
}
