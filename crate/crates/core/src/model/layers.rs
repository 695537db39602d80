//! Building blocks of the network, expressed over tape variables.
//!
//! Tokens are columns. A batch of `B` samples over `N` turbines occupies
//! `B·N` columns with sample `b`, turbine `n` at column `b·N + n`. Inputs with
//! an extra axis (modes, weather channels) stack `S` such groups side by
//! side, slice `s` occupying columns `s·B·N .. (s+1)·B·N`.

use rand::Rng;

use super::config::{GateMode, ModelConfig};
use super::params::{AttentionParams, EncoderLayerParams, GateParams, Linear, Mlp, NormAffine};
use crate::scalar::Scalar;
use crate::tape::{concat_rows, Var};
use crate::tensor::TensorError;

type V<'t, T> = Var<'t, T>;

pub fn linear<'t, T: Scalar>(x: V<'t, T>, p: &Linear<V<'t, T>>) -> Result<V<'t, T>, TensorError> {
    p.weight.matmul(x)?.add_tiled(p.bias)
}

pub fn mlp<'t, T: Scalar>(x: V<'t, T>, p: &Mlp<V<'t, T>>) -> Result<V<'t, T>, TensorError> {
    linear(linear(x, &p.hidden)?.gelu(), &p.out)
}

/// Maps every length-`P` column (one per turbine and slice) to a token.
/// Serves the mode, weather and history embeddings alike.
pub fn embed_series<'t, T: Scalar>(series: V<'t, T>, p: &Mlp<V<'t, T>>) -> Result<V<'t, T>, TensorError> {
    mlp(series, p)
}

/// `dims×N` node embedding to `D×N`.
pub fn embed_spatial<'t, T: Scalar>(node: V<'t, T>, p: &Linear<V<'t, T>>) -> Result<V<'t, T>, TensorError> {
    linear(node, p)
}

/// Adds the spatial token of turbine `n` to every token of turbine `n`.
pub fn fuse<'t, T: Scalar>(spatial: V<'t, T>, tokens: V<'t, T>) -> Result<V<'t, T>, TensorError> {
    tokens.add_tiled(spatial)
}

/// Softmax-weighted combination of the slices of a stacked input.
pub fn context_reduce<'t, T: Scalar>(stacked: V<'t, T>, logits: V<'t, T>) -> Result<V<'t, T>, TensorError> {
    stacked.mix_blocks(logits.softmax(0)?)
}

pub struct AttentionOutput<'t, T> {
    /// `D×cols`
    pub output: V<'t, T>,
    /// Per head, `N×cols`: entry `(s, b·N + t)` is the weight of source
    /// turbine `s` for target `t` in sample `b`.
    pub weights: Vec<V<'t, T>>,
}

/// Unmasked multi-head attention among the turbines of each sample.
pub fn attention<'t, T: Scalar>(
    h: V<'t, T>,
    context: V<'t, T>,
    p: &AttentionParams<V<'t, T>>,
    num_heads: usize,
    num_turbines: usize,
) -> Result<AttentionOutput<'t, T>, TensorError> {
    let d = h.shape()[0];
    if num_heads == 0 || d % num_heads != 0 {
        return Err(TensorError::InvalidParameter {
            op: "attention",
            reason: format!("width {d} is not divisible by {num_heads} heads"),
        });
    }
    let width = d / num_heads;
    let joint = concat_rows(&[h, context])?;
    let q = linear(joint, &p.query)?.gelu();
    let k = linear(joint, &p.key)?.gelu();
    let v = linear(h, &p.value)?.gelu();
    let scale = T::one() / T::of(width as f64).sqrt();
    let mut heads = Vec::with_capacity(num_heads);
    let mut weights = Vec::with_capacity(num_heads);
    for head in 0..num_heads {
        let rows = head * width;
        let (qh, kh, vh) = (
            q.slice_rows(rows, width)?,
            k.slice_rows(rows, width)?,
            v.slice_rows(rows, width)?,
        );
        let alpha = qh.block_scores(kh, num_turbines, scale)?.softmax(0)?;
        heads.push(vh.block_mix(alpha, num_turbines)?);
        weights.push(alpha);
    }
    let output = if heads.len() == 1 { heads[0] } else { concat_rows(&heads)? };
    Ok(AttentionOutput { output, weights })
}

/// Gate values `ρ` for the two path outputs.
pub fn gate_weights<'t, T: Scalar>(
    frequency: V<'t, T>,
    feature: V<'t, T>,
    p: &GateParams<V<'t, T>>,
) -> Result<V<'t, T>, TensorError> {
    let logits = p.from_frequency.matmul(frequency)?.add(p.from_feature.matmul(feature)?)?;
    Ok(logits.add_tiled(p.bias)?.sigmoid())
}

/// `ρ⊙frequency + (1−ρ)⊙feature`.
pub fn cd_gate<'t, T: Scalar>(
    frequency: V<'t, T>,
    feature: V<'t, T>,
    p: &GateParams<V<'t, T>>,
) -> Result<V<'t, T>, TensorError> {
    gate_weights(frequency, feature, p)?.gate_mix(frequency, feature)
}

fn norm<'t, T: Scalar>(x: V<'t, T>, p: &NormAffine<V<'t, T>>) -> Result<V<'t, T>, TensorError> {
    x.layer_norm(p.gain, p.bias, 0)
}

/// One encoder layer over tokens `h` (`D×cols`) with stacked frequency and
/// feature inputs.
#[allow(clippy::too_many_arguments)]
pub fn encoder_layer<'t, T: Scalar, R: Rng + ?Sized>(
    h: V<'t, T>,
    freq_tokens: V<'t, T>,
    feature_tokens: V<'t, T>,
    p: &EncoderLayerParams<V<'t, T>>,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<V<'t, T>, TensorError> {
    let (k, n) = (cfg.num_heads, cfg.num_turbines);
    let frequency = || -> Result<V<'t, T>, TensorError> {
        let ctx = context_reduce(freq_tokens, p.frequency.mix_logits)?;
        Ok(attention(h, ctx, &p.frequency, k, n)?.output)
    };
    let feature = || -> Result<V<'t, T>, TensorError> {
        let ctx = context_reduce(feature_tokens, p.feature.mix_logits)?;
        Ok(attention(h, ctx, &p.feature, k, n)?.output)
    };
    let mixed = match cfg.gate {
        GateMode::Learned => cd_gate(frequency()?, feature()?, &p.gate)?,
        GateMode::ForceFrequency => frequency()?,
        GateMode::ForceFeature => feature()?,
    };
    let a1 = norm(h.add(mixed)?, &p.norm_mix)?;
    let f = mlp(a1, &p.ffn)?.dropout(cfg.dropout, training, rng)?;
    norm(a1.add(f)?, &p.norm_ffn)
}
