//! Causal 3-D video autoencoder.
//!
//! The encoder is bias-free with zero-preserving activations (SiLU), so an
//! all-zero frame sequence encodes to exactly zero latents. That gives the
//! zero-padded conditioning input its characteristic low-energy tail: later
//! slices only see the first frame through narrow causal leak paths.
//!
//! Temporal compression: two stride-2 causal conv stages (`T' = 1 + (T-1)/4`
//! at the default stride 4), plus a stride-1 causal temporal mixer at the
//! latent level that widens each slice's receptive field into the past
//! without breaking causality.

use ndarray::ArrayD;

use super::{init_weight, Bound, ModelConfig};
use crate::rng::DetRng;
use crate::tape::optim::ParamSet;
use crate::tape::{Graph, NodeId};

const ENC_C1: usize = 8;
const ENC_C2: usize = 16;
const ENC_C3: usize = 24;
const DEC_C1: usize = 24;
const DEC_C2: usize = 12;
const DEC_C3: usize = 8;

fn stage_strides(temporal_stride: usize) -> (usize, usize) {
    match temporal_stride {
        4 => (2, 2),
        2 => (2, 1),
        other => panic!("unsupported temporal stride {other}"),
    }
}

pub fn init_params(cfg: &ModelConfig, params: &mut ParamSet, rng: &mut DetRng) {
    let cin = cfg.in_channels;
    let cl = cfg.latent_channels;
    let w = |rng: &mut DetRng, shape: &[usize]| {
        let fan: usize = shape[1..].iter().product();
        init_weight(rng, shape, fan)
    };
    params.insert("enc.conv1.w".into(), w(rng, &[ENC_C1, cin, 1, 3, 3]));
    params.insert("enc.conv2.w".into(), w(rng, &[ENC_C2, ENC_C1, 3, 3, 3]));
    params.insert("enc.conv3.w".into(), w(rng, &[ENC_C3, ENC_C2, 3, 3, 3]));
    params.insert("enc.mix.w".into(), w(rng, &[ENC_C3, ENC_C3, 3, 1, 1]));
    params.insert("enc.proj.w".into(), w(rng, &[cl, ENC_C3, 1, 1, 1]));

    params.insert("dec.proj.w".into(), w(rng, &[DEC_C1, cl, 1, 1, 1]));
    params.insert("dec.proj.b".into(), ArrayD::zeros(ndarray::IxDyn(&[DEC_C1])));
    params.insert("dec.conv1.w".into(), w(rng, &[DEC_C1, DEC_C1, 3, 3, 3]));
    params.insert("dec.conv1.b".into(), ArrayD::zeros(ndarray::IxDyn(&[DEC_C1])));
    params.insert("dec.conv2.w".into(), w(rng, &[DEC_C2, DEC_C1, 3, 3, 3]));
    params.insert("dec.conv2.b".into(), ArrayD::zeros(ndarray::IxDyn(&[DEC_C2])));
    params.insert("dec.conv3.w".into(), w(rng, &[DEC_C3, DEC_C2, 3, 3, 3]));
    params.insert("dec.conv3.b".into(), ArrayD::zeros(ndarray::IxDyn(&[DEC_C3])));
    params.insert("dec.out.w".into(), w(rng, &[cin, DEC_C3, 1, 3, 3]));
    params.insert("dec.out.b".into(), ArrayD::zeros(ndarray::IxDyn(&[cin])));
}

/// `[C, T, H, W] -> [C', T', H/4, W/4]`.
pub fn encode(cfg: &ModelConfig, g: &mut Graph, bound: &Bound, video: NodeId) -> NodeId {
    let (st2, st3) = stage_strides(cfg.temporal_stride);
    let h = g.conv3d(video, bound.id("enc.conv1.w"), (1, 1, 1));
    let h = g.silu(h);
    let h = g.conv3d(h, bound.id("enc.conv2.w"), (st2, 2, 2));
    let h = g.silu(h);
    let h = g.conv3d(h, bound.id("enc.conv3.w"), (st3, 2, 2));
    let h = g.silu(h);
    let h = g.conv3d(h, bound.id("enc.mix.w"), (1, 1, 1));
    let h = g.silu(h);
    g.conv3d(h, bound.id("enc.proj.w"), (1, 1, 1))
}

/// `[C', T', H', W'] -> [C, T, H, W]` in `[0, 1]` (sigmoid squashed).
pub fn decode(cfg: &ModelConfig, g: &mut Graph, bound: &Bound, latent: NodeId) -> NodeId {
    let (rep2, rep3) = match cfg.temporal_stride {
        4 => (true, true),
        2 => (false, true),
        other => panic!("unsupported temporal stride {other}"),
    };
    let h = g.conv3d(latent, bound.id("dec.proj.w"), (1, 1, 1));
    let h = g.add_chan_bias(h, bound.id("dec.proj.b"));
    let h = g.silu(h);
    let h = g.conv3d(h, bound.id("dec.conv1.w"), (1, 1, 1));
    let h = g.add_chan_bias(h, bound.id("dec.conv1.b"));
    let h = g.silu(h);

    let h = if rep2 { g.repeat_causal_temporal(h) } else { h };
    let h = g.upsample2x(h);
    let h = g.conv3d(h, bound.id("dec.conv2.w"), (1, 1, 1));
    let h = g.add_chan_bias(h, bound.id("dec.conv2.b"));
    let h = g.silu(h);

    let h = if rep3 { g.repeat_causal_temporal(h) } else { h };
    let h = g.upsample2x(h);
    let h = g.conv3d(h, bound.id("dec.conv3.w"), (1, 1, 1));
    let h = g.add_chan_bias(h, bound.id("dec.conv3.b"));
    let h = g.silu(h);

    let h = g.conv3d(h, bound.id("dec.out.w"), (1, 1, 1));
    let h = g.add_chan_bias(h, bound.id("dec.out.b"));
    g.sigmoid_op(h)
}
