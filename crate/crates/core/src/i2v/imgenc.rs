//! Semantic image encoder: a small strided conv stack producing a 2x2 grid
//! of D-dimensional tokens. Differentiable w.r.t. pixels (it is one of the
//! two attack surfaces).

use ndarray::ArrayD;

use super::{init_weight, Bound, ModelConfig};
use crate::rng::DetRng;
use crate::tape::optim::ParamSet;
use crate::tape::{Graph, NodeId};

const C1: usize = 8;
const C2: usize = 16;

/// Image tokens: one per cell of the final conv grid (canvas / 16 per side).
pub fn token_count(canvas: usize) -> usize {
    let side = (canvas / 16).max(1);
    side * side
}

pub fn init_params(cfg: &ModelConfig, params: &mut ParamSet, rng: &mut DetRng) {
    let cin = cfg.in_channels;
    let d = cfg.dim;
    let w = |rng: &mut DetRng, shape: &[usize]| {
        let fan: usize = shape[1..].iter().product();
        init_weight(rng, shape, fan)
    };
    params.insert("img.conv1.w".into(), w(rng, &[C1, cin, 1, 3, 3]));
    params.insert("img.conv1.b".into(), ArrayD::zeros(ndarray::IxDyn(&[C1])));
    params.insert("img.conv2.w".into(), w(rng, &[C2, C1, 1, 3, 3]));
    params.insert("img.conv2.b".into(), ArrayD::zeros(ndarray::IxDyn(&[C2])));
    params.insert("img.conv3.w".into(), w(rng, &[d, C2, 1, 3, 3]));
    params.insert("img.conv3.b".into(), ArrayD::zeros(ndarray::IxDyn(&[d])));
    params.insert("img.conv4.w".into(), w(rng, &[d, d, 1, 3, 3]));
    params.insert("img.conv4.b".into(), ArrayD::zeros(ndarray::IxDyn(&[d])));
}

/// `[C, H, W] -> [M, D]` with `M = 4` tokens.
pub fn encode(cfg: &ModelConfig, g: &mut Graph, bound: &Bound, image: NodeId) -> NodeId {
    let (c, h, w) = {
        let s = g.value(image).shape();
        (s[0], s[1], s[2])
    };
    let d = cfg.dim;
    // treat the image as a single-frame video so the conv3d kernels apply
    let x = g.reshape(image, &[c, 1, h, w]);
    let x = g.conv3d(x, bound.id("img.conv1.w"), (1, 2, 2));
    let x = g.add_chan_bias(x, bound.id("img.conv1.b"));
    let x = g.silu(x);
    let x = g.conv3d(x, bound.id("img.conv2.w"), (1, 2, 2));
    let x = g.add_chan_bias(x, bound.id("img.conv2.b"));
    let x = g.silu(x);
    let x = g.conv3d(x, bound.id("img.conv3.w"), (1, 2, 2));
    let x = g.add_chan_bias(x, bound.id("img.conv3.b"));
    let x = g.silu(x);
    let x = g.conv3d(x, bound.id("img.conv4.w"), (1, 2, 2));
    let x = g.add_chan_bias(x, bound.id("img.conv4.b"));
    // [D, 1, s, s] -> [D, M] -> [M, D]
    let side = g.value(x).shape()[2];
    let x = g.reshape(x, &[d, side * side]);
    g.transpose2d(x)
}
