//! Lookup-table text encoder: embedding + learned positional rows, then a
//! position-mixing linear map. No external tokenizer; ids come from the
//! closed toy vocabulary.

use ndarray::ArrayD;

use super::{gaussian, Bound, ModelConfig};
use crate::rng::DetRng;
use crate::tape::optim::ParamSet;
use crate::tape::{Graph, NodeId};

pub fn init_params(cfg: &ModelConfig, params: &mut ParamSet, rng: &mut DetRng) {
    let v = crate::toyworld::vocab::size();
    let (l, d) = (cfg.text_len, cfg.dim);
    params.insert("txt.embed".into(), gaussian(rng, &[v, d]) * 0.25);
    params.insert("txt.pos".into(), gaussian(rng, &[l, d]) * 0.25);
    // start near identity so early training sees unmixed tokens
    let mut mix = ArrayD::zeros(ndarray::IxDyn(&[l, l]));
    for i in 0..l {
        mix[[i, i]] = 1.0;
    }
    params.insert("txt.mix".into(), mix + gaussian(rng, &[l, l]) * 0.02);
    params.insert("txt.null".into(), gaussian(rng, &[l, d]) * 0.25);
}

/// Embedding + positional rows, before position mixing. `[L, D]`.
pub fn pre_mix(_cfg: &ModelConfig, g: &mut Graph, bound: &Bound, ids: &[usize]) -> NodeId {
    let rows = g.embed(bound.id("txt.embed"), ids);
    g.add(rows, bound.id("txt.pos"))
}

/// Full text encoding: `mix @ (lookup + pos)`. `[L, D]`.
pub fn encode(cfg: &ModelConfig, g: &mut Graph, bound: &Bound, ids: &[usize]) -> NodeId {
    let pm = pre_mix(cfg, g, bound, ids);
    g.matmul(bound.id("txt.mix"), pm)
}
