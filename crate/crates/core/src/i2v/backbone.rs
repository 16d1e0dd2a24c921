//! DiT-style denoising backbone.
//!
//! Tokens are per-slice spatial positions of the flow latent, channel-
//! concatenated with the conditioning latent. Each block applies
//! full self-attention, additive cross-attention (the text-conditioned and
//! image-conditioned attention responses are computed over their token sets
//! separately and summed), and an MLP, all pre-normalized with RMSNorm.
//!
//! Key/value projections carry no bias, so attention over all-zero
//! conditioning tokens contributes exactly zero.

use ndarray::ArrayD;

use super::{gaussian, init_weight, Bound, ModelConfig};
use crate::rng::DetRng;
use crate::tape::optim::ParamSet;
use crate::tape::{Graph, NodeId};

const NORM_EPS: f64 = 1e-6;

/// Captured cross-attention values for one block (additive-form checks).
#[derive(Debug, Clone)]
pub struct CrossAttnTrace {
    /// Normalized query input the block saw, `[N, D]`.
    pub query_input: ArrayD<f64>,
    /// Text-conditioned attention response, `[N, D]`.
    pub f_text: ArrayD<f64>,
    /// Image-conditioned attention response, `[N, D]`.
    pub f_img: ArrayD<f64>,
    /// The combined response actually added to the residual stream.
    pub f_out: ArrayD<f64>,
}

pub fn init_params(cfg: &ModelConfig, params: &mut ParamSet, rng: &mut DetRng) {
    let d = cfg.dim;
    let cl = cfg.latent_channels;
    let toks = cfg.tokens_per_slice();
    let tmax = cfg.t_latent(cfg.frames);
    let lin = |rng: &mut DetRng, i: usize, o: usize| init_weight(rng, &[i, o], i);
    let zeros = |shape: &[usize]| ArrayD::<f64>::zeros(ndarray::IxDyn(shape));

    params.insert("bb.embed.w".into(), lin(rng, 2 * cl, d));
    params.insert("bb.embed.b".into(), zeros(&[d]));
    params.insert("bb.pos_spatial".into(), gaussian(rng, &[toks, d]) * 0.1);
    params.insert("bb.pos_temporal".into(), gaussian(rng, &[tmax, d]) * 0.1);
    params.insert("bb.time.w1".into(), lin(rng, d, d));
    params.insert("bb.time.b1".into(), zeros(&[d]));
    params.insert("bb.time.w2".into(), lin(rng, d, d));
    params.insert("bb.time.b2".into(), zeros(&[d]));

    for b in 0..cfg.depth {
        let p = |suffix: &str| format!("bb.blk{b}.{suffix}");
        params.insert(p("norm1.g"), ArrayD::from_elem(ndarray::IxDyn(&[d]), 1.0));
        params.insert(p("attn.wq"), lin(rng, d, d));
        params.insert(p("attn.wk"), lin(rng, d, d));
        params.insert(p("attn.wv"), lin(rng, d, d));
        params.insert(p("attn.wo"), lin(rng, d, d) * 0.5);
        params.insert(p("norm2.g"), ArrayD::from_elem(ndarray::IxDyn(&[d]), 1.0));
        params.insert(p("cross.wq"), lin(rng, d, d));
        params.insert(p("cross.txt.wk"), lin(rng, d, d));
        params.insert(p("cross.txt.wv"), lin(rng, d, d));
        params.insert(p("cross.txt.wo"), lin(rng, d, d));
        params.insert(p("cross.img.wk"), lin(rng, d, d));
        params.insert(p("cross.img.wv"), lin(rng, d, d));
        params.insert(p("cross.img.wo"), lin(rng, d, d));
        params.insert(p("norm3.g"), ArrayD::from_elem(ndarray::IxDyn(&[d]), 1.0));
        params.insert(p("mlp.w1"), lin(rng, d, cfg.mlp_hidden));
        params.insert(p("mlp.b1"), zeros(&[cfg.mlp_hidden]));
        params.insert(p("mlp.w2"), lin(rng, cfg.mlp_hidden, d) * 0.5);
        params.insert(p("mlp.b2"), zeros(&[d]));
    }

    params.insert("bb.out.norm.g".into(), ArrayD::from_elem(ndarray::IxDyn(&[d]), 1.0));
    // zero-initialized head: the velocity field starts at zero
    params.insert("bb.out.w".into(), zeros(&[d, cl]));
    params.insert("bb.out.b".into(), zeros(&[cl]));
}

fn time_features(cfg: &ModelConfig, tau: f64) -> ArrayD<f64> {
    let d = cfg.dim;
    let half = d / 2;
    let mut v = vec![0.0f64; d];
    // log-spaced angular frequencies over [1, 32]: tau lives in [0, 1], so
    // the fastest component completes ~5 cycles and nearby taus stay close
    for i in 0..half {
        let freq = (32.0f64.ln() * i as f64 / (half.max(2) - 1) as f64).exp();
        let arg = tau * freq;
        v[2 * i] = arg.sin();
        v[2 * i + 1] = arg.cos();
    }
    ArrayD::from_shape_vec(ndarray::IxDyn(&[1, d]), v).unwrap()
}

fn multi_head_self_attention(
    cfg: &ModelConfig,
    g: &mut Graph,
    bound: &Bound,
    block: usize,
    x: NodeId,
) -> NodeId {
    let d = cfg.dim;
    let dh = d / cfg.heads;
    let p = |suffix: &str| format!("bb.blk{block}.{suffix}");
    let q = g.matmul(x, bound.id(&p("attn.wq")));
    let k = g.matmul(x, bound.id(&p("attn.wk")));
    let v = g.matmul(x, bound.id(&p("attn.wv")));
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = g.slice_axis(q, 1, h * dh, dh);
        let kh = g.slice_axis(k, 1, h * dh, dh);
        let vh = g.slice_axis(v, 1, h * dh, dh);
        let kt = g.transpose2d(kh);
        let scores = g.matmul(qh, kt);
        let scaled = g.mul_scalar(scores, 1.0 / (dh as f64).sqrt());
        let probs = g.softmax(scaled);
        heads.push(g.matmul(probs, vh));
    }
    let cat = g.concat(&heads, 1);
    g.matmul(cat, bound.id(&p("attn.wo")))
}

/// Single-stream cross-attention response over a token set.
fn stream_attention(
    cfg: &ModelConfig,
    g: &mut Graph,
    q: NodeId,
    tokens: NodeId,
    wk: NodeId,
    wv: NodeId,
    wo: NodeId,
) -> NodeId {
    let d = cfg.dim;
    let k = g.matmul(tokens, wk);
    let v = g.matmul(tokens, wv);
    let kt = g.transpose2d(k);
    let scores = g.matmul(q, kt);
    let scaled = g.mul_scalar(scores, 1.0 / (d as f64).sqrt());
    let probs = g.softmax(scaled);
    let out = g.matmul(probs, v);
    g.matmul(out, wo)
}

/// The backbone forward pass.
///
/// `x_flow`, `cond_flow`: `[C', T', H', W']` flow-space latents.
/// `e_img`: `[M, D]` image tokens; `e_txt`: `[L, D]` text tokens.
///
/// With `k_limit = Some(k)` returns the hidden state after block `k` as
/// `[T', tokens, D]`; otherwise applies all blocks plus the output head and
/// returns the velocity `[C', T', H', W']`.
#[allow(clippy::too_many_arguments)]
pub fn forward(
    cfg: &ModelConfig,
    g: &mut Graph,
    bound: &Bound,
    x_flow: NodeId,
    cond_flow: NodeId,
    e_img: NodeId,
    e_txt: NodeId,
    tau: f64,
    k_limit: Option<usize>,
    mut trace: Option<&mut Vec<CrossAttnTrace>>,
) -> NodeId {
    let d = cfg.dim;
    let cl = cfg.latent_channels;
    let (t_lat, side) = {
        let s = g.value(x_flow).shape();
        assert_eq!(s[0], cl, "x_flow channel mismatch");
        (s[1], s[2])
    };
    let toks = side * side;
    let n = t_lat * toks;

    // pack [x ; cond] channels into per-position tokens
    let packed = g.concat(&[x_flow, cond_flow], 0);
    let thwc = g.permute(packed, &[1, 2, 3, 0]);
    let flat = g.reshape(thwc, &[n, 2 * cl]);
    let emb = g.matmul(flat, bound.id("bb.embed.w"));
    let mut h = g.add_bias(emb, bound.id("bb.embed.b"));

    // factorized positions: spatial id + temporal id
    let spatial_ids: Vec<usize> = (0..n).map(|i| i % toks).collect();
    let temporal_ids: Vec<usize> = (0..n).map(|i| i / toks).collect();
    let ps = g.embed(bound.id("bb.pos_spatial"), &spatial_ids);
    let pt = g.embed(bound.id("bb.pos_temporal"), &temporal_ids);
    h = g.add(h, ps);
    h = g.add(h, pt);

    // time conditioning, added to every token
    let tf = g.constant(time_features(cfg, tau));
    let t1 = g.matmul(tf, bound.id("bb.time.w1"));
    let t1 = g.add_bias(t1, bound.id("bb.time.b1"));
    let t1 = g.silu(t1);
    let t2 = g.matmul(t1, bound.id("bb.time.w2"));
    let t2 = g.add_bias(t2, bound.id("bb.time.b2"));
    let temb = g.reshape(t2, &[d]);
    h = g.add_bias(h, temb);

    let depth = k_limit.unwrap_or(cfg.depth);
    assert!(depth >= 1 && depth <= cfg.depth, "prefix depth out of range");

    for b in 0..depth {
        let p = |suffix: &str| format!("bb.blk{b}.{suffix}");

        let n1 = g.rms_norm(h, NORM_EPS);
        let n1 = g.mul_bias(n1, bound.id(&p("norm1.g")));
        let sa = multi_head_self_attention(cfg, g, bound, b, n1);
        h = g.add(h, sa);

        let n2 = g.rms_norm(h, NORM_EPS);
        let n2 = g.mul_bias(n2, bound.id(&p("norm2.g")));
        let q = g.matmul(n2, bound.id(&p("cross.wq")));
        let f_text = stream_attention(
            cfg,
            g,
            q,
            e_txt,
            bound.id(&p("cross.txt.wk")),
            bound.id(&p("cross.txt.wv")),
            bound.id(&p("cross.txt.wo")),
        );
        let f_img = stream_attention(
            cfg,
            g,
            q,
            e_img,
            bound.id(&p("cross.img.wk")),
            bound.id(&p("cross.img.wv")),
            bound.id(&p("cross.img.wo")),
        );
        let f_out = g.add(f_text, f_img);
        if let Some(traces) = trace.as_deref_mut() {
            traces.push(CrossAttnTrace {
                query_input: g.value(n2).clone(),
                f_text: g.value(f_text).clone(),
                f_img: g.value(f_img).clone(),
                f_out: g.value(f_out).clone(),
            });
        }
        h = g.add(h, f_out);

        let n3 = g.rms_norm(h, NORM_EPS);
        let n3 = g.mul_bias(n3, bound.id(&p("norm3.g")));
        let m1 = g.matmul(n3, bound.id(&p("mlp.w1")));
        let m1 = g.add_bias(m1, bound.id(&p("mlp.b1")));
        let m1 = g.silu(m1);
        let m2 = g.matmul(m1, bound.id(&p("mlp.w2")));
        let m2 = g.add_bias(m2, bound.id(&p("mlp.b2")));
        h = g.add(h, m2);
    }

    if k_limit.is_some() {
        return g.reshape(h, &[t_lat, toks, d]);
    }

    let on = g.rms_norm(h, NORM_EPS);
    let on = g.mul_bias(on, bound.id("bb.out.norm.g"));
    let out = g.matmul(on, bound.id("bb.out.w"));
    let out = g.add_bias(out, bound.id("bb.out.b"));
    let grid = g.reshape(out, &[t_lat, side, side, cl]);
    g.permute(grid, &[3, 0, 1, 2])
}

/// Recompute one stream's attention response from a recorded query input
/// (test support for the additive-conditioning checks).
pub fn stream_attention_host(
    cfg: &ModelConfig,
    model: &super::I2vModel,
    block: usize,
    query_input: &ArrayD<f64>,
    tokens: &ArrayD<f64>,
    stream: &str,
) -> ArrayD<f64> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let p = |suffix: &str| format!("bb.blk{block}.cross.{suffix}");
    let qin = g.constant(query_input.clone());
    let tok = g.constant(tokens.clone());
    let q = g.matmul(qin, bound.id(&format!("bb.blk{block}.cross.wq")));
    let out = stream_attention(
        cfg,
        &mut g,
        q,
        tok,
        bound.id(&p(&format!("{stream}.wk"))),
        bound.id(&p(&format!("{stream}.wv"))),
        bound.id(&p(&format!("{stream}.wo"))),
    );
    g.value(out).clone()
}
