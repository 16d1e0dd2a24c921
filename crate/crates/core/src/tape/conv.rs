//! Causal 3-D convolution kernels (forward + adjoint).
//!
//! Layout: input `[C, T, H, W]`, kernel `[O, C, kt, kh, kw]`, output
//! `[O, T', H', W']`. Temporal padding is causal (left-only, `kt - 1` zeros),
//! so output slot `t` depends only on input frames `<= t * stride_t`. Spatial
//! padding is symmetric for odd kernels.
//!
//! Inner loops precompute the valid output ranges per kernel tap, so the
//! unit-stride case reduces to contiguous axpy/dot passes.

use ndarray::{ArrayD, IxDyn};

use super::dims4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    pub st: usize,
    pub sh: usize,
    pub sw: usize,
    pub t_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub t_out: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl Conv3dSpec {
    pub fn infer(x_shape: &[usize], k_shape: &[usize], stride: (usize, usize, usize)) -> Self {
        let (c, t, h, w) = dims4(x_shape);
        assert_eq!(k_shape.len(), 5, "conv3d kernel must be 5-d");
        let (o, kc, kt, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3], k_shape[4]);
        assert_eq!(kc, c, "conv3d: kernel c_in mismatch");
        assert!(kh % 2 == 1 && kw % 2 == 1, "conv3d: spatial kernels must be odd");
        let (st, sh, sw) = stride;
        let ph = (kh - 1) / 2;
        let pw = (kw - 1) / 2;
        // causal: temporal left pad kt-1, no right pad
        let t_out = (t - 1) / st + 1;
        let h_out = (h + 2 * ph - kh) / sh + 1;
        let w_out = (w + 2 * pw - kw) / sw + 1;
        Self {
            c_in: c,
            c_out: o,
            kt,
            kh,
            kw,
            st,
            sh,
            sw,
            t_in: t,
            h_in: h,
            w_in: w,
            t_out,
            h_out,
            w_out,
        }
    }
}

/// Valid output range `[lo, hi)` along one spatial axis for kernel tap `k`:
/// input index `o * stride - pad + k` must land in `[0, extent)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, pad: isize, tap: usize) -> (usize, usize) {
    let off = tap as isize - pad; // input index = o * stride + off
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let max_in = in_len as isize - 1 - off;
    if max_in < 0 {
        return (0, 0);
    }
    let hi = (max_in as usize / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

pub fn conv3d_forward(x: &ArrayD<f64>, k: &ArrayD<f64>, s: &Conv3dSpec) -> ArrayD<f64> {
    let xs = x.as_slice().expect("conv3d: x not contiguous");
    let ks = k.as_slice().expect("conv3d: kernel not contiguous");
    let mut out = vec![0.0f64; s.c_out * s.t_out * s.h_out * s.w_out];

    let (ph, pw) = (((s.kh - 1) / 2) as isize, ((s.kw - 1) / 2) as isize);
    let x_ts = s.h_in * s.w_in;
    let x_cs = s.t_in * x_ts;
    let o_ts = s.h_out * s.w_out;
    let o_cs = s.t_out * o_ts;
    let k_kjs = s.kh * s.kw;
    let k_kis = s.kt * k_kjs;
    let k_cs = s.c_in * k_kis;

    for o in 0..s.c_out {
        for to in 0..s.t_out {
            for i in 0..s.kt {
                let ti = (to * s.st) as isize - (s.kt - 1) as isize + i as isize;
                if ti < 0 || ti >= s.t_in as isize {
                    continue;
                }
                let ti = ti as usize;
                for c in 0..s.c_in {
                    let xbase = c * x_cs + ti * x_ts;
                    let kbase = o * k_cs + c * k_kis + i * k_kjs;
                    for j in 0..s.kh {
                        let (ylo, yhi) = valid_range(s.h_out, s.h_in, s.sh, ph, j);
                        for l in 0..s.kw {
                            let kv = ks[kbase + j * s.kw + l];
                            if kv == 0.0 {
                                continue;
                            }
                            let (xlo, xhi) = valid_range(s.w_out, s.w_in, s.sw, pw, l);
                            if xlo >= xhi {
                                continue;
                            }
                            let woff = l as isize - pw;
                            for yo in ylo..yhi {
                                let yi = (yo * s.sh) as isize - ph + j as isize;
                                let xrow = (xbase + yi as usize * s.w_in) as isize;
                                let orow = o * o_cs + to * o_ts + yo * s.w_out;
                                if s.sw == 1 {
                                    let src = &xs[(xrow + woff + xlo as isize) as usize
                                        ..(xrow + woff + xhi as isize) as usize];
                                    let dst = &mut out[orow + xlo..orow + xhi];
                                    for (d, &v) in dst.iter_mut().zip(src) {
                                        *d += kv * v;
                                    }
                                } else {
                                    for xo in xlo..xhi {
                                        let xi = (xo * s.sw) as isize + woff;
                                        out[orow + xo] += kv * xs[(xrow + xi) as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[s.c_out, s.t_out, s.h_out, s.w_out]), out).unwrap()
}

pub fn conv3d_backward(
    x: &ArrayD<f64>,
    k: &ArrayD<f64>,
    gout: &ArrayD<f64>,
    s: &Conv3dSpec,
    need_gx: bool,
    need_gk: bool,
) -> (Option<ArrayD<f64>>, Option<ArrayD<f64>>) {
    let xs = x.as_slice().expect("conv3d: x not contiguous");
    let ks = k.as_slice().expect("conv3d: kernel not contiguous");
    let gs = gout.as_slice().expect("conv3d: gout not contiguous");

    let mut gx = if need_gx { vec![0.0f64; xs.len()] } else { Vec::new() };
    let mut gk = if need_gk { vec![0.0f64; ks.len()] } else { Vec::new() };

    let (ph, pw) = (((s.kh - 1) / 2) as isize, ((s.kw - 1) / 2) as isize);
    let x_ts = s.h_in * s.w_in;
    let x_cs = s.t_in * x_ts;
    let o_ts = s.h_out * s.w_out;
    let o_cs = s.t_out * o_ts;
    let k_kjs = s.kh * s.kw;
    let k_kis = s.kt * k_kjs;
    let k_cs = s.c_in * k_kis;

    for o in 0..s.c_out {
        for to in 0..s.t_out {
            for i in 0..s.kt {
                let ti = (to * s.st) as isize - (s.kt - 1) as isize + i as isize;
                if ti < 0 || ti >= s.t_in as isize {
                    continue;
                }
                let ti = ti as usize;
                for c in 0..s.c_in {
                    let xbase = c * x_cs + ti * x_ts;
                    let kbase = o * k_cs + c * k_kis + i * k_kjs;
                    for j in 0..s.kh {
                        let (ylo, yhi) = valid_range(s.h_out, s.h_in, s.sh, ph, j);
                        for l in 0..s.kw {
                            let kidx = kbase + j * s.kw + l;
                            let kv = ks[kidx];
                            let mut kacc = 0.0f64;
                            let (xlo, xhi) = valid_range(s.w_out, s.w_in, s.sw, pw, l);
                            if xlo >= xhi {
                                continue;
                            }
                            let woff = l as isize - pw;
                            for yo in ylo..yhi {
                                let yi = (yo * s.sh) as isize - ph + j as isize;
                                let xrow = (xbase + yi as usize * s.w_in) as isize;
                                let orow = o * o_cs + to * o_ts + yo * s.w_out;
                                if s.sw == 1 {
                                    let xr = (xrow + woff + xlo as isize) as usize;
                                    let xe = (xrow + woff + xhi as isize) as usize;
                                    let grow = &gs[orow + xlo..orow + xhi];
                                    if need_gx {
                                        let dst = &mut gx[xr..xe];
                                        for (d, &gv) in dst.iter_mut().zip(grow) {
                                            *d += kv * gv;
                                        }
                                    }
                                    if need_gk {
                                        let src = &xs[xr..xe];
                                        for (&gv, &xv) in grow.iter().zip(src) {
                                            kacc += gv * xv;
                                        }
                                    }
                                } else {
                                    for xo in xlo..xhi {
                                        let xi = (xrow + (xo * s.sw) as isize + woff) as usize;
                                        let gv = gs[orow + xo];
                                        if need_gx {
                                            gx[xi] += kv * gv;
                                        }
                                        if need_gk {
                                            kacc += gv * xs[xi];
                                        }
                                    }
                                }
                            }
                            if need_gk {
                                gk[kidx] += kacc;
                            }
                        }
                    }
                }
            }
        }
    }

    let gx = need_gx
        .then(|| ArrayD::from_shape_vec(IxDyn(&[s.c_in, s.t_in, s.h_in, s.w_in]), gx).unwrap());
    let gk = need_gk.then(|| {
        ArrayD::from_shape_vec(IxDyn(&[s.c_out, s.c_in, s.kt, s.kh, s.kw]), gk).unwrap()
    });
    (gx, gk)
}
