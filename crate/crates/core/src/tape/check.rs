//! Finite-difference gradient checking against the tape's analytic adjoints.
//!
//! `f` is evaluated as a black box: central differences
//! `(f(x + eps) - f(x - eps)) / (2 eps)` per probed coordinate.

use ndarray::ArrayD;

/// Central-difference partial derivative of `f` along coordinate `idx` of `x`.
pub fn central_diff<F>(f: &F, x: &ArrayD<f64>, idx: usize, eps: f64) -> f64
where
    F: Fn(&ArrayD<f64>) -> f64,
{
    let mut plus = x.clone();
    let mut minus = x.clone();
    plus.as_slice_mut().unwrap()[idx] += eps;
    minus.as_slice_mut().unwrap()[idx] -= eps;
    (f(&plus) - f(&minus)) / (2.0 * eps)
}

/// Relative error between an analytic and a numeric derivative, with an
/// absolute floor so near-zero pairs compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Check analytic gradients of `f` at the probed coordinates of `x`.
/// Returns the worst relative error observed.
pub fn check_grad_at<F>(
    f: &F,
    x: &ArrayD<f64>,
    analytic: &ArrayD<f64>,
    probe: &[usize],
    eps: f64,
) -> f64
where
    F: Fn(&ArrayD<f64>) -> f64,
{
    assert_eq!(x.shape(), analytic.shape(), "gradient shape mismatch");
    let a = analytic.as_slice().unwrap();
    let mut worst = 0.0f64;
    for &idx in probe {
        let num = central_diff(f, x, idx, eps);
        worst = worst.max(rel_err(a[idx], num));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Graph;
    use ndarray::IxDyn;

    fn probe_all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn silu_rmsnorm_softmax_chain_matches_fd() {
        let x0 = ArrayD::from_shape_fn(IxDyn(&[3, 4]), |ix| {
            0.3 * (ix[0] as f64 - 1.0) + 0.17 * ix[1] as f64 - 0.4
        });
        let f = |x: &ArrayD<f64>| {
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let a = g.silu(xi);
            let b = g.rms_norm(a, 1e-6);
            let c = g.softmax(b);
            let d = g.square(c);
            let s = g.sum(d);
            g.scalar(s)
        };
        let mut g = Graph::new();
        let xi = g.input(x0.clone());
        let a = g.silu(xi);
        let b = g.rms_norm(a, 1e-6);
        let c = g.softmax(b);
        let d = g.square(c);
        let s = g.sum(d);
        let grads = g.backward(s);
        let ga = grads.get(xi).unwrap();
        let worst = check_grad_at(&f, &x0, ga, &probe_all(12), 1e-5);
        assert!(worst < 1e-6, "worst rel err {worst}");
    }

    #[test]
    fn conv3d_matches_fd_for_input_and_kernel() {
        let x0 = ArrayD::from_shape_fn(IxDyn(&[2, 5, 4, 4]), |ix| {
            ((ix[0] * 31 + ix[1] * 7 + ix[2] * 3 + ix[3]) % 11) as f64 * 0.1 - 0.5
        });
        let k0 = ArrayD::from_shape_fn(IxDyn(&[3, 2, 3, 3, 3]), |ix| {
            ((ix[0] * 5 + ix[1] * 13 + ix[2] * 3 + ix[3] * 2 + ix[4]) % 7) as f64 * 0.15 - 0.4
        });

        let run = |x: &ArrayD<f64>, k: &ArrayD<f64>| {
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let ki = g.input(k.clone());
            let y = g.conv3d(xi, ki, (2, 2, 2));
            let sq = g.square(y);
            let s = g.sum(sq);
            (g, xi, ki, s)
        };

        let (mut g, xi, ki, s) = run(&x0, &k0);
        let grads = g.backward(s);
        let gx = grads.get(xi).unwrap().clone();
        let gk = grads.get(ki).unwrap().clone();

        let fx = |x: &ArrayD<f64>| {
            let (g, _, _, s) = run(x, &k0);
            g.scalar(s)
        };
        let probe: Vec<usize> = (0..x0.len()).step_by(17).collect();
        let worst = check_grad_at(&fx, &x0, &gx, &probe, 1e-5);
        assert!(worst < 1e-6, "input grad worst rel err {worst}");

        let fk = |k: &ArrayD<f64>| {
            let (g, _, _, s) = run(&x0, k);
            g.scalar(s)
        };
        let probe: Vec<usize> = (0..k0.len()).step_by(13).collect();
        let worst = check_grad_at(&fk, &k0, &gk, &probe, 1e-5);
        assert!(worst < 1e-6, "kernel grad worst rel err {worst}");
    }

    #[test]
    fn structural_ops_match_fd() {
        // slice + concat + transpose + matmul + bias + embed mix
        let x0 = ArrayD::from_shape_fn(IxDyn(&[4, 6]), |ix| {
            (ix[0] as f64 * 0.7 - ix[1] as f64 * 0.3).sin()
        });
        let f = |x: &ArrayD<f64>| {
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let left = g.slice_axis(xi, 1, 0, 3);
            let right = g.slice_axis(xi, 1, 3, 3);
            let cat = g.concat(&[right, left], 1);
            let t = g.transpose2d(cat);
            let prod = g.matmul(cat, t);
            let r = g.reshape(prod, &[16]);
            let n = g.l2_norm(r);
            g.scalar(n)
        };
        let mut g = Graph::new();
        let xi = g.input(x0.clone());
        let left = g.slice_axis(xi, 1, 0, 3);
        let right = g.slice_axis(xi, 1, 3, 3);
        let cat = g.concat(&[right, left], 1);
        let t = g.transpose2d(cat);
        let prod = g.matmul(cat, t);
        let r = g.reshape(prod, &[16]);
        let n = g.l2_norm(r);
        let grads = g.backward(n);
        let gx = grads.get(xi).unwrap().clone();
        let worst = check_grad_at(&f, &x0, &gx, &probe_all(24), 1e-5);
        assert!(worst < 1e-6, "worst rel err {worst}");
    }

    #[test]
    fn permute_matches_fd() {
        let x0 = ArrayD::from_shape_fn(IxDyn(&[2, 3, 4]), |ix| {
            (ix[0] as f64 - ix[1] as f64 * 0.5 + ix[2] as f64 * 0.25).cos()
        });
        let f = |x: &ArrayD<f64>| {
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let p = g.permute(xi, &[2, 0, 1]);
            let r = g.reshape(p, &[8, 3]);
            let q = g.square(r);
            let s = g.sum(q);
            g.scalar(s)
        };
        let mut g = Graph::new();
        let xi = g.input(x0.clone());
        let p = g.permute(xi, &[2, 0, 1]);
        let r = g.reshape(p, &[8, 3]);
        let q = g.square(r);
        let s = g.sum(q);
        let grads = g.backward(s);
        let gx = grads.get(xi).unwrap().clone();
        let worst = check_grad_at(&f, &x0, &gx, &probe_all(24), 1e-5);
        assert!(worst < 1e-6, "worst rel err {worst}");
    }

    #[test]
    fn upsample_and_temporal_repeat_match_fd() {
        let x0 = ArrayD::from_shape_fn(IxDyn(&[2, 3, 2, 2]), |ix| {
            (ix[0] + ix[1] * 2 + ix[2] * 5 + ix[3]) as f64 * 0.21 - 0.6
        });
        let f = |x: &ArrayD<f64>| {
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let a = g.repeat_causal_temporal(xi);
            let b = g.upsample2x(a);
            let c = g.silu(b);
            let s = g.l2_norm(c);
            g.scalar(s)
        };
        let mut g = Graph::new();
        let xi = g.input(x0.clone());
        let a = g.repeat_causal_temporal(xi);
        let b = g.upsample2x(a);
        let c = g.silu(b);
        let s = g.l2_norm(c);
        let grads = g.backward(s);
        let gx = grads.get(xi).unwrap().clone();
        let worst = check_grad_at(&f, &x0, &gx, &probe_all(x0.len()), 1e-5);
        assert!(worst < 1e-6, "worst rel err {worst}");
    }
}
