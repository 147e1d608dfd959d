//! Straight-line reference implementations used only for verification.
//!
//! Nothing here calls into the production kernels; every routine is a
//! direct loop over its definition, in 64-bit.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of comparing a production result against an oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub op: String,
    pub max_abs: f64,
    pub max_rel: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    /// Element-wise comparison; `max_rel` is `max|a-b| / max(max|b|, tiny)`.
    pub fn compare(op: impl Into<String>, got: &[f64], want: &[f64], tolerance: f64) -> Self {
        let mut max_abs = 0.0f64;
        let mut scale = 0.0f64;
        let mut bad = got.len() != want.len();
        for (&a, &b) in got.iter().zip(want) {
            if !a.is_finite() || !b.is_finite() {
                bad = true;
            }
            max_abs = max_abs.max((a - b).abs());
            scale = scale.max(b.abs());
        }
        let max_rel = if scale > 0.0 { max_abs / scale } else { max_abs };
        let pass = !bad && max_rel <= tolerance;
        OracleReport { op: op.into(), max_abs, max_rel, tolerance, pass }
    }

    /// Like [`OracleReport::compare`] but judged on the absolute error.
    pub fn compare_abs(op: impl Into<String>, got: &[f64], want: &[f64], tolerance: f64) -> Self {
        let mut r = Self::compare(op, got, want, tolerance);
        let finite = got.len() == want.len() && got.iter().chain(want).all(|v| v.is_finite());
        r.pass = finite && r.max_abs <= tolerance;
        r
    }

    /// A report from a pre-computed pair of errors.
    pub fn from_errors(op: impl Into<String>, max_abs: f64, max_rel: f64, tolerance: f64) -> Self {
        let pass = max_rel.is_finite() && max_rel <= tolerance;
        OracleReport { op: op.into(), max_abs, max_rel, tolerance, pass }
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.3e}\t{:.3e}\t{}",
            self.op,
            self.max_abs,
            self.max_rel,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Relative error used for gradient checks:
/// `max|a-n| / max(max|a|, max|n|, 1e-8)`.
pub fn grad_rel_error(analytic: &[f64], numeric: &[f64]) -> (f64, f64) {
    let mut diff = 0.0f64;
    let mut scale = 1e-8f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        diff = diff.max((a - n).abs());
        scale = scale.max(a.abs()).max(n.abs());
    }
    (diff, diff / scale)
}

/// Dense multi-head attention with one output projection per expert,
/// summed: `Σ_h softmax(X Wq_h (X Wk_h)ᵀ / √d') X Wv_h Wo_h`.
///
/// `x[n,d]`, `wq/wk/wv[m,d,d']`, `wo[m,d',d]`.
pub fn dense_mha_oracle(
    x: &Tensor<f64>,
    wq: &Tensor<f64>,
    wk: &Tensor<f64>,
    wv: &Tensor<f64>,
    wo: &Tensor<f64>,
) -> Tensor<f64> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let (m, dp) = (wq.shape()[0], wq.shape()[2]);
    let xv = x.data();
    let at = |w: &Tensor<f64>, h: usize, i: usize, j: usize, cols: usize, rows: usize| w.data()[h * rows * cols + i * cols + j];
    let mut out = vec![0.0; n * d];
    for h in 0..m {
        let project = |w: &Tensor<f64>| {
            let mut p = vec![vec![0.0; dp]; n];
            for i in 0..n {
                for j in 0..dp {
                    let mut s = 0.0;
                    for t in 0..d {
                        s += xv[i * d + t] * at(w, h, t, j, dp, d);
                    }
                    p[i][j] = s;
                }
            }
            p
        };
        let (q, k, v) = (project(wq), project(wk), project(wv));
        for i in 0..n {
            let mut logits = vec![0.0; n];
            for (j, l) in logits.iter_mut().enumerate() {
                let mut s = 0.0;
                for t in 0..dp {
                    s += q[i][t] * k[j][t];
                }
                *l = s / (dp as f64).sqrt();
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            let mut e = vec![0.0; dp];
            for j in 0..n {
                let a = (logits[j] - mx).exp() / z;
                for t in 0..dp {
                    e[t] += a * v[j][t];
                }
            }
            for c in 0..d {
                let mut s = 0.0;
                for t in 0..dp {
                    s += e[t] * at(wo, h, t, c, d, dp);
                }
                out[i * d + c] += s;
            }
        }
    }
    Tensor::new(&[n, d], out).expect("oracle shape")
}

/// Central differences `(f(x+h·e_i) − f(x−h·e_i)) / 2h` at the listed
/// flat indices (all of them when `indices` is `None`).
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor<f64>, h: f64, indices: Option<&[usize]>) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..x.numel()).collect();
            &all
        }
    };
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(idx.len());
    for &i in idx {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        let gi = (fp - fm) / (2.0 * h);
        if !gi.is_finite() {
            return Err(Error::NonFinite(format!("finite difference at index {} is {}", i, gi)));
        }
        out.push(gi);
    }
    Ok(out)
}

/// Quadruple-loop same-padded cross-correlation. `w[Cout,Cin,k,k]`.
pub fn naive_conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
    let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let p = (k / 2) as isize;
    let mut out = vec![0.0; cout * h * wd];
    for co in 0..cout {
        for y in 0..h {
            for xx in 0..wd {
                let mut s = b.map_or(0.0, |b| b.data()[co]);
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - p;
                            let sx = xx as isize + kx as isize - p;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                continue;
                            }
                            let wv = w.data()[((co * cin + ci) * k + ky) * k + kx];
                            s += wv * x.data()[(ci * h + sy as usize) * wd + sx as usize];
                        }
                    }
                }
                out[(co * h + y) * wd + xx] = s;
            }
        }
    }
    Tensor::new(&[cout, h, wd], out).expect("oracle shape")
}

fn catmull_rom(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t < 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Per-pixel 2-D kernel sum for an `r`-fold downscale of interleaved RGB
/// bytes. The kernel is stretched by `r`, taps are clamped to the edge and
/// each axis' weights are normalised to sum to 1.
pub fn naive_bicubic_oracle(rgb: &[u8], width: usize, height: usize, r: usize) -> Vec<u8> {
    let (ow, oh) = (width / r, height / r);
    let rf = r as f64;
    let taps = |o: usize, len: usize| -> Vec<(usize, f64)> {
        let center = (o as f64 + 0.5) * rf - 0.5;
        let reach = 2.0 * rf;
        let lo = (center - reach).floor() as isize;
        let hi = (center + reach).ceil() as isize;
        let mut t: Vec<(usize, f64)> = (lo..=hi)
            .map(|s| (s.clamp(0, len as isize - 1) as usize, catmull_rom((s as f64 - center) / rf)))
            .filter(|&(_, w)| w != 0.0)
            .collect();
        let total: f64 = t.iter().map(|p| p.1).sum();
        t.iter_mut().for_each(|p| p.1 /= total);
        t
    };
    let mut out = vec![0u8; ow * oh * 3];
    for oy in 0..oh {
        let ty = taps(oy, height);
        for ox in 0..ow {
            let tx = taps(ox, width);
            for c in 0..3 {
                let mut s = 0.0;
                for &(sy, wy) in &ty {
                    for &(sx, wx) in &tx {
                        s += wy * wx * rgb[(sy * width + sx) * 3 + c] as f64 / 255.0;
                    }
                }
                let v = (s * 255.0).clamp(0.0, 255.0);
                out[(oy * ow + ox) * 3 + c] = v.round() as u8;
            }
        }
    }
    out
}

fn luma_plane(rgb: &[u8], width: usize, height: usize, border: usize) -> (Vec<f64>, usize, usize) {
    let (w2, h2) = (width - 2 * border, height - 2 * border);
    let mut y = Vec::with_capacity(w2 * h2);
    for row in border..height - border {
        for col in border..width - border {
            let p = &rgb[(row * width + col) * 3..];
            let (r, g, b) = (p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0);
            y.push(16.0 + 65.481 * r + 128.553 * g + 24.966 * b);
        }
    }
    (y, w2, h2)
}

/// Loop PSNR on BT.601 luma after shaving `border` pixels; `None` when the
/// images are identical on the compared region.
pub fn psnr_oracle(a: &[u8], b: &[u8], width: usize, height: usize, border: usize) -> Option<f64> {
    let (ya, _, _) = luma_plane(a, width, height, border);
    let (yb, _, _) = luma_plane(b, width, height, border);
    let mut se = 0.0;
    for i in 0..ya.len() {
        se += (ya[i] - yb[i]) * (ya[i] - yb[i]);
    }
    let mse = se / ya.len() as f64;
    (mse > 0.0).then(|| 10.0 * (255.0 * 255.0 / mse).log10())
}

/// Loop SSIM on BT.601 luma: every 11×11 Gaussian (σ = 1.5) window fully
/// inside the shaved image, averaged.
pub fn ssim_oracle(a: &[u8], b: &[u8], width: usize, height: usize, border: usize) -> f64 {
    let (ya, w, h) = luma_plane(a, width, height, border);
    let (yb, _, _) = luma_plane(b, width, height, border);
    let mut g = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let c1 = (0.01 * 255.0f64).powi(2);
    let c2 = (0.03 * 255.0f64).powi(2);
    let mut acc = 0.0;
    let mut count = 0usize;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = g[i][j] / total;
                    let (pa, pb) = (ya[(y + i) * w + x + j], yb[(y + i) * w + x + j]);
                    ma += wt * pa;
                    mb += wt * pb;
                    saa += wt * pa * pa;
                    sbb += wt * pb * pb;
                    sab += wt * pa * pb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_sum_is_ones() {
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.3);
        let g = finite_diff_grad(|t| Ok(t.data().iter().sum()), &x, 1e-5, None).unwrap();
        assert!(g.iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn fd_of_half_square_is_x() {
        let x = Tensor::from_fn(&[5], |i| i as f64 - 2.2);
        let g = finite_diff_grad(|t| Ok(0.5 * t.data().iter().map(|v| v * v).sum::<f64>()), &x, 1e-5, None).unwrap();
        for (a, b) in g.iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fd_reports_nan_index() {
        let x = Tensor::from_fn(&[3], |i| i as f64);
        let err = finite_diff_grad(|t| Ok(if t.data()[2] > 2.0 { f64::NAN } else { 0.0 }), &x, 1e-5, None).unwrap_err();
        assert!(err.to_string().contains("index 2"), "{err}");
    }

    #[test]
    fn mha_single_token_is_value_projection() {
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let wq = Tensor::from_fn(&[2, 2, 1], |i| i as f64);
        let wv = Tensor::new(&[2, 2, 1], vec![1.0, 1.0, 2.0, -1.0]).unwrap();
        let wo = Tensor::new(&[2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        // expert 0: v = 3, out (3, 0); expert 1: v = 0, out (0, 0)
        let y = dense_mha_oracle(&x, &wq, &wq, &wv, &wo);
        assert_eq!(y.data(), &[3.0, 0.0]);
    }

    #[test]
    fn mha_identity_weights() {
        let x = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let eye = Tensor::new(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = dense_mha_oracle(&x, &eye, &eye, &eye, &eye);
        let s = 2f64.sqrt();
        // row 0 logits (1, 0)/√2, row 1 logits (0, 4)/√2
        let a0 = 1.0 / (1.0 + (-1.0 / s).exp());
        let a1 = 1.0 / (1.0 + (4.0 / s).exp());
        let want = [a0, 2.0 * (1.0 - a0), a1, 2.0 * (1.0 - a1)];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn conv_oracle_identity_kernel() {
        let x = Tensor::from_fn(&[2, 3, 3], |i| i as f64);
        let mut w = Tensor::zeros(&[2, 2, 3, 3]);
        w.data_mut()[4] = 1.0;
        w.data_mut()[(2 + 1) * 9 + 4] = 1.0;
        assert_eq!(naive_conv_oracle(&x, &w, None).data(), x.data());
    }

    #[test]
    fn bicubic_oracle_constant() {
        let img = vec![77u8; 6 * 4 * 3];
        assert_eq!(naive_bicubic_oracle(&img, 6, 4, 2), vec![77u8; 3 * 2 * 3]);
    }

    #[test]
    fn report_line_format() {
        let r = OracleReport::compare("x", &[1.0, 2.0], &[1.0, 2.0 + 1e-12], 1e-8);
        assert!(r.pass);
        assert!(r.to_string().starts_with("x\t") && r.to_string().ends_with("\tPASS"));
    }
}
