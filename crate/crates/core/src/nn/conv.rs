use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::linalg::axpy;
use crate::tensor::{Function, Graph, Tensor, Var};

use super::chw;

/// Accumulates the zero-padded, same-size cross-correlation of `inp` with a
/// single `k×k` kernel into `out`.
fn correlate_acc<T: Real>(out: &mut [T], inp: &[T], h: usize, w: usize, kernel: &[T], k: usize) {
    let p = (k / 2) as isize;
    for ky in 0..k {
        let dy = ky as isize - p;
        let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy).min(h as isize).max(0) as usize);
        for kx in 0..k {
            let wv = kernel[ky * k + kx];
            if wv == T::zero() {
                continue;
            }
            let dx = kx as isize - p;
            let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize).max(0) as usize);
            if x0 >= x1 {
                continue;
            }
            for y in y0..y1 {
                let sy = (y as isize + dy) as usize;
                let sx = (x0 as isize + dx) as usize;
                axpy(wv, &inp[sy * w + sx..sy * w + sx + (x1 - x0)], &mut out[y * w + x0..y * w + x1]);
            }
        }
    }
}

/// Adjoint of [`correlate_acc`] with respect to its input.
fn correlate_adjoint_acc<T: Real>(dinp: &mut [T], g: &[T], h: usize, w: usize, kernel: &[T], k: usize) {
    let p = (k / 2) as isize;
    for ky in 0..k {
        let dy = ky as isize - p;
        let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy).min(h as isize).max(0) as usize);
        for kx in 0..k {
            let wv = kernel[ky * k + kx];
            if wv == T::zero() {
                continue;
            }
            let dx = kx as isize - p;
            let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize).max(0) as usize);
            if x0 >= x1 {
                continue;
            }
            for y in y0..y1 {
                let sy = (y as isize + dy) as usize;
                let sx = (x0 as isize + dx) as usize;
                axpy(wv, &g[y * w + x0..y * w + x1], &mut dinp[sy * w + sx..sy * w + sx + (x1 - x0)]);
            }
        }
    }
}

/// d(kernel) for one (output, input) plane pair, accumulated.
fn correlate_kernel_grad<T: Real>(dk: &mut [T], g: &[T], inp: &[T], h: usize, w: usize, k: usize) {
    let p = (k / 2) as isize;
    for ky in 0..k {
        let dy = ky as isize - p;
        let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy).min(h as isize).max(0) as usize);
        for kx in 0..k {
            let dx = kx as isize - p;
            let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize).max(0) as usize);
            let mut s = T::zero();
            for y in y0..y1 {
                let sy = (y as isize + dy) as usize;
                let sx = (x0 as isize + dx) as usize;
                let grow = &g[y * w + x0..y * w + x1];
                let irow = &inp[sy * w + sx..sy * w + sx + (x1 - x0)];
                for (&a, &b) in grow.iter().zip(irow) {
                    s += a * b;
                }
            }
            dk[ky * k + kx] += s;
        }
    }
}

fn check_kernel(op: &'static str, cin: usize, ws: &[usize], grouped: bool) -> Result<(usize, usize)> {
    let [cout, kin, k, k2] = ws else {
        return Err(Error::dim(op, format!("kernel must be [Cout, Cin, k, k], got {:?}", ws)));
    };
    if k != k2 || k % 2 == 0 {
        return Err(Error::contract(op, format!("kernel must be square and odd, got {}x{}", k, k2)));
    }
    let expected = if grouped { 1 } else { cin };
    if *kin != expected || (grouped && *cout != cin) {
        return Err(Error::dim(
            op,
            format!("input has {} channels, kernel is {:?}", cin, ws),
        ));
    }
    Ok((*cout, *k))
}

fn check_bias(op: &'static str, cout: usize, b: Option<&Tensor<impl Real>>) -> Result<()> {
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(Error::dim(op, format!("bias {:?} for {} output channels", b.shape(), cout)));
        }
    }
    Ok(())
}

/// Same-padded 2-D cross-correlation on plain slices: `x[Cin,H,W]`,
/// `w[Cout,Cin,k,k]`.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (cin, h, wd) = chw("conv2d", x.shape())?;
    let (cout, k) = check_kernel("conv2d", cin, w.shape(), false)?;
    check_bias("conv2d", cout, b)?;
    let plane = h * wd;
    let mut out = vec![T::zero(); cout * plane];
    let (xd, wdat) = (x.data(), w.data());
    par::for_chunks_mut(&mut out, plane.max(1), |co, o| {
        if let Some(b) = b {
            o.iter_mut().for_each(|v| *v = b.data()[co]);
        }
        for ci in 0..cin {
            let kern = &wdat[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
            let inp = &xd[ci * plane..(ci + 1) * plane];
            if k == 1 {
                axpy(kern[0], inp, o);
            } else {
                correlate_acc(o, inp, h, wd, kern, k);
            }
        }
    });
    Tensor::new(&[cout, h, wd], out)
}

/// Per-channel same-padded cross-correlation: `w[C,1,k,k]`.
pub fn depthwise_conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (c, h, wd) = chw("depthwise_conv2d", x.shape())?;
    let (_, k) = check_kernel("depthwise_conv2d", c, w.shape(), true)?;
    check_bias("depthwise_conv2d", c, b)?;
    let plane = h * wd;
    let mut out = vec![T::zero(); c * plane];
    let (xd, wdat) = (x.data(), w.data());
    par::for_chunks_mut(&mut out, plane.max(1), |ch, o| {
        if let Some(b) = b {
            o.iter_mut().for_each(|v| *v = b.data()[ch]);
        }
        correlate_acc(o, &xd[ch * plane..(ch + 1) * plane], h, wd, &wdat[ch * k * k..(ch + 1) * k * k], k);
    });
    Tensor::new(&[c, h, wd], out)
}

struct Conv2d {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    bias: bool,
}

impl<T: Real> Function<T> for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, wt) = (inputs[0].data(), inputs[1].data());
        let (cin, cout, k, plane) = (self.cin, self.cout, self.k, self.h * self.w);
        let kk = k * k;

        let mut dx = vec![T::zero(); cin * plane];
        par::for_chunks_mut(&mut dx, plane.max(1), |ci, d| {
            for co in 0..cout {
                let kern = &wt[(co * cin + ci) * kk..(co * cin + ci + 1) * kk];
                let gp = &g[co * plane..(co + 1) * plane];
                if k == 1 {
                    axpy(kern[0], gp, d);
                } else {
                    correlate_adjoint_acc(d, gp, self.h, self.w, kern, k);
                }
            }
        });

        let mut dw = vec![T::zero(); cout * cin * kk];
        par::for_chunks_mut(&mut dw, cin * kk, |co, d| {
            let gp = &g[co * plane..(co + 1) * plane];
            for ci in 0..cin {
                let inp = &x[ci * plane..(ci + 1) * plane];
                let dk = &mut d[ci * kk..(ci + 1) * kk];
                if k == 1 {
                    dk[0] += gp.iter().zip(inp).map(|(&a, &b)| a * b).sum();
                } else {
                    correlate_kernel_grad(dk, gp, inp, self.h, self.w, k);
                }
            }
        });

        let mut grads = vec![Some(dx), Some(dw)];
        if self.bias {
            grads.push(Some((0..cout).map(|co| g[co * plane..(co + 1) * plane].iter().copied().sum()).collect()));
        }
        grads
    }
}

struct DepthwiseConv2d {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    bias: bool,
}

impl<T: Real> Function<T> for DepthwiseConv2d {
    fn name(&self) -> &'static str {
        "depthwise_conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, wt) = (inputs[0].data(), inputs[1].data());
        let (c, k, plane) = (self.c, self.k, self.h * self.w);
        let kk = k * k;
        let mut dx = vec![T::zero(); c * plane];
        par::for_chunks_mut(&mut dx, plane.max(1), |ch, d| {
            correlate_adjoint_acc(d, &g[ch * plane..(ch + 1) * plane], self.h, self.w, &wt[ch * kk..(ch + 1) * kk], k);
        });
        let mut dw = vec![T::zero(); c * kk];
        par::for_chunks_mut(&mut dw, kk, |ch, d| {
            correlate_kernel_grad(d, &g[ch * plane..(ch + 1) * plane], &x[ch * plane..(ch + 1) * plane], self.h, self.w, k);
        });
        let mut grads = vec![Some(dx), Some(dw)];
        if self.bias {
            grads.push(Some((0..c).map(|ch| g[ch * plane..(ch + 1) * plane].iter().copied().sum()).collect()));
        }
        grads
    }
}

impl<T: Real> Graph<T> {
    /// Same-padded convolution, `x[Cin,H,W] ⋆ w[Cout,Cin,k,k] + b`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let (cin, h, wd) = chw("conv2d", self.shape(x))?;
        let (cout, k) = (self.shape(w)[0], self.shape(w)[2]);
        let f = Conv2d { cin, cout, h, w: wd, k, bias: b.is_some() };
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        Ok(self.record(Box::new(f), &inputs, out))
    }

    /// Per-channel convolution, `w[C,1,k,k]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = depthwise_conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let (c, h, wd) = chw("depthwise_conv2d", self.shape(x))?;
        let k = self.shape(w)[2];
        let f = DepthwiseConv2d { c, h, w: wd, k, bias: b.is_some() };
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        Ok(self.record(Box::new(f), &inputs, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity_kernel() {
        let x = Tensor::<f64>::from_fn(&[3, 4, 5], |i| i as f64 * 0.25 - 2.0);
        let w = Tensor::from_fn(&[3, 3, 1, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        let y = conv2d_forward(&x, &w, Some(&Tensor::zeros(&[3]))).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn box_kernel_on_constant_interior() {
        let x = Tensor::<f64>::full(&[1, 5, 5], 2.5);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &w, None).unwrap();
        assert_eq!(y.data()[2 * 5 + 2], 22.5);
        // corner sees 4 of 9 taps under zero padding
        assert_eq!(y.data()[0], 10.0);
        let y = depthwise_conv2d_forward(&x, &w, None).unwrap();
        assert_eq!(y.data()[2 * 5 + 2], 22.5);
    }

    #[test]
    fn depthwise_identity_kernel() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 3], |i| (i as f64).sin());
        let w = Tensor::from_fn(&[2, 1, 3, 3], |i| if i % 9 == 4 { 1.0 } else { 0.0 });
        let y = depthwise_conv2d_forward(&x, &w, None).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn depthwise_equals_block_diagonal_conv() {
        let c = 3;
        let x = Tensor::<f64>::from_fn(&[c, 4, 5], |i| ((i * 7919) % 13) as f64 / 13.0 - 0.5);
        let dw = Tensor::<f64>::from_fn(&[c, 1, 3, 3], |i| ((i * 31) % 17) as f64 / 17.0 - 0.3);
        let full = Tensor::from_fn(&[c, c, 3, 3], |i| {
            let (co, ci, t) = (i / (c * 9), (i / 9) % c, i % 9);
            if co == ci { dw.data()[co * 9 + t] } else { 0.0 }
        });
        let a = depthwise_conv2d_forward(&x, &dw, None).unwrap();
        let b = conv2d_forward(&x, &full, None).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = Tensor::<f64>::zeros(&[2, 3, 3]);
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        assert!(matches!(conv2d_forward(&x, &w, None), Err(Error::Dimension { .. })));
        let w = Tensor::zeros(&[4, 2, 2, 2]);
        assert!(matches!(conv2d_forward(&x, &w, None), Err(Error::Contract { .. })));
    }
}
