use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Function, Graph, Tensor, Var};

use super::chw;

pub(crate) const LAYER_NORM_EPS: f64 = 1e-6;

struct GlobalAvgPool {
    c: usize,
    plane: usize,
}

impl<T: Real> Function<T> for GlobalAvgPool {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let inv = T::one() / T::from_f64c(self.plane as f64);
        let mut dx = Vec::with_capacity(self.c * self.plane);
        for &gc in g.iter().take(self.c) {
            dx.extend(std::iter::repeat_n(gc * inv, self.plane));
        }
        vec![Some(dx)]
    }
}

struct ScaleChannels {
    c: usize,
    plane: usize,
}

impl<T: Real> Function<T> for ScaleChannels {
    fn name(&self) -> &'static str {
        "scale_channels"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, s) = (inputs[0].data(), inputs[1].data());
        let mut dx = vec![T::zero(); g.len()];
        let mut ds = vec![T::zero(); self.c];
        for ch in 0..self.c {
            let r = ch * self.plane..(ch + 1) * self.plane;
            for ((d, &gv), &xv) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&x[r]) {
                *d = gv * s[ch];
                ds[ch] += gv * xv;
            }
        }
        vec![Some(dx), Some(ds)]
    }
}

struct LayerNorm<T> {
    d: usize,
    normalized: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> Function<T> for LayerNorm<T> {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let d = self.d;
        let gain = inputs[1].data();
        let inv_d = T::one() / T::from_f64c(d as f64);
        let mut dx = vec![T::zero(); g.len()];
        let mut dgain = vec![T::zero(); d];
        let mut dshift = vec![T::zero(); d];
        let mut dxhat = vec![T::zero(); d];
        for (row, ((gr, xh), dr)) in g.chunks(d).zip(self.normalized.chunks(d)).zip(dx.chunks_mut(d)).enumerate() {
            let mut mean_dxhat = T::zero();
            let mut mean_dxhat_xhat = T::zero();
            for j in 0..d {
                dgain[j] += gr[j] * xh[j];
                dshift[j] += gr[j];
                dxhat[j] = gr[j] * gain[j];
                mean_dxhat += dxhat[j];
                mean_dxhat_xhat += dxhat[j] * xh[j];
            }
            mean_dxhat *= inv_d;
            mean_dxhat_xhat *= inv_d;
            let is = self.inv_std[row];
            for j in 0..d {
                dr[j] = is * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
            }
        }
        vec![Some(dx), Some(dgain), Some(dshift)]
    }
}

impl<T: Real> Graph<T> {
    /// Per-channel spatial mean of `[C, H, W]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = chw("global_avg_pool", self.shape(x))?;
        let plane = h * w;
        if plane == 0 {
            return Err(Error::dim("global_avg_pool", "empty spatial extent"));
        }
        let inv = T::one() / T::from_f64c(plane as f64);
        let data: Vec<T> = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(&[c], data)?;
        Ok(self.record(Box::new(GlobalAvgPool { c, plane }), &[x], out))
    }

    /// `x[c, :, :] * s[c]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (c, h, w) = chw("scale_channels", self.shape(x))?;
        if self.shape(s) != [c] {
            return Err(Error::dim("scale_channels", format!("scale {:?} for {} channels", self.shape(s), c)));
        }
        let plane = h * w;
        let sv = self.value(s).data();
        let mut data = self.value(x).data().to_vec();
        if plane > 0 {
            for (ch, p) in data.chunks_mut(plane).enumerate() {
                p.iter_mut().for_each(|v| *v *= sv[ch]);
            }
        }
        let out = Tensor::new(&[c, h, w], data)?;
        Ok(self.record(Box::new(ScaleChannels { c, plane }), &[x, s], out))
    }

    /// Normalises each row over the last dimension (ε = 1e-6), then applies
    /// `gain` and `shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&0);
        if d == 0 || self.shape(gain) != [d] || self.shape(shift) != [d] {
            return Err(Error::dim(
                "layer_norm",
                format!("x {:?}, gain {:?}, shift {:?}", self.shape(x), self.shape(gain), self.shape(shift)),
            ));
        }
        let eps = T::from_f64c(LAYER_NORM_EPS);
        let inv_d = T::one() / T::from_f64c(d as f64);
        let (gv, sv) = (self.value(gain).data(), self.value(shift).data());
        let xv = self.value(x).data();
        let rows = xv.len() / d;
        let mut normalized = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                normalized[r * d + j] = xh;
                out[r * d + j] = xh * gv[j] + sv[j];
            }
        }
        let out = Tensor::new(self.shape(x), out)?;
        Ok(self.record(Box::new(LayerNorm { d, normalized, inv_std }), &[x, gain, shift], out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_constant_and_single_pixel() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[2, 3, 4], 1.25));
        let p = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(p).data(), &[1.25, 1.25]);
        let x = g.constant(Tensor::new(&[3, 1, 1], vec![0.1, -2.0, 7.0]).unwrap());
        let p = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(p).data(), &[0.1, -2.0, 7.0]);
    }

    #[test]
    fn layer_norm_constant_token_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[2, 5], 3.0));
        let gain = g.constant(Tensor::full(&[5], 1.0));
        let shift = g.constant(Tensor::zeros(&[5]));
        let y = g.layer_norm(x, gain, shift).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_row_mean_matches_shift_mean() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[3, 4], |i| (i as f64 * 1.7).sin() * 3.0));
        let gain = g.constant(Tensor::full(&[4], 1.0));
        let shift = g.constant(Tensor::new(&[4], vec![0.5, -1.0, 2.0, 0.0]).unwrap());
        let y = g.layer_norm(x, gain, shift).unwrap();
        for row in g.value(y).data().chunks(4) {
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            assert!((m - 0.375).abs() < 1e-12);
        }
    }
}
