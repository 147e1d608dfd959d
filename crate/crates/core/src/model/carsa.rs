//! Content-aware routing sparse attention over a batch of windows.
//!
//! For each window a sigmoid router scores every token for every expert.
//! Each expert keeps its k tokens, attends among them with its own
//! projections, scales its output rows by the router score (the gate) and
//! scatter-adds them back. Tokens no expert picked receive zero.

use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::linalg::{add_into, gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Function, Graph, Tensor, Var};

use super::config::SelectionStrategy;
use super::router::{mix_seed, select_from_scores, RouterSelection};

/// Graph handles of one layer's attention parameters.
#[derive(Clone, Copy, Debug)]
pub struct CarsaParams {
    /// `[d, m]`
    pub router: Var,
    /// `[m, d, d']`
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    /// `[m, d', d]`
    pub wo: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct CarsaOptions {
    /// Tokens kept per expert.
    pub k: usize,
    pub strategy: SelectionStrategy,
    /// Scale expert outputs by router scores.
    pub use_gate: bool,
    /// Force every gate to 1 (dense-equivalence checks).
    pub unit_gates: bool,
    pub seed: u64,
}

pub struct CarsaOutput<T> {
    /// `[nw, n, d]`
    pub out: Var,
    pub selections: Vec<RouterSelection<T>>,
    /// Multiply-accumulates executed by the forward pass.
    pub macs: u64,
}

#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    d: usize,
    dp: usize,
    m: usize,
}

struct ExpertCache<T> {
    idx: Vec<usize>,
    gate: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    attn: Vec<T>,
    e: Vec<T>,
    o: Vec<T>,
}

struct WindowCache<T> {
    experts: Vec<ExpertCache<T>>,
}

struct Weights<'a, T> {
    wq: &'a [T],
    wk: &'a [T],
    wv: &'a [T],
    wo: &'a [T],
}

impl<'a, T> Weights<'a, T> {
    fn expert(&self, h: usize, d: usize, dp: usize) -> (&'a [T], &'a [T], &'a [T], &'a [T]) {
        let s = d * dp;
        (
            &self.wq[h * s..(h + 1) * s],
            &self.wk[h * s..(h + 1) * s],
            &self.wv[h * s..(h + 1) * s],
            &self.wo[h * s..(h + 1) * s],
        )
    }
}

fn gather<T: Real>(x: &[T], idx: &[usize], d: usize) -> Vec<T> {
    let mut s = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        s.extend_from_slice(&x[i * d..(i + 1) * d]);
    }
    s
}

/// Attention for one window under a fixed selection. Adds into `y[n×d]`
/// and returns the cache plus the MAC count (router scoring excluded).
fn window_forward<T: Real>(
    x: &[T],
    sel: &RouterSelection<T>,
    w: &Weights<T>,
    dims: Dims,
    y: &mut [T],
) -> (WindowCache<T>, u64) {
    let Dims { d, dp, .. } = dims;
    let scale = T::one() / T::from_f64c((dp as f64).sqrt());
    let mut macs = 0u64;
    let mut experts = Vec::with_capacity(sel.experts.len());
    for (h, es) in sel.experts.iter().enumerate() {
        let (wq, wk, wv, wo) = w.expert(h, d, dp);
        let k = es.indices.len();
        let s = gather(x, &es.indices, d);
        let mut q = vec![T::zero(); k * dp];
        let mut kk = vec![T::zero(); k * dp];
        let mut v = vec![T::zero(); k * dp];
        gemm_nn(&s, wq, &mut q, k, d, dp);
        gemm_nn(&s, wk, &mut kk, k, d, dp);
        gemm_nn(&s, wv, &mut v, k, d, dp);
        let mut attn = vec![T::zero(); k * k];
        gemm_nt(&q, &kk, &mut attn, k, dp, k);
        for row in attn.chunks_mut(k) {
            row.iter_mut().for_each(|a| *a *= scale);
            crate::tensor::softmax_row(row);
        }
        let mut e = vec![T::zero(); k * dp];
        gemm_nn(&attn, &v, &mut e, k, k, dp);
        let mut o = vec![T::zero(); k * d];
        gemm_nn(&e, wo, &mut o, k, dp, d);
        for (j, &i) in es.indices.iter().enumerate() {
            let g = es.gates[j];
            for (yv, &ov) in y[i * d..(i + 1) * d].iter_mut().zip(&o[j * d..(j + 1) * d]) {
                *yv += ov * g;
            }
        }
        macs += (3 * k * d * dp + 2 * k * k * dp + k * dp * d) as u64;
        experts.push(ExpertCache { idx: es.indices.clone(), gate: es.gates.clone(), q, k: kk, v, attn, e, o });
    }
    (WindowCache { experts }, macs)
}

#[derive(Default)]
struct WeightGrads<T> {
    router: Vec<T>,
    wq: Vec<T>,
    wk: Vec<T>,
    wv: Vec<T>,
    wo: Vec<T>,
}

impl<T: Real> WeightGrads<T> {
    fn zeros(dims: Dims) -> Self {
        let s = dims.m * dims.d * dims.dp;
        WeightGrads {
            router: vec![T::zero(); dims.d * dims.m],
            wq: vec![T::zero(); s],
            wk: vec![T::zero(); s],
            wv: vec![T::zero(); s],
            wo: vec![T::zero(); s],
        }
    }

    fn add(&mut self, other: &Self) {
        add_into(&mut self.router, &other.router);
        add_into(&mut self.wq, &other.wq);
        add_into(&mut self.wk, &other.wk);
        add_into(&mut self.wv, &other.wv);
        add_into(&mut self.wo, &other.wo);
    }
}

/// Backward for one window. Writes `dx[n×d]` and accumulates weight
/// gradients. `dz[n×m]` collects router-logit gradients when routed.
#[allow(clippy::too_many_arguments)]
fn window_backward<T: Real>(
    x: &[T],
    cache: &WindowCache<T>,
    w: &Weights<T>,
    router: Option<&[T]>,
    dims: Dims,
    dy: &[T],
    dx: &mut [T],
    acc: &mut WeightGrads<T>,
) {
    let Dims { n, d, dp, m } = dims;
    let s_sz = d * dp;
    let scale = T::one() / T::from_f64c((dp as f64).sqrt());
    let mut dz = vec![T::zero(); n * m];
    for (h, ec) in cache.experts.iter().enumerate() {
        let (wq, wk, wv, wo) = w.expert(h, d, dp);
        let k = ec.idx.len();
        let s = gather(x, &ec.idx, d);
        let mut d_o = gather(dy, &ec.idx, d);
        if router.is_some() {
            for j in 0..k {
                let row = j * d..(j + 1) * d;
                let dgate: T = d_o[row.clone()].iter().zip(&ec.o[row]).map(|(&a, &b)| a * b).sum();
                let g = ec.gate[j];
                dz[ec.idx[j] * m + h] += dgate * g * (T::one() - g);
            }
        }
        for j in 0..k {
            let g = ec.gate[j];
            d_o[j * d..(j + 1) * d].iter_mut().for_each(|v| *v *= g);
        }
        gemm_tn(&ec.e, &d_o, &mut acc.wo[h * s_sz..(h + 1) * s_sz], dp, k, d);
        let mut de = vec![T::zero(); k * dp];
        gemm_nt(&d_o, wo, &mut de, k, d, dp);
        let mut da = vec![T::zero(); k * k];
        gemm_nt(&de, &ec.v, &mut da, k, dp, k);
        let mut dv = vec![T::zero(); k * dp];
        gemm_tn(&ec.attn, &de, &mut dv, k, k, dp);
        // softmax adjoint, folded with the 1/sqrt(d') logit scale
        for (arow, drow) in ec.attn.chunks(k).zip(da.chunks_mut(k)) {
            let dot: T = arow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
            for (dv_, &a) in drow.iter_mut().zip(arow) {
                *dv_ = a * (*dv_ - dot) * scale;
            }
        }
        let mut dq = vec![T::zero(); k * dp];
        gemm_nn(&da, &ec.k, &mut dq, k, k, dp);
        let mut dk = vec![T::zero(); k * dp];
        gemm_tn(&da, &ec.q, &mut dk, k, k, dp);
        gemm_tn(&s, &dq, &mut acc.wq[h * s_sz..(h + 1) * s_sz], d, k, dp);
        gemm_tn(&s, &dk, &mut acc.wk[h * s_sz..(h + 1) * s_sz], d, k, dp);
        gemm_tn(&s, &dv, &mut acc.wv[h * s_sz..(h + 1) * s_sz], d, k, dp);
        let mut ds = vec![T::zero(); k * d];
        gemm_nt(&dq, wq, &mut ds, k, dp, d);
        gemm_nt(&dk, wk, &mut ds, k, dp, d);
        gemm_nt(&dv, wv, &mut ds, k, dp, d);
        for (j, &i) in ec.idx.iter().enumerate() {
            add_into(&mut dx[i * d..(i + 1) * d], &ds[j * d..(j + 1) * d]);
        }
    }
    if let Some(wr) = router {
        gemm_tn(x, &dz, &mut acc.router, d, n, m);
        gemm_nt(&dz, wr, dx, n, m, d);
    }
}

const BACKWARD_CHUNKS: usize = 16;

struct CarsaFn<T> {
    nw: usize,
    dims: Dims,
    routed: bool,
    caches: Vec<WindowCache<T>>,
}

impl<T: Real> Function<T> for CarsaFn<T> {
    fn name(&self) -> &'static str {
        "carsa"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let dims = self.dims;
        let win = dims.n * dims.d;
        let x = inputs[0].data();
        let w = Weights { wq: inputs[2].data(), wk: inputs[3].data(), wv: inputs[4].data(), wo: inputs[5].data() };
        let router = self.routed.then(|| inputs[1].data());
        let per_chunk = self.nw.div_ceil(BACKWARD_CHUNKS).max(1);
        let chunks = self.nw.div_ceil(per_chunk);
        let parts = par::map(chunks, |c| {
            let lo = c * per_chunk;
            let hi = ((c + 1) * per_chunk).min(self.nw);
            let mut acc = WeightGrads::zeros(dims);
            let mut dx = vec![T::zero(); (hi - lo) * win];
            for wi in lo..hi {
                window_backward(
                    &x[wi * win..(wi + 1) * win],
                    &self.caches[wi],
                    &w,
                    router,
                    dims,
                    &g[wi * win..(wi + 1) * win],
                    &mut dx[(wi - lo) * win..(wi - lo + 1) * win],
                    &mut acc,
                );
            }
            (dx, acc)
        });
        let mut dx = Vec::with_capacity(self.nw * win);
        let mut total = WeightGrads::zeros(dims);
        for (part, acc) in &parts {
            dx.extend_from_slice(part);
            total.add(acc);
        }
        vec![
            Some(dx),
            self.routed.then_some(total.router),
            Some(total.wq),
            Some(total.wk),
            Some(total.wv),
            Some(total.wo),
        ]
    }
}

struct FixedSelectionFn<T> {
    dims: Dims,
    cache: WindowCache<T>,
}

impl<T: Real> Function<T> for FixedSelectionFn<T> {
    fn name(&self) -> &'static str {
        "carsa_window"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let w = Weights { wq: inputs[1].data(), wk: inputs[2].data(), wv: inputs[3].data(), wo: inputs[4].data() };
        let mut acc = WeightGrads::zeros(self.dims);
        let mut dx = vec![T::zero(); inputs[0].numel()];
        window_backward(inputs[0].data(), &self.cache, &w, None, self.dims, g, &mut dx, &mut acc);
        vec![Some(dx), Some(acc.wq), Some(acc.wk), Some(acc.wv), Some(acc.wo)]
    }
}

impl<T: Real> Graph<T> {
    fn carsa_dims(&self, tokens_shape: &[usize], p: &CarsaParams) -> Result<Dims> {
        let (n, d) = match tokens_shape {
            [_, n, d] | [n, d] => (*n, *d),
            s => return Err(Error::dim("carsa", format!("tokens must be [nw, n, d] or [n, d], got {:?}", s))),
        };
        let [m, d1, dp] = self.shape(p.wq)[..] else {
            return Err(Error::dim("carsa", format!("wq must be [m, d, d'], got {:?}", self.shape(p.wq))));
        };
        let dims = Dims { n, d, dp, m };
        for (name, var, want) in [
            ("router", p.router, vec![d, m]),
            ("wq", p.wq, vec![m, d, dp]),
            ("wk", p.wk, vec![m, d, dp]),
            ("wv", p.wv, vec![m, d, dp]),
            ("wo", p.wo, vec![m, dp, d]),
        ] {
            if self.shape(var) != want.as_slice() || d1 != d {
                return Err(Error::dim(
                    "carsa",
                    format!("{} has shape {:?}, expected {:?}", name, self.shape(var), want),
                ));
            }
        }
        Ok(dims)
    }

    /// Routed sparse attention over `tokens[nw, n, d]`, one window at a time.
    pub fn carsa_windows(&mut self, tokens: Var, p: &CarsaParams, opts: &CarsaOptions) -> Result<CarsaOutput<T>> {
        let shape = self.shape(tokens).to_vec();
        let [nw, _, _] = shape[..] else {
            return Err(Error::dim("carsa", format!("tokens must be [nw, n, d], got {:?}", shape)));
        };
        let dims = self.carsa_dims(&shape, p)?;
        let Dims { n, d, m, .. } = dims;
        if opts.k == 0 || opts.k > n {
            return Err(Error::contract("carsa", format!("k={} outside 1..={}", opts.k, n)));
        }
        let x = self.value(tokens).data();
        let wr = self.value(p.router).data();
        let w = Weights {
            wq: self.value(p.wq).data(),
            wk: self.value(p.wk).data(),
            wv: self.value(p.wv).data(),
            wo: self.value(p.wo).data(),
        };
        let win = n * d;
        let results: Vec<Result<_>> = par::map(nw, |wi| {
            let xw = &x[wi * win..(wi + 1) * win];
            let mut logits = vec![T::zero(); n * m];
            gemm_nn(xw, wr, &mut logits, n, d, m);
            let scores: Vec<T> = logits.iter().map(|&z| crate::tensor::sigmoid(z)).collect();
            let mut sel = select_from_scores(&scores, n, m, opts.k, opts.strategy, mix_seed(&[opts.seed, wi as u64]))?;
            if opts.unit_gates || !opts.use_gate {
                sel = sel.with_unit_gates();
            }
            let mut y = vec![T::zero(); win];
            let (cache, macs) = window_forward(xw, &sel, &w, dims, &mut y);
            Ok((y, cache, sel, macs + (n * d * m) as u64))
        });
        let mut out = Vec::with_capacity(nw * win);
        let mut caches = Vec::with_capacity(nw);
        let mut selections = Vec::with_capacity(nw);
        let mut macs = 0;
        for r in results {
            let (y, cache, sel, mc) = r?;
            out.extend_from_slice(&y);
            caches.push(cache);
            selections.push(sel);
            macs += mc;
        }
        let out = Tensor::new(&shape, out)?;
        let routed = opts.use_gate && !opts.unit_gates;
        let f = CarsaFn { nw, dims, routed, caches };
        let out = self.record(Box::new(f), &[tokens, p.router, p.wq, p.wk, p.wv, p.wo], out);
        Ok(CarsaOutput { out, selections, macs })
    }

    /// Sparse attention for one window `x[n, d]` under a given selection.
    /// Gates are taken from `sel` as constants; the router is not involved.
    pub fn carsa_window(&mut self, x: Var, p: &CarsaParams, sel: &RouterSelection<T>) -> Result<(Var, u64)> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::dim("carsa_window", format!("x must be [n, d], got {:?}", shape)));
        }
        let dims = self.carsa_dims(&shape, p)?;
        if sel.experts.len() != dims.m {
            return Err(Error::dim(
                "carsa_window",
                format!("selection has {} experts, weights have {}", sel.experts.len(), dims.m),
            ));
        }
        for e in &sel.experts {
            if e.indices.len() != e.gates.len() || e.indices.iter().any(|&i| i >= dims.n) {
                return Err(Error::contract("carsa_window", "selection inconsistent with window size"));
            }
        }
        let w = Weights {
            wq: self.value(p.wq).data(),
            wk: self.value(p.wk).data(),
            wv: self.value(p.wv).data(),
            wo: self.value(p.wo).data(),
        };
        let mut y = vec![T::zero(); dims.n * dims.d];
        let (cache, macs) = window_forward(self.value(x).data(), sel, &w, dims, &mut y);
        let out = Tensor::new(&shape, y)?;
        let v = self.record(Box::new(FixedSelectionFn { dims, cache }), &[x, p.wq, p.wk, p.wv, p.wo], out);
        Ok((v, macs))
    }
}
