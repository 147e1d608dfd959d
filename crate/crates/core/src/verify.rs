//! Verification suites behind the `check` command: finite-difference
//! gradient checks for every differentiable operation and comparisons of
//! production kernels against the reference oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{bicubic_downsample, ImageBuffer};
use crate::error::Result;
use crate::metrics::{count_params, psnr, ssim};
use crate::model::{
    hierarchical_layer, himosa_forward, mix_seed, select_tokens, CarsaOptions, CarsaParams, ExpertSelection,
    ForwardOptions, HimosaWeights, ModelConfig, RouterSelection, SelectionStrategy,
};
use crate::nn::{conv2d_forward, depthwise_conv2d_forward, topk_select, WindowLayout};
use crate::oracle::{
    dense_mha_oracle, finite_diff_grad, grad_rel_error, naive_bicubic_oracle, naive_conv_oracle, psnr_oracle,
    ssim_oracle, OracleReport,
};
use crate::tensor::{Graph, Tensor, Var};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Relative error allowed between backward and finite differences.
pub const GRAD_TOL: f64 = 1e-4;
/// Seeds per gradient check.
pub const GRAD_SEEDS: u64 = 5;

type Build<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

fn rng_for(name: &str, seed: u64) -> ChaCha8Rng {
    let h = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    ChaCha8Rng::seed_from_u64(mix_seed(&[h, seed]))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Smooth scalar reduction `Σ out ⊙ R` with a fixed pseudo-random `R`.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let r = Tensor::from_fn(g.shape(out), |i| ((i as f64 + 1.0) * 0.754_877_666 + seed as f64 * 0.31).sin());
    let r = g.constant(r);
    let p = g.mul(out, r)?;
    Ok(g.sum(p))
}

fn eval_loss(build: &Build, inputs: &[Tensor<f64>], seed: u64) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let l = project(&mut g, out, seed)?;
    Ok(g.value(l).item())
}

/// Backward against central differences for every input of `build`, over
/// `seeds` random draws. At most `sample` elements per input are probed.
pub fn grad_check(name: &str, shapes: &[&[usize]], build: &Build, seeds: u64, sample: Option<usize>) -> OracleReport {
    let run = || -> Result<(f64, f64)> {
        let (mut worst_abs, mut worst_rel) = (0.0f64, 0.0f64);
        for seed in 0..seeds {
            let mut rng = rng_for(name, seed);
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| uniform(&mut rng, s, -1.0, 1.0)).collect();
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
            let out = build(&mut g, &vars)?;
            let l = project(&mut g, out, seed)?;
            g.backward(l)?;
            for (i, &v) in vars.iter().enumerate() {
                let n = inputs[i].numel();
                let idx: Vec<usize> = match sample {
                    Some(s) if s < n => (0..s).map(|_| rng.random_range(0..n)).collect(),
                    _ => (0..n).collect(),
                };
                let zeros = vec![0.0; n];
                let analytic_all = g.grad(v).unwrap_or(&zeros);
                let analytic: Vec<f64> = idx.iter().map(|&j| analytic_all[j]).collect();
                let mut probe_inputs = inputs.clone();
                let numeric = finite_diff_grad(
                    |p| {
                        probe_inputs[i] = p.clone();
                        eval_loss(build, &probe_inputs, seed)
                    },
                    &inputs[i],
                    FD_STEP,
                    Some(&idx),
                )?;
                let (a, r) = grad_rel_error(&analytic, &numeric);
                worst_abs = worst_abs.max(a);
                worst_rel = worst_rel.max(r);
            }
        }
        Ok((worst_abs, worst_rel))
    };
    match run() {
        Ok((a, r)) => OracleReport::from_errors(format!("grad:{name}"), a, r, GRAD_TOL),
        Err(e) => {
            let mut rep = OracleReport::from_errors(format!("grad:{name} ({e})"), f64::NAN, f64::NAN, GRAD_TOL);
            rep.pass = false;
            rep
        }
    }
}

fn tiny_carsa(vars: &[Var]) -> CarsaParams {
    CarsaParams { router: vars[1], wq: vars[2], wk: vars[3], wv: vars[4], wo: vars[5] }
}

/// Configuration for the composed-network check: one block whose middle
/// layer needs its own reflect padding.
pub fn network_check_config() -> ModelConfig {
    ModelConfig {
        n_blocks: 1,
        n_layers: 3,
        channels: 8,
        base_window: 2,
        ratios: vec![1.0, 3.0, 4.0],
        sparsity: vec![1, 2, 4],
        n_experts: 2,
        expert_dim: 4,
        scale: 2,
        cab_reduction: 4,
        cab_compress: 2,
        ..ModelConfig::paper()
    }
}

/// Gradient of a full forward pass with respect to every parameter tensor
/// and the input image (sampled elements), per seed.
pub fn network_grad_check(cfg: &ModelConfig, hw: (usize, usize), seeds: u64, per_tensor: usize) -> OracleReport {
    let run = || -> Result<(f64, f64)> {
        let (mut worst_abs, mut worst_rel) = (0.0f64, 0.0f64);
        for seed in 0..seeds {
            let mut weights = HimosaWeights::<f64>::init(cfg, seed)?;
            // perturb the identity-like defaults so every path is exercised
            let mut rng = rng_for("network", seed);
            for (_, t) in weights.iter_mut() {
                t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
            }
            let image = uniform(&mut rng, &[3, hw.0, hw.1], 0.0, 1.0);
            let opts = ForwardOptions { seed, ..Default::default() };
            let loss_of = |w: &HimosaWeights<f64>, img: &Tensor<f64>| -> Result<f64> {
                let mut g = Graph::new();
                let bound = w.bind(&mut g);
                let x = g.constant(img.clone());
                let out = himosa_forward(&mut g, cfg, &bound, x, &opts)?;
                let l = project(&mut g, out.sr, seed)?;
                Ok(g.value(l).item())
            };
            let mut g = Graph::new();
            let bound = weights.bind(&mut g);
            let x = g.param(&image);
            let out = himosa_forward(&mut g, cfg, &bound, x, &opts)?;
            let l = project(&mut g, out.sr, seed)?;
            g.backward(l)?;
            let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
            let names: Vec<String> = weights.names().cloned().collect();
            for name in &names {
                let v = bound.get(name)?;
                let t = weights.get(name)?.clone();
                let idx: Vec<usize> = (0..per_tensor.min(t.numel())).map(|_| rng.random_range(0..t.numel())).collect();
                let grad = g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
                analytic.extend(idx.iter().map(|&j| grad[j]));
                let mut probe_w = weights.clone();
                numeric.extend(finite_diff_grad(
                    |p| {
                        *probe_w.get_mut(name)? = p.clone();
                        loss_of(&probe_w, &image)
                    },
                    &t,
                    FD_STEP,
                    Some(&idx),
                )?);
            }
            let idx: Vec<usize> = (0..4 * per_tensor).map(|_| rng.random_range(0..image.numel())).collect();
            let gx = g.grad(x).map(<[f64]>::to_vec).unwrap_or_default();
            analytic.extend(idx.iter().map(|&j| gx[j]));
            numeric.extend(finite_diff_grad(|p| loss_of(&weights, p), &image, FD_STEP, Some(&idx))?);
            let (a, r) = grad_rel_error(&analytic, &numeric);
            worst_abs = worst_abs.max(a);
            worst_rel = worst_rel.max(r);
        }
        Ok((worst_abs, worst_rel))
    };
    match run() {
        Ok((a, r)) => OracleReport::from_errors("grad:network", a, r, GRAD_TOL),
        Err(e) => {
            let mut rep = OracleReport::from_errors(format!("grad:network ({e})"), f64::NAN, f64::NAN, GRAD_TOL);
            rep.pass = false;
            rep
        }
    }
}

/// `backward(αf + βg)` against `α∇f + β∇g`.
pub fn linearity_check(seeds: u64) -> OracleReport {
    let (alpha, beta) = (0.7, -1.3);
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..seeds {
        let mut rng = rng_for("linearity", seed);
        let x = uniform(&mut rng, &[4, 5], -1.0, 1.0);
        let w = uniform(&mut rng, &[5, 3], -1.0, 1.0);
        let grads = |a: f64, b: f64| -> Vec<f64> {
            let mut g = Graph::new();
            let xv = g.param(&x);
            let wv = g.constant(w.clone());
            let m = g.matmul(xv, wv).unwrap();
            let f = g.gelu(m);
            let f = g.sum(f);
            let s = g.softmax_rows(m).unwrap();
            let s = g.mul(s, m).unwrap();
            let h = g.sum(s);
            let fa = g.scale(f, a);
            let hb = g.scale(h, b);
            let l = g.add(fa, hb).unwrap();
            g.backward(l).unwrap();
            g.grad(xv).unwrap().to_vec()
        };
        let combined = grads(alpha, beta);
        let (gf, gh) = (grads(1.0, 0.0), grads(0.0, 1.0));
        let want: Vec<f64> = gf.iter().zip(&gh).map(|(a, b)| alpha * a + beta * b).collect();
        let r = OracleReport::compare("", &combined, &want, 1e-10);
        worst = (worst.0.max(r.max_abs), worst.1.max(r.max_rel));
    }
    OracleReport::from_errors("grad:linearity", worst.0, worst.1, 1e-10)
}

/// Finite-difference checks of every differentiable operation.
pub fn grad_suite() -> Vec<OracleReport> {
    let s = GRAD_SEEDS;
    let mut out = Vec::new();
    let mut check = |name: &str, shapes: &[&[usize]], b: &Build| out.push(grad_check(name, shapes, b, s, None));
    check("matmul", &[&[5, 7], &[7, 3]], &|g, v| g.matmul(v[0], v[1]));
    check("transpose", &[&[4, 3]], &|g, v| g.transpose(v[0]));
    check("softmax_rows", &[&[4, 9]], &|g, v| g.softmax_rows(v[0]));
    check("add", &[&[3, 4], &[3, 4]], &|g, v| g.add(v[0], v[1]));
    check("sub", &[&[3, 4], &[3, 4]], &|g, v| g.sub(v[0], v[1]));
    check("mul", &[&[3, 4], &[3, 4]], &|g, v| g.mul(v[0], v[1]));
    check("scale", &[&[3, 4]], &|g, v| Ok(g.scale(v[0], -2.5)));
    check("add_bias", &[&[3, 4], &[4]], &|g, v| g.add_bias(v[0], v[1]));
    check("sigmoid", &[&[3, 4]], &|g, v| Ok(g.sigmoid(v[0])));
    check("gelu", &[&[3, 4]], &|g, v| Ok(g.gelu(v[0])));
    check("abs", &[&[3, 4]], &|g, v| Ok(g.abs(v[0])));
    check("sum", &[&[3, 4]], &|g, v| Ok(g.sum(v[0])));
    check("mean", &[&[3, 4]], &|g, v| Ok(g.mean(v[0])));
    check("max", &[&[3, 4]], &|g, v| Ok(g.max(v[0])));
    check("reshape", &[&[2, 6]], &|g, v| g.reshape(v[0], &[3, 4]));
    check("conv2d", &[&[3, 5, 5], &[2, 3, 3, 3], &[2]], &|g, v| g.conv2d(v[0], v[1], Some(v[2])));
    check("conv2d_1x1", &[&[3, 4, 3], &[5, 3, 1, 1], &[5]], &|g, v| g.conv2d(v[0], v[1], Some(v[2])));
    check("depthwise_conv2d", &[&[3, 5, 4], &[3, 1, 3, 3], &[3]], &|g, v| {
        g.depthwise_conv2d(v[0], v[1], Some(v[2]))
    });
    check("pixel_shuffle", &[&[8, 3, 2]], &|g, v| g.pixel_shuffle(v[0], 2));
    check("window_partition", &[&[2, 4, 6]], &|g, v| Ok(g.window_partition(v[0], 2)?.0));
    check("window_merge", &[&[6, 4, 2]], &|g, v| {
        let layout = WindowLayout::for_map(4, 6, 2)?;
        g.window_merge(v[0], &layout)
    });
    check("reflect_pad", &[&[2, 3, 4]], &|g, v| g.reflect_pad(v[0], 5, 7));
    check("crop", &[&[2, 4, 5]], &|g, v| g.crop(v[0], 3, 2));
    check("gather_rows", &[&[6, 3]], &|g, v| g.gather_rows(v[0], &[4, 1, 1, 5]));
    check("scatter_add_rows", &[&[6, 3], &[3, 3]], &|g, v| g.scatter_add_rows(v[0], &[0, 2, 0], v[1]));
    check("global_avg_pool", &[&[3, 4, 5]], &|g, v| g.global_avg_pool(v[0]));
    check("scale_channels", &[&[3, 4, 4], &[3]], &|g, v| g.scale_channels(v[0], v[1]));
    check("layer_norm", &[&[5, 6], &[6], &[6]], &|g, v| g.layer_norm(v[0], v[1], v[2]));
    check("l1_loss", &[&[3, 4], &[3, 4]], &|g, v| g.l1_loss(v[0], v[1]));
    check("carsa_routed", &[&[3, 9, 4], &[4, 2], &[2, 4, 3], &[2, 4, 3], &[2, 4, 3], &[2, 3, 4]], &|g, v| {
        let o = CarsaOptions { k: 4, strategy: SelectionStrategy::ContentAware, use_gate: true, unit_gates: false, seed: 1 };
        Ok(g.carsa_windows(v[0], &tiny_carsa(v), &o)?.out)
    });
    check("carsa_window", &[&[7, 4], &[4, 2], &[2, 4, 3], &[2, 4, 3], &[2, 4, 3], &[2, 3, 4]], &|g, v| {
        let scores = Tensor::from_fn(&[7, 2], |i| ((i * 5) % 7) as f64 / 7.0 + 0.05);
        let sel: RouterSelection<f64> = select_tokens(&scores, 3, SelectionStrategy::ContentAware, 0)?;
        Ok(g.carsa_window(v[0], &tiny_carsa(v), &sel)?.0)
    });
    check("conv_gelu_l1", &[&[2, 5, 5], &[3, 2, 3, 3], &[3], &[3, 5, 5]], &|g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]))?;
        let y = g.gelu(y);
        g.l1_loss(y, v[3])
    });
    out.push(linearity_check(s));
    out.push(network_grad_check(&network_check_config(), (6, 5), s, 3));
    out
}

fn random_bytes(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random()).collect()
}

/// Production kernels against the reference oracles.
pub fn oracle_suite() -> Vec<OracleReport> {
    let mut out = Vec::new();
    out.push(carsa_dense_equivalence(20));

    let mut rng = rng_for("conv", 0);
    let (mut got, mut want) = (Vec::new(), Vec::new());
    for &(cin, cout, h, w, k) in &[(3, 2, 4, 4, 3), (1, 1, 1, 1, 3), (4, 3, 7, 5, 5), (2, 5, 3, 6, 1), (3, 3, 2, 2, 3)] {
        let x = uniform(&mut rng, &[cin, h, w], -1.0, 1.0);
        let wt = uniform(&mut rng, &[cout, cin, k, k], -1.0, 1.0);
        let b = uniform(&mut rng, &[cout], -1.0, 1.0);
        got.extend(conv2d_forward(&x, &wt, Some(&b)).expect("conv").to_f64());
        want.extend(naive_conv_oracle(&x, &wt, Some(&b)).to_f64());
    }
    out.push(OracleReport::compare("conv2d", &got, &want, 0.0));

    let x = uniform(&mut rng, &[4, 6, 5], -1.0, 1.0);
    let dw = uniform(&mut rng, &[4, 1, 3, 3], -1.0, 1.0);
    let b = uniform(&mut rng, &[4], -1.0, 1.0);
    let mut block = Tensor::zeros(&[4, 4, 3, 3]);
    for c in 0..4 {
        block.data_mut()[(c * 4 + c) * 9..(c * 4 + c + 1) * 9].copy_from_slice(&dw.data()[c * 9..(c + 1) * 9]);
    }
    out.push(OracleReport::compare(
        "depthwise_conv2d",
        &depthwise_conv2d_forward(&x, &dw, Some(&b)).expect("dw").to_f64(),
        &naive_conv_oracle(&x, &block, Some(&b)).to_f64(),
        0.0,
    ));

    let x = uniform(&mut rng, &[5, 3, 7], -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let p = g.global_avg_pool(xv).expect("pool");
    let want: Vec<f64> = x.data().chunks(21).map(|c| c.iter().sum::<f64>() / 21.0).collect();
    out.push(OracleReport::compare("global_avg_pool", g.value(p).data(), &want, 1e-14));


    let (mut got, mut want) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let mut rng = rng_for("topk", seed);
        let scores: Vec<f64> = (0..64).map(|_| (rng.random_range(0..16) as f64) / 16.0).collect();
        got.extend(topk_select(&scores, 16).expect("topk").into_iter().map(|i| i as f64));
        let mut order: Vec<usize> = (0..64).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        want.extend(order[..16].iter().map(|&i| i as f64));
    }
    out.push(OracleReport::compare("topk_select", &got, &want, 0.0));

    let (mut got, mut want) = (Vec::new(), Vec::new());
    let ramp = ImageBuffer::new(8, 8, (0..8 * 8 * 3).map(|i| ((i / 3) * 4 + (i % 3) * 50) as u8).collect()).expect("ramp");
    let mut cases = vec![(ramp, 2)];
    let mut rng = rng_for("bicubic", 0);
    cases.push((ImageBuffer::new(12, 8, random_bytes(&mut rng, 12 * 8 * 3)).expect("img"), 2));
    cases.push((ImageBuffer::new(16, 16, random_bytes(&mut rng, 16 * 16 * 3)).expect("img"), 4));
    cases.push((ImageBuffer::new(9, 6, random_bytes(&mut rng, 9 * 6 * 3)).expect("img"), 3));
    for (img, r) in &cases {
        got.extend(bicubic_downsample(img, *r).expect("bicubic").data().iter().map(|&v| v as f64));
        want.extend(naive_bicubic_oracle(img.data(), img.width(), img.height(), *r).iter().map(|&v| v as f64));
    }
    out.push(OracleReport::compare("bicubic_downsample", &got, &want, 0.0));

    let (mut pg, mut pw, mut sg, mut sw) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for seed in 0..10 {
        let mut rng = rng_for("quality", seed);
        let (w, h) = (rng.random_range(16..28), rng.random_range(16..28));
        let a = random_bytes(&mut rng, w * h * 3);
        let b: Vec<u8> = a.iter().map(|&v| v.saturating_add(rng.random_range(0..40))).collect();
        let (ia, ib) = (ImageBuffer::new(w, h, a.clone()).unwrap(), ImageBuffer::new(w, h, b.clone()).unwrap());
        let border = seed as usize % 3;
        pg.push(psnr(&ia, &ib, border).expect("psnr").db());
        pw.push(psnr_oracle(&a, &b, w, h, border).unwrap_or(f64::INFINITY));
        sg.push(ssim(&ia, &ib, border).expect("ssim"));
        sw.push(ssim_oracle(&a, &b, w, h, border));
    }
    out.push(OracleReport::compare_abs("psnr", &pg, &pw, 1e-9));
    out.push(OracleReport::compare_abs("ssim", &sg, &sw, 1e-9));

    let (mut got, mut want) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let cfg = random_config(&mut rng_for("params", seed));
        got.push(count_params(&cfg) as f64);
        want.push(HimosaWeights::<f32>::zeros(&cfg).expect("weights").num_scalars() as f64);
    }
    out.push(OracleReport::compare("count_params", &got, &want, 0.0));
    out
}

/// Degenerate settings with known outputs: an all-zero layer, single-token
/// selection, and the exact layout invariants.
pub fn degeneracy_suite() -> Vec<OracleReport> {
    let mut out = Vec::new();
    let cfg = ModelConfig { n_layers: 2, ratios: vec![1.0, 2.0], sparsity: vec![1, 2], ..ModelConfig::tiny() };
    let zeros = HimosaWeights::<f64>::zeros(&cfg).expect("weights");
    let mut rng = rng_for("degeneracy", 0);
    let (mut got, mut want) = (Vec::new(), Vec::new());
    for layer in 0..cfg.n_layers {
        let mut g = Graph::new();
        let bound = zeros.bind(&mut g);
        let x0 = uniform(&mut rng, &[cfg.channels, 7, 9], -1.0, 1.0);
        let x = g.constant(x0.clone());
        let y = hierarchical_layer(&mut g, &cfg, &bound, x, 0, layer, 0, false).expect("layer");
        got.extend(g.value(y.x).to_f64());
        want.extend(x0.to_f64());
    }
    out.push(OracleReport::compare("zero_layer_identity", &got, &want, 0.0));

    let (mut got, mut want) = (Vec::new(), Vec::new());
    for draw in 0..5 {
        let mut rng = rng_for("single_token", draw);
        let (n, d, dp, m) = (rng.random_range(2..20), rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..4));
        let x = uniform(&mut rng, &[n, d], -1.0, 1.0);
        let wv = uniform(&mut rng, &[m, d, dp], -1.0, 1.0);
        let wo = uniform(&mut rng, &[m, dp, d], -1.0, 1.0);
        let picks: Vec<(usize, f64)> = (0..m).map(|_| (rng.random_range(0..n), rng.random_range(0.0..1.0))).collect();
        let sel = RouterSelection {
            experts: picks.iter().map(|&(t, gate)| ExpertSelection { indices: vec![t], gates: vec![gate] }).collect(),
        };
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let p = CarsaParams {
            router: g.constant(Tensor::zeros(&[d, m])),
            wq: g.constant(uniform(&mut rng, &[m, d, dp], -1.0, 1.0)),
            wk: g.constant(uniform(&mut rng, &[m, d, dp], -1.0, 1.0)),
            wv: g.constant(wv.clone()),
            wo: g.constant(wo.clone()),
        };
        let (y, _) = g.carsa_window(xv, &p, &sel).expect("carsa");
        got.extend(g.value(y).to_f64());
        // a single key gets all of the softmax mass: y[t] = g · x[t] W^V W^O
        let mut expect = vec![0.0; n * d];
        for (h, &(t, gate)) in picks.iter().enumerate() {
            for o in 0..d {
                let mut acc = 0.0;
                for e in 0..dp {
                    let v: f64 = (0..d).map(|i| x.data()[t * d + i] * wv.data()[(h * d + i) * dp + e]).sum();
                    acc += v * wo.data()[(h * dp + e) * d + o];
                }
                expect[t * d + o] += gate * acc;
            }
        }
        want.extend(expect);
    }
    out.push(OracleReport::compare("single_token_selection", &got, &want, 1e-12));

    let mut g = Graph::new();
    let (mut got, mut want) = (Vec::new(), Vec::new());
    for &(c, h, w, ws) in &[(3, 6, 9, 3), (2, 4, 4, 1), (1, 5, 5, 5), (4, 8, 4, 2)] {
        let x = uniform(&mut rng, &[c, h, w], -1.0, 1.0);
        let xv = g.constant(x.clone());
        let (win, layout) = g.window_partition(xv, ws).expect("partition");
        let back = g.window_merge(win, &layout).expect("merge");
        got.extend(g.value(back).to_f64());
        want.extend(x.to_f64());
    }
    out.push(OracleReport::compare("window_round_trip", &got, &want, 0.0));

    let (mut got, mut want) = (Vec::new(), Vec::new());
    for &(c, r, h, w) in &[(3, 2, 5, 3), (1, 4, 2, 2), (2, 3, 1, 4)] {
        let x = uniform(&mut rng, &[c * r * r, h, w], -1.0, 1.0);
        let xv = g.constant(x.clone());
        let y = g.pixel_shuffle(xv, r).expect("pixel_shuffle");
        let (mut a, mut b) = (x.to_f64(), g.value(y).to_f64());
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        got.extend(b);
        want.extend(a);
    }
    out.push(OracleReport::compare("pixel_shuffle_multiset", &got, &want, 0.0));
    out
}

/// A small random valid configuration.
pub fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let n_layers = rng.random_range(1..4);
    let reduction = [1, 2, 4][rng.random_range(0..3)];
    let mut sparsity: Vec<usize> = (0..n_layers).map(|_| rng.random_range(1..5)).collect();
    sparsity.sort_unstable();
    ModelConfig {
        n_blocks: rng.random_range(1..3),
        n_layers,
        channels: reduction * rng.random_range(1..5),
        base_window: rng.random_range(1..5),
        ratios: (0..n_layers).map(|_| rng.random_range(1..4) as f64).collect(),
        sparsity,
        n_experts: rng.random_range(1..4),
        expert_dim: rng.random_range(1..7),
        scale: [2, 4][rng.random_range(0..2)],
        use_norm: rng.random(),
        use_gate: rng.random(),
        glu_expand: [1.0, 1.5, 2.0][rng.random_range(0..3)],
        cab_reduction: reduction,
        cab_compress: rng.random_range(1..4),
        selection_strategy: SelectionStrategy::ALL[rng.random_range(0..3)],
    }
}

/// At full selection with unit gates the routed kernel must equal dense
/// multi-head attention, over `draws` random shapes with `n ≤ 64`.
pub fn carsa_dense_equivalence(draws: u64) -> OracleReport {
    let (mut worst_abs, mut worst_rel) = (0.0f64, 0.0f64);
    for draw in 0..draws {
        let mut rng = rng_for("carsa_dense", draw);
        let n = rng.random_range(1..=64);
        let d = rng.random_range(1..=12);
        let dp = rng.random_range(1..=12);
        let m = rng.random_range(1..=4);
        let x = uniform(&mut rng, &[n, d], -1.0, 1.0);
        let ws: Vec<Tensor<f64>> = [[m, d, dp], [m, d, dp], [m, d, dp], [m, dp, d]]
            .iter()
            .map(|s| uniform(&mut rng, s, -0.8, 0.8))
            .collect();
        let router = uniform(&mut rng, &[d, m], -1.0, 1.0);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let rv = g.constant(router);
        let scores = crate::model::route_scores(&mut g, xv, rv).expect("scores");
        let sel = select_tokens(g.value(scores), n, SelectionStrategy::ContentAware, draw).expect("select");
        let p = CarsaParams {
            router: rv,
            wq: g.constant(ws[0].clone()),
            wk: g.constant(ws[1].clone()),
            wv: g.constant(ws[2].clone()),
            wo: g.constant(ws[3].clone()),
        };
        let (y, _) = g.carsa_window(xv, &p, &sel.with_unit_gates()).expect("carsa");
        let want = dense_mha_oracle(&x, &ws[0], &ws[1], &ws[2], &ws[3]);
        let r = OracleReport::compare("", g.value(y).data(), want.data(), 1e-8);
        worst_abs = worst_abs.max(r.max_abs);
        worst_rel = worst_rel.max(r.max_rel);
    }
    OracleReport::from_errors("carsa_dense_equivalence", worst_abs, worst_rel, 1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_configs_validate() {
        for seed in 0..50 {
            random_config(&mut rng_for("cfg", seed)).validate().unwrap();
        }
    }
}
