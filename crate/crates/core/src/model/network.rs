use crate::error::{Error, Result};
use crate::nn::WindowLayout;
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

use super::config::ModelConfig;
use super::layer::hierarchical_layer;
use super::router::{mix_seed, RouterSelection};
use super::weights::{BoundWeights, HimosaWeights};

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Seeds the random selection strategy.
    pub seed: u64,
    /// Keep every layer's selections in the output.
    pub record_routes: bool,
    /// Force every gate to 1.
    pub unit_gates: bool,
}

/// Selections of one layer, window by window.
#[derive(Clone, Debug)]
pub struct LayerRoutes<T> {
    pub block: usize,
    pub layer: usize,
    pub layout: WindowLayout,
    pub selections: Vec<RouterSelection<T>>,
}

pub struct ForwardOutput<T> {
    /// `[3, r·h, r·w]`
    pub sr: Var,
    pub routes: Vec<LayerRoutes<T>>,
    /// MACs executed inside the attention branches.
    pub attn_macs: u64,
}

/// Full network on a `[3, h, w]` image in [0, 1].
pub fn himosa_forward<T: Real>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    w: &BoundWeights,
    lr: Var,
    opts: &ForwardOptions,
) -> Result<ForwardOutput<T>> {
    let [3, h, wd] = g.shape(lr)[..] else {
        return Err(Error::dim("himosa_forward", format!("expected [3, h, w], got {:?}", g.shape(lr))));
    };
    if h == 0 || wd == 0 {
        return Err(Error::dim("himosa_forward", "empty image"));
    }
    let unit = cfg.pad_unit()?;
    let (ph, pw) = ((unit - h % unit) % unit, (unit - wd % unit) % unit);
    let input = if ph > 0 || pw > 0 { g.reflect_pad(lr, h + ph, wd + pw)? } else { lr };

    let x0 = g.conv2d(input, w.get("shallow.w")?, Some(w.get("shallow.b")?))?;
    let mut keep: Vec<Var> = w.vars().collect();
    keep.push(x0);
    let mut x = x0;
    let mut routes = Vec::new();
    let mut attn_macs = 0;
    for b in 0..cfg.n_blocks {
        for l in 0..cfg.n_layers {
            let seed = mix_seed(&[opts.seed, b as u64, l as u64]);
            let out = hierarchical_layer(g, cfg, w, x, b, l, seed, opts.unit_gates)?;
            x = out.x;
            attn_macs += out.attn_macs;
            if opts.record_routes {
                routes.push(LayerRoutes { block: b, layer: l, layout: out.layout, selections: out.selections });
            }
            keep.push(x);
            g.release_except(&keep);
            keep.pop();
        }
        x = g.conv2d(x, w.get(&format!("b{b}.conv.w"))?, Some(w.get(&format!("b{b}.conv.b"))?))?;
    }
    let body = g.add(x, x0)?;
    let head = g.conv2d(body, w.get("head.w")?, Some(w.get("head.b")?))?;
    let up = g.pixel_shuffle(head, cfg.scale)?;
    let sr = if ph > 0 || pw > 0 { g.crop(up, cfg.scale * h, cfg.scale * wd)? } else { up };
    Ok(ForwardOutput { sr, routes, attn_macs })
}

/// Untracked forward that frees intermediates layer by layer.
pub fn infer<T: Real>(
    cfg: &ModelConfig,
    weights: &HimosaWeights<T>,
    lr: &Tensor<T>,
    opts: &ForwardOptions,
) -> Result<(Tensor<T>, Vec<LayerRoutes<T>>)> {
    let mut g = Graph::inference();
    let bound = weights.bind(&mut g);
    let x = g.constant(lr.clone());
    let out = himosa_forward(&mut g, cfg, &bound, x, opts)?;
    Ok((g.value(out.sr).clone(), out.routes))
}
