use crate::error::Result;
use crate::nn::WindowLayout;
use crate::real::Real;
use crate::tensor::{Graph, Var};

use super::cab::channel_attention;
use super::carsa::{CarsaOptions, CarsaParams};
use super::config::ModelConfig;
use super::glu::conv_glu;
use super::router::RouterSelection;
use super::weights::{layer_prefix, BoundWeights};

pub struct LayerOutput<T> {
    pub x: Var,
    /// Window grid the attention ran on (after any reflect padding).
    pub layout: WindowLayout,
    pub selections: Vec<RouterSelection<T>>,
    pub attn_macs: u64,
}

fn norm_tokens<T: Real>(g: &mut Graph<T>, tokens: Var, w: &BoundWeights, name: &str) -> Result<Var> {
    let gain = w.get(&format!("{name}.gain"))?;
    let shift = w.get(&format!("{name}.shift"))?;
    g.layer_norm(tokens, gain, shift)
}

/// One hierarchical layer on a `[C, H, W]` map:
/// `x + carsa(x) + cab(x)`, then `+ glu(x)`.
///
/// A map that the layer's window does not divide is reflect-padded for the
/// attention branch only and cropped back afterwards.
#[allow(clippy::too_many_arguments)]
pub fn hierarchical_layer<T: Real>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    w: &BoundWeights,
    x: Var,
    block: usize,
    layer: usize,
    strategy_seed: u64,
    unit_gates: bool,
) -> Result<LayerOutput<T>> {
    let prefix = layer_prefix(block, layer);
    let ws = cfg.window_size(layer)?;
    let [c, h, wd] = g.shape(x)[..] else {
        return Err(crate::Error::dim("hierarchical_layer", format!("expected [C, H, W], got {:?}", g.shape(x))));
    };

    let x_cab = channel_attention(g, x, w, &prefix)?;

    let (ph, pw) = ((ws - h % ws) % ws, (ws - wd % ws) % ws);
    let padded = if ph > 0 || pw > 0 { g.reflect_pad(x, h + ph, wd + pw)? } else { x };
    let (windows, layout) = g.window_partition(padded, ws)?;
    let (nw, n) = (layout.num_windows(), layout.tokens_per_window());
    let mut tokens = windows;
    if cfg.use_norm {
        let flat = g.reshape(windows, &[nw * n, c])?;
        let normed = norm_tokens(g, flat, w, &format!("{prefix}.norm1"))?;
        tokens = g.reshape(normed, &[nw, n, c])?;
    }
    let params = CarsaParams {
        router: w.get(&format!("{prefix}.router.w"))?,
        wq: w.get(&format!("{prefix}.attn.wq"))?,
        wk: w.get(&format!("{prefix}.attn.wk"))?,
        wv: w.get(&format!("{prefix}.attn.wv"))?,
        wo: w.get(&format!("{prefix}.attn.wo"))?,
    };
    let opts = CarsaOptions {
        k: cfg.tokens_selected(layer, n),
        strategy: cfg.selection_strategy,
        use_gate: cfg.use_gate,
        unit_gates,
        seed: strategy_seed,
    };
    let attn = g.carsa_windows(tokens, &params, &opts)?;
    let merged = g.window_merge(attn.out, &layout)?;
    let x_carsa = if ph > 0 || pw > 0 { g.crop(merged, h, wd)? } else { merged };

    let x1 = g.add(x, x_carsa)?;
    let x1 = g.add(x1, x_cab)?;

    let glu_in = if cfg.use_norm {
        let (tok, one) = g.window_partition(x1, 1)?;
        let flat = g.reshape(tok, &[h * wd, c])?;
        let normed = norm_tokens(g, flat, w, &format!("{prefix}.norm2"))?;
        let normed = g.reshape(normed, &[h * wd, 1, c])?;
        g.window_merge(normed, &one)?
    } else {
        x1
    };
    let glu = conv_glu(g, glu_in, w, &prefix)?;
    let out = g.add(x1, glu)?;
    Ok(LayerOutput { x: out, layout, selections: attn.selections, attn_macs: attn.macs })
}
