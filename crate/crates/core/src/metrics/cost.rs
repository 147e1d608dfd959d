use std::fmt;

use crate::error::Result;
use crate::model::ModelConfig;

/// Parameters and FLOPs of one named part of the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModuleCost {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

/// Per-module costs at a given input size. One multiply-accumulate counts
/// as two FLOPs; activations, softmax and normalisation are not counted.
#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub input_hw: (usize, usize),
    pub padded_hw: (usize, usize),
    pub modules: Vec<ModuleCost>,
    /// Attention FLOPs if every window ran dense multi-head attention.
    pub dense_attention_flops: u64,
    pub wall_ms: Option<f64>,
}

impl CostReport {
    pub fn params(&self) -> u64 {
        self.modules.iter().map(|m| m.params).sum()
    }

    pub fn flops(&self) -> u64 {
        self.modules.iter().map(|m| m.flops).sum()
    }

    pub fn attention_flops(&self) -> u64 {
        self.modules.iter().filter(|m| m.name.ends_with(".attn")).map(|m| m.flops).sum()
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# input {}x{} padded {}x{}",
            self.input_hw.0, self.input_hw.1, self.padded_hw.0, self.padded_hw.1
        )?;
        writeln!(f, "module\tparams\tflops")?;
        for m in &self.modules {
            writeln!(f, "{}\t{}\t{}", m.name, m.params, m.flops)?;
        }
        writeln!(f, "total\t{}\t{}", self.params(), self.flops())?;
        let dense_total = self.flops() - self.attention_flops() + self.dense_attention_flops;
        writeln!(
            f,
            "# attention {:.4}G sparse vs {:.4}G dense; network {:.4}G sparse vs {:.4}G dense",
            self.attention_flops() as f64 / 1e9,
            self.dense_attention_flops as f64 / 1e9,
            self.flops() as f64 / 1e9,
            dense_total as f64 / 1e9
        )?;
        if let Some(ms) = self.wall_ms {
            writeln!(f, "# wall_ms {:.3}", ms)?;
        }
        Ok(())
    }
}

fn conv_params(cin: usize, cout: usize, k: usize) -> u64 {
    (cout * cin * k * k + cout) as u64
}

fn conv_flops(cin: usize, cout: usize, k: usize, pixels: usize) -> u64 {
    2 * (k * k * cin * cout * pixels) as u64
}

/// FLOPs of the quadratic attention terms (`QKᵀ` and `AV`) of one window.
pub fn attention_quadratic_flops(k: usize, dp: usize, m: usize) -> u64 {
    (m * 4 * k * k * dp) as u64
}

/// One routed window: scoring `2nd m` plus, per expert,
/// `6kdd' + 4k²d' + 2kd'd`.
pub fn carsa_window_flops(n: usize, d: usize, dp: usize, m: usize, k: usize) -> u64 {
    let scoring = 2 * n * d * m;
    let expert = 3 * 2 * k * d * dp + 2 * 2 * k * k * dp + 2 * k * dp * d;
    (scoring + m * expert) as u64
}

/// One window of dense attention with the same projections.
pub fn dense_window_flops(n: usize, d: usize, dp: usize, m: usize) -> u64 {
    carsa_window_flops(n, d, dp, m, n) - (2 * n * d * m) as u64
}

fn round_up(v: usize, unit: usize) -> usize {
    v.div_ceil(unit) * unit
}

struct LayerParams {
    attn: u64,
    cab: u64,
    glu: u64,
}

fn layer_params(cfg: &ModelConfig) -> LayerParams {
    let (d, dp, m) = (cfg.channels, cfg.expert_dim, cfg.n_experts);
    let norm = if cfg.use_norm { 2 * d as u64 } else { 0 };
    let (ch, se, hid) = (cfg.cab_hidden(), cfg.se_hidden(), cfg.glu_hidden());
    LayerParams {
        attn: norm + (d * m + 4 * m * d * dp) as u64,
        cab: conv_params(d, ch, 3) + conv_params(ch, d, 3) + (d * se + se + se * d + d) as u64,
        glu: norm + 2 * conv_params(d, hid, 1) + (hid * 9 + hid) as u64 + conv_params(hid, d, 1),
    }
}

/// Closed-form parameter count.
pub fn count_params(cfg: &ModelConfig) -> u64 {
    let d = cfg.channels;
    let lp = layer_params(cfg);
    let per_layer = lp.attn + lp.cab + lp.glu;
    conv_params(3, d, 3)
        + cfg.n_blocks as u64 * (cfg.n_layers as u64 * per_layer + conv_params(d, d, 3))
        + conv_params(d, 3 * cfg.scale * cfg.scale, 3)
}

/// Analytic costs for an `h×w` low-resolution input.
pub fn count_flops(cfg: &ModelConfig, h: usize, w: usize) -> Result<CostReport> {
    cfg.validate()?;
    let (d, dp, m) = (cfg.channels, cfg.expert_dim, cfg.n_experts);
    let unit = cfg.pad_unit()?;
    let (ph, pw) = (round_up(h, unit), round_up(w, unit));
    let pixels = ph * pw;
    let lp = layer_params(cfg);
    let (ch, se, hid) = (cfg.cab_hidden(), cfg.se_hidden(), cfg.glu_hidden());
    let mut modules = vec![ModuleCost {
        name: "shallow".into(),
        params: conv_params(3, d, 3),
        flops: conv_flops(3, d, 3, pixels),
    }];
    let mut dense = 0u64;
    for b in 0..cfg.n_blocks {
        for l in 0..cfg.n_layers {
            let ws = cfg.window_size(l)?;
            let nw = (round_up(ph, ws) / ws) * (round_up(pw, ws) / ws);
            let n = ws * ws;
            let k = cfg.tokens_selected(l, n);
            let p = format!("b{b}.l{l}");
            modules.push(ModuleCost {
                name: format!("{p}.attn"),
                params: lp.attn,
                flops: nw as u64 * carsa_window_flops(n, d, dp, m, k),
            });
            dense += nw as u64 * dense_window_flops(n, d, dp, m);
            modules.push(ModuleCost {
                name: format!("{p}.cab"),
                params: lp.cab,
                flops: conv_flops(d, ch, 3, pixels) + conv_flops(ch, d, 3, pixels) + 2 * (2 * d * se) as u64,
            });
            modules.push(ModuleCost {
                name: format!("{p}.glu"),
                params: lp.glu,
                flops: 2 * conv_flops(d, hid, 1, pixels) + 2 * (9 * hid * pixels) as u64 + conv_flops(hid, d, 1, pixels),
            });
        }
        modules.push(ModuleCost {
            name: format!("b{b}.conv"),
            params: conv_params(d, d, 3),
            flops: conv_flops(d, d, 3, pixels),
        });
    }
    let out_c = 3 * cfg.scale * cfg.scale;
    modules.push(ModuleCost { name: "head".into(), params: conv_params(d, out_c, 3), flops: conv_flops(d, out_c, 3, pixels) });
    Ok(CostReport { input_hw: (h, w), padded_hw: (ph, pw), modules, dense_attention_flops: dense, wall_ms: None })
}
