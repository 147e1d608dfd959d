//! Selection masks rendered as grayscale images with the selected tokens
//! tinted red.

use crate::data::ImageBuffer;
use crate::model::LayerRoutes;
use crate::real::Real;

/// Blend weight of the red tint over selected pixels.
const TINT: f64 = 0.6;

/// One image per (block, layer, expert), named `b{B}_l{L}_e{E}.png`, over
/// the luma of `lr`. Routes are those of a forward pass on `lr`.
pub fn render_routes<T: Real>(lr: &ImageBuffer, routes: &[LayerRoutes<T>]) -> Vec<(String, ImageBuffer)> {
    let (w, h) = (lr.width(), lr.height());
    let gray: Vec<f64> = lr
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    let mut out = Vec::new();
    for lr_routes in routes {
        let experts = lr_routes.selections.first().map_or(0, |s| s.num_experts());
        for e in 0..experts {
            let mut mask = vec![false; w * h];
            for (win, sel) in lr_routes.selections.iter().enumerate() {
                for &t in &sel.experts[e].indices {
                    let (y, x) = lr_routes.layout.pixel_of(win, t);
                    if y < h && x < w {
                        mask[y * w + x] = true;
                    }
                }
            }
            let data = gray
                .iter()
                .zip(&mask)
                .flat_map(|(&g, &m)| {
                    let px = if m { [g * (1.0 - TINT) + 255.0 * TINT, g * (1.0 - TINT), g * (1.0 - TINT)] } else { [g; 3] };
                    px.map(|v| v.round().clamp(0.0, 255.0) as u8)
                })
                .collect();
            let img = ImageBuffer::new(w, h, data).expect("mask matches image size");
            out.push((format!("b{}_l{}_e{}.png", lr_routes.block, lr_routes.layer, e), img));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{infer, ForwardOptions, HimosaWeights, ModelConfig};

    #[test]
    fn one_mask_per_expert_with_selected_count() {
        let cfg = ModelConfig::tiny();
        let w = HimosaWeights::<f64>::init(&cfg, 3).unwrap();
        let lr = ImageBuffer::new(8, 8, (0..8 * 8 * 3).map(|i| (i * 7 % 251) as u8).collect()).unwrap();
        let opts = ForwardOptions { record_routes: true, ..Default::default() };
        let (_, routes) = infer(&cfg, &w, &lr.to_tensor::<f64>(), &opts).unwrap();
        let masks = render_routes(&lr, &routes);
        assert_eq!(masks.len(), cfg.n_blocks * cfg.n_layers * cfg.n_experts);
        assert_eq!(masks[0].0, "b0_l0_e0.png");
        for (i, (_, img)) in masks.iter().enumerate() {
            let layer = (i / cfg.n_experts) % cfg.n_layers;
            let ws = cfg.window_size(layer).unwrap();
            let k = cfg.tokens_selected(layer, ws * ws);
            let red = img.data().chunks_exact(3).filter(|p| p[0] != p[1]).count();
            let windows = 8usize.div_ceil(ws).pow(2);
            assert!(red <= k * windows && red > 0, "{red} red pixels, k={k}");
        }
    }
}
