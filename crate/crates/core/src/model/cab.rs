use crate::error::Result;
use crate::real::Real;
use crate::tensor::{Graph, Var};

use super::weights::BoundWeights;

/// Channel attention block: conv-GELU-conv, then squeeze-excite rescaling.
/// `prefix` names the layer, e.g. `b0.l2`.
pub fn channel_attention<T: Real>(g: &mut Graph<T>, x: Var, w: &BoundWeights, prefix: &str) -> Result<Var> {
    let p = |s: &str| w.get(&format!("{prefix}.cab.{s}"));
    let h = g.conv2d(x, p("conv1.w")?, Some(p("conv1.b")?))?;
    let h = g.gelu(h);
    let y = g.conv2d(h, p("conv2.w")?, Some(p("conv2.b")?))?;
    let c = g.shape(y)[0];
    let pooled = g.global_avg_pool(y)?;
    let pooled = g.reshape(pooled, &[1, c])?;
    let z = g.matmul(pooled, p("se1.w")?)?;
    let z = g.add_bias(z, p("se1.b")?)?;
    let z = g.gelu(z);
    let z = g.matmul(z, p("se2.w")?)?;
    let z = g.add_bias(z, p("se2.b")?)?;
    let s = g.sigmoid(z);
    let s = g.reshape(s, &[c])?;
    g.scale_channels(y, s)
}
