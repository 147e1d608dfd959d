use crate::error::Result;
use crate::real::Real;
use crate::tensor::{Graph, Var};

use super::weights::BoundWeights;

/// Gated convolutional feed-forward: `out(dw(value(x)) ⊙ GELU(gate(x)))`.
pub fn conv_glu<T: Real>(g: &mut Graph<T>, x: Var, w: &BoundWeights, prefix: &str) -> Result<Var> {
    let p = |s: &str| w.get(&format!("{prefix}.glu.{s}"));
    let v = g.conv2d(x, p("value.w")?, Some(p("value.b")?))?;
    let v = g.depthwise_conv2d(v, p("dw.w")?, Some(p("dw.b")?))?;
    let gate = g.conv2d(x, p("gate.w")?, Some(p("gate.b")?))?;
    let gate = g.gelu(gate);
    let h = g.mul(v, gate)?;
    g.conv2d(h, p("out.w")?, Some(p("out.b")?))
}
