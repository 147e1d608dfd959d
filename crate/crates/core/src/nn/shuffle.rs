use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Function, Graph, Tensor, Var};

use super::chw;

/// Source flat index for each output element of a pixel shuffle.
fn shuffle_map(c_out: usize, h: usize, w: usize, r: usize) -> Vec<usize> {
    let (oh, ow) = (h * r, w * r);
    let mut map = Vec::with_capacity(c_out * oh * ow);
    for c in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let (y, i, x, j) = (oy / r, oy % r, ox / r, ox % r);
                let src_c = c * r * r + i * r + j;
                map.push((src_c * h + y) * w + x);
            }
        }
    }
    map
}

struct PixelShuffle {
    map: Vec<usize>,
}

impl<T: Real> Function<T> for PixelShuffle {
    fn name(&self) -> &'static str {
        "pixel_shuffle"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); g.len()];
        for (o, &src) in self.map.iter().enumerate() {
            dx[src] = g[o];
        }
        vec![Some(dx)]
    }
}

impl<T: Real> Graph<T> {
    /// Rearranges `[r²·C, H, W]` into `[C, r·H, r·W]`; channel `c·r² + i·r + j`
    /// lands at sub-pixel offset `(i, j)`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let (c, h, w) = chw("pixel_shuffle", self.shape(x))?;
        if r == 0 || c % (r * r) != 0 {
            return Err(Error::dim(
                "pixel_shuffle",
                format!("{} channels not divisible by r²={}", c, r * r),
            ));
        }
        let c_out = c / (r * r);
        let map = shuffle_map(c_out, h, w, r);
        let src = self.value(x).data();
        let out = Tensor::new(&[c_out, h * r, w * r], map.iter().map(|&i| src[i]).collect())?;
        Ok(self.record(Box::new(PixelShuffle { map }), &[x], out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_channels_to_two_by_two() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.pixel_shuffle(x, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn r_one_is_identity() {
        let mut g = Graph::<f64>::new();
        let t = Tensor::from_fn(&[3, 2, 5], |i| i as f64);
        let x = g.constant(t.clone());
        let y = g.pixel_shuffle(x, 1).unwrap();
        assert_eq!(g.value(y).data(), t.data());
    }

    #[test]
    fn indivisible_channels() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[6, 2, 2]));
        assert!(matches!(g.pixel_shuffle(x, 2), Err(Error::Dimension { .. })));
    }
}
