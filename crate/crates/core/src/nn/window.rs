use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Function, Graph, Tensor, Var};

use super::chw;

/// Metadata to invert a window partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowLayout {
    pub original_hw: (usize, usize),
    pub padded_hw: (usize, usize),
    pub window_size: usize,
    pub grid: (usize, usize),
}

impl WindowLayout {
    /// Layout for an `h×w` map padded up to the next multiple of `ws`.
    pub fn for_map(h: usize, w: usize, ws: usize) -> Result<Self> {
        if ws == 0 {
            return Err(Error::contract("window_layout", "window size must be positive"));
        }
        let (ph, pw) = (h.div_ceil(ws) * ws, w.div_ceil(ws) * ws);
        Ok(WindowLayout { original_hw: (h, w), padded_hw: (ph, pw), window_size: ws, grid: (ph / ws, pw / ws) })
    }

    pub fn num_windows(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window_size * self.window_size
    }

    pub fn needs_padding(&self) -> bool {
        self.original_hw != self.padded_hw
    }

    /// Pixel `(y, x)` of token `t` in window `win`.
    pub fn pixel_of(&self, win: usize, t: usize) -> (usize, usize) {
        let ws = self.window_size;
        let (gy, gx) = (win / self.grid.1, win % self.grid.1);
        (gy * ws + t / ws, gx * ws + t % ws)
    }
}

/// Mirror index without edge repetition, extended periodically so any
/// offset maps into `0..n`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Output element `o` reads input element `map[o]`; the adjoint scatter-adds.
struct IndexMap {
    map: Vec<usize>,
    in_len: usize,
    name: &'static str,
}

impl<T: Real> Function<T> for IndexMap {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); self.in_len];
        for (o, &src) in self.map.iter().enumerate() {
            dx[src] += g[o];
        }
        vec![Some(dx)]
    }
}

impl<T: Real> Graph<T> {
    fn index_map(&mut self, x: Var, map: Vec<usize>, shape: &[usize], name: &'static str) -> Result<Var> {
        let src = self.value(x).data();
        let in_len = src.len();
        let out = Tensor::new(shape, map.iter().map(|&i| src[i]).collect())?;
        Ok(self.record(Box::new(IndexMap { map, in_len, name }), &[x], out))
    }

    /// Splits `[C, H, W]` into `[nw, ws², C]`: windows and tokens row-major,
    /// channels last.
    pub fn window_partition(&mut self, x: Var, ws: usize) -> Result<(Var, WindowLayout)> {
        let (c, h, w) = chw("window_partition", self.shape(x))?;
        if ws == 0 || h % ws != 0 || w % ws != 0 {
            return Err(Error::dim(
                "window_partition",
                format!("{}x{} map is not a multiple of window {}", h, w, ws),
            ));
        }
        let layout = WindowLayout::for_map(h, w, ws)?;
        let (nw, n) = (layout.num_windows(), layout.tokens_per_window());
        let mut map = Vec::with_capacity(nw * n * c);
        for win in 0..nw {
            for t in 0..n {
                let (y, xx) = layout.pixel_of(win, t);
                for ch in 0..c {
                    map.push((ch * h + y) * w + xx);
                }
            }
        }
        let v = self.index_map(x, map, &[nw, n, c], "window_partition")?;
        Ok((v, layout))
    }

    /// Inverse of [`Graph::window_partition`], producing the padded map.
    pub fn window_merge(&mut self, windows: Var, layout: &WindowLayout) -> Result<Var> {
        let s = self.shape(windows).to_vec();
        let (nw, n) = (layout.num_windows(), layout.tokens_per_window());
        let [snw, sn, c] = s[..] else {
            return Err(Error::dim("window_merge", format!("expected [nw, n, C], got {:?}", s)));
        };
        if snw != nw || sn != n {
            return Err(Error::dim(
                "window_merge",
                format!("windows {:?} inconsistent with layout {:?}", s, layout),
            ));
        }
        let (h, w) = layout.padded_hw;
        let mut map = vec![0; c * h * w];
        for win in 0..nw {
            for t in 0..n {
                let (y, xx) = layout.pixel_of(win, t);
                for ch in 0..c {
                    map[(ch * h + y) * w + xx] = (win * n + t) * c + ch;
                }
            }
        }
        self.index_map(windows, map, &[c, h, w], "window_merge")
    }

    /// Reflect-pads `[C, H, W]` on the bottom and right to `[C, ph, pw]`.
    pub fn reflect_pad(&mut self, x: Var, ph: usize, pw: usize) -> Result<Var> {
        let (c, h, w) = chw("reflect_pad", self.shape(x))?;
        if ph < h || pw < w || h == 0 || w == 0 {
            return Err(Error::dim("reflect_pad", format!("cannot pad {}x{} to {}x{}", h, w, ph, pw)));
        }
        let mut map = Vec::with_capacity(c * ph * pw);
        for ch in 0..c {
            for y in 0..ph {
                let sy = reflect_index(y as isize, h);
                for xx in 0..pw {
                    map.push((ch * h + sy) * w + reflect_index(xx as isize, w));
                }
            }
        }
        self.index_map(x, map, &[c, ph, pw], "reflect_pad")
    }

    /// Top-left `[C, h, w]` crop.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (c, sh, sw) = chw("crop", self.shape(x))?;
        if h > sh || w > sw {
            return Err(Error::dim("crop", format!("cannot crop {}x{} to {}x{}", sh, sw, h, w)));
        }
        let mut map = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    map.push((ch * sh + y) * sw + xx);
                }
            }
        }
        self.index_map(x, map, &[c, h, w], "crop")
    }
}
