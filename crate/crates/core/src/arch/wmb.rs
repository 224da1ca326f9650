//! Window Mamba block: two windowed VSSB passes, then one global VSSB.

use spi_engine::ops::ZERO_INDEX;
use spi_engine::{Graph, Real, Var};

use super::layers::{cached_index, Builder};
use super::vssb::Vssb;
use crate::error::Result;

/// Window grid for an `h x w` map split into `win x win` tiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGrid {
    pub win: usize,
    pub rows: usize,
    pub cols: usize,
}

impl WindowGrid {
    pub fn new(h: usize, w: usize, win: usize) -> Self {
        let win = win.max(1);
        WindowGrid { win, rows: h.div_ceil(win), cols: w.div_ceil(win) }
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }
}

/// Gather table for `P`: `(B, C, H, W) -> (B * nW, C, win, win)`, zero padded.
///
/// Window `(i, j)` of sample `b` lands at batch index `(b * rows + i) * cols + j`.
pub fn partition_index(b: usize, c: usize, h: usize, w: usize, grid: WindowGrid) -> Vec<usize> {
    let win = grid.win;
    let mut idx = Vec::with_capacity(b * grid.count() * c * win * win);
    for bi in 0..b {
        for i in 0..grid.rows {
            for j in 0..grid.cols {
                for ch in 0..c {
                    for r in 0..win {
                        for q in 0..win {
                            let (y, x) = (i * win + r, j * win + q);
                            idx.push(if y < h && x < w { ((bi * c + ch) * h + y) * w + x } else { ZERO_INDEX });
                        }
                    }
                }
            }
        }
    }
    idx
}

/// Gather table for `R`, the inverse of [`partition_index`] with padding cropped.
pub fn reverse_index(b: usize, c: usize, h: usize, w: usize, grid: WindowGrid) -> Vec<usize> {
    let win = grid.win;
    let mut idx = Vec::with_capacity(b * c * h * w);
    for bi in 0..b {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let bb = (bi * grid.rows + y / win) * grid.cols + x / win;
                    idx.push(((bb * c + ch) * win + y % win) * win + x % win);
                }
            }
        }
    }
    idx
}

/// Applies `f` to every window of `x` and stitches the results back.
pub fn windowed<T: Real>(g: &mut Graph<T>, x: Var, win: usize, f: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let grid = WindowGrid::new(h, w, win);
    let part = cached_index("partition", [b, c, h, w, grid.win], || partition_index(b, c, h, w, grid));
    let parts = g.gather(x, part, [b * grid.count(), c, grid.win, grid.win])?;
    let y = f(g, parts)?;
    let c_out = g.shape(y)[1];
    let rev = cached_index("reverse", [b, c_out, h, w, grid.win], || reverse_index(b, c_out, h, w, grid));
    Ok(g.gather(y, rev, [b, c_out, h, w])?)
}

#[derive(Clone, Debug)]
pub struct Wmb {
    pub local: [Vssb; 2],
    pub global: Vssb,
    pub window: usize,
    /// `false` skips partitioning: all three scans run over the full map.
    pub windowed: bool,
}

impl Wmb {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, channels: usize, state: usize, window: usize, windowed: bool, per_direction_proj: bool) -> Result<Self> {
        b.scope(name, |b| {
            Ok(Wmb {
                local: [
                    Vssb::new(b, "local0", channels, state, per_direction_proj)?,
                    Vssb::new(b, "local1", channels, state, per_direction_proj)?,
                ],
                global: Vssb::new(b, "global", channels, state, per_direction_proj)?,
                window,
                windowed,
            })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for block in &self.local {
            h = if self.windowed { windowed(g, h, self.window, |g, p| block.forward(g, p))? } else { block.forward(g, h)? };
        }
        self.global.forward(g, h)
    }
}
