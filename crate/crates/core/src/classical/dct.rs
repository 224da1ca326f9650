/// Orthonormal 2-D DCT-II on an `h x w` row-major grid.
#[derive(Clone, Debug)]
pub struct Dct2 {
    h: usize,
    w: usize,
    basis_h: Vec<f64>,
    basis_w: Vec<f64>,
}

fn basis(n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n * n];
    for k in 0..n {
        let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            b[k * n + i] = s * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    b
}

impl Dct2 {
    pub fn new(h: usize, w: usize) -> Self {
        Dct2 { h, w, basis_h: basis(h), basis_w: basis(w) }
    }

    /// Coefficients `D_h X D_w^T`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x, false)
    }

    /// Image `D_h^T C D_w`.
    pub fn inverse(&self, c: &[f64]) -> Vec<f64> {
        self.apply(c, true)
    }

    fn apply(&self, x: &[f64], inverse: bool) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        assert_eq!(x.len(), h * w, "dct input length");
        let bw = |k: usize, i: usize| if inverse { self.basis_w[i * w + k] } else { self.basis_w[k * w + i] };
        let bh = |k: usize, i: usize| if inverse { self.basis_h[i * h + k] } else { self.basis_h[k * h + i] };
        let mut rows = vec![0.0; h * w];
        for r in 0..h {
            let src = &x[r * w..(r + 1) * w];
            for k in 0..w {
                rows[r * w + k] = src.iter().enumerate().map(|(i, v)| v * bw(k, i)).sum();
            }
        }
        let mut out = vec![0.0; h * w];
        for k in 0..h {
            for i in 0..h {
                let b = bh(k, i);
                if b == 0.0 {
                    continue;
                }
                let (dst, src) = (k * w, i * w);
                for c in 0..w {
                    out[dst + c] += b * rows[src + c];
                }
            }
        }
        out
    }
}
