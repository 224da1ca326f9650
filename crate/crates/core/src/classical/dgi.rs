use crate::error::{Result, SpiError};
use crate::forward::{MeasurementMatrix, MeasurementVector};
use crate::image::Image;

/// Raw differential correlation
/// `G(p) = <B I(p)> - (<B> / <R>) <R I(p)>` with `R_r = sum_p I_r(p)`.
pub fn dgi_correlation(m: &MeasurementMatrix, y: &MeasurementVector) -> Result<Vec<f64>> {
    let n_meas = m.n_meas();
    if y.len() != n_meas {
        return Err(SpiError::SizeMismatch { what: "measurement count", expected: n_meas.to_string(), got: y.len().to_string() });
    }
    if n_meas < 2 {
        return Err(SpiError::invalid("DGI needs at least two measurements"));
    }
    let first = m.row(0);
    if m.rows().all(|row| row == first) {
        return Err(SpiError::DegenerateEnsemble);
    }
    let n_pix = m.n_pix();
    let inv = 1.0 / n_meas as f64;
    let refs: Vec<f64> = m.rows().map(|row| row.iter().map(|&v| v as f64).sum()).collect();
    let mean_b = y.values.iter().sum::<f64>() * inv;
    let mean_r = refs.iter().sum::<f64>() * inv;
    if mean_r == 0.0 {
        return Err(SpiError::DegenerateEnsemble);
    }
    let mut bi = vec![0.0; n_pix];
    let mut ri = vec![0.0; n_pix];
    for ((row, &b), &r) in m.rows().zip(&y.values).zip(&refs) {
        for ((p, acc_b), acc_r) in row.iter().zip(bi.iter_mut()).zip(ri.iter_mut()) {
            let p = *p as f64;
            *acc_b += b * p;
            *acc_r += r * p;
        }
    }
    let k = mean_b / mean_r;
    Ok(bi.iter().zip(&ri).map(|(b, r)| (b - k * r) * inv).collect())
}

/// Differential ghost imaging, min-max normalized to `[0, 1]`.
pub fn dgi_reconstruct(m: &MeasurementMatrix, y: &MeasurementVector) -> Result<Image> {
    let g = dgi_correlation(m, y)?;
    Ok(Image::new(m.height, m.width, g)?.normalized())
}
