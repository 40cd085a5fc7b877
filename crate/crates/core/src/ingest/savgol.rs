//! Savitzky–Golay smoothing by local least-squares polynomial fits.

use super::IngestError;

/// Weights `w` such that the least-squares polynomial of degree `order`
/// through the points at `offsets`, evaluated at `offsets[center]`, equals
/// `Σ w_j y_j`.
///
/// The Vandermonde columns are orthonormalised by modified Gram–Schmidt
/// (applied twice), so the hat-matrix row is `Q[center] · Qᵀ`.
fn fit_weights(offsets: &[f64], center: usize, order: usize) -> Vec<f64> {
    let n = offsets.len();
    let degree = order.min(n - 1);
    let scale = offsets.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let xs: Vec<f64> = offsets.iter().map(|x| x / scale).collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(degree + 1);
    for k in 0..=degree {
        let mut v: Vec<f64> = xs.iter().map(|x| x.powi(k as i32)).collect();
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
    }
    (0..n)
        .map(|j| basis.iter().map(|q| q[center] * q[j]).sum())
        .collect()
}

/// Smooths `series` with a centred window of `window` samples and a
/// polynomial of degree `order`.
///
/// Near the ends the window is truncated to the samples that exist and the
/// fit is made on that one-sided window, so the output has the input's
/// length.
pub fn savgol_smooth(series: &[f64], window: usize, order: usize) -> Result<Vec<f64>, IngestError> {
    if window % 2 == 0 {
        return Err(IngestError::Parameter(format!(
            "Savitzky-Golay window must be odd, got {window}"
        )));
    }
    if order >= window {
        return Err(IngestError::Parameter(format!(
            "Savitzky-Golay order {order} must be below window {window}"
        )));
    }
    if series.len() < window {
        return Err(IngestError::Parameter(format!(
            "series of length {} is shorter than window {window}",
            series.len()
        )));
    }
    let half = window / 2;
    let n = series.len();
    let interior_offsets: Vec<f64> = (0..window).map(|j| j as f64 - half as f64).collect();
    let interior = fit_weights(&interior_offsets, half, order);

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let vals = &series[lo..=hi];
        let value = if hi - lo + 1 == window {
            interior.iter().zip(vals).map(|(w, y)| w * y).sum()
        } else {
            let offsets: Vec<f64> = (lo..=hi).map(|j| j as f64 - i as f64).collect();
            let w = fit_weights(&offsets, i - lo, order);
            w.iter().zip(vals).map(|(w, y)| w * y).sum()
        };
        out.push(value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_unchanged() {
        let s = vec![4.25; 40];
        let out = savgol_smooth(&s, 15, 3).unwrap();
        for v in out {
            assert!((v - 4.25).abs() < 1e-12);
        }
    }

    #[test]
    fn classic_15_point_cubic_coefficients() {
        // Tabulated 15-point quadratic/cubic smoothing weights, scaled by 1105.
        let expect = [
            -78., -13., 42., 87., 122., 147., 162., 167., 162., 147., 122., 87., 42., -13., -78.,
        ];
        let offsets: Vec<f64> = (-7..=7).map(f64::from).collect();
        let w = fit_weights(&offsets, 7, 3);
        for (a, e) in w.iter().zip(expect) {
            assert!((a * 1105.0 - e).abs() < 1e-10, "{a} vs {e}");
        }
    }

    #[test]
    fn parameter_errors() {
        let s = vec![0.0; 30];
        assert!(savgol_smooth(&s, 14, 3).is_err());
        assert!(savgol_smooth(&s, 5, 5).is_err());
        assert!(savgol_smooth(&s[..10], 15, 3).is_err());
    }

    #[test]
    fn output_length_matches_input() {
        let s: Vec<f64> = (0..37).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(savgol_smooth(&s, 15, 3).unwrap().len(), 37);
    }
}
