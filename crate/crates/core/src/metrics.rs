//! Quantitative evaluation: PSNR and SSIM for restoration quality, RMSE and
//! Abs Rel for surface height (after gauge alignment), and a gauge-free
//! distortion-correlation proxy.
//!
//! SSIM runs on Rec. 601 luma with the standard 11x11 Gaussian window,
//! sigma 1.5, K1 = 0.01, K2 = 0.03 at dynamic range 1.0. A learned
//! perceptual metric is deliberately not reported (it would pull in a
//! pretrained network), so scores here are not comparable with published
//! perceptual columns.

use crate::error::{Error, Result};
use crate::wavesim::Raster;

/// Evaluation summary; serialized as flat `key = value` text by the app.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub height_rmse: Option<f64>,
    pub height_abs_rel: Option<f64>,
    /// Per-frame Pearson correlation of distortion fields; `None` entries
    /// mark frames where one field has zero variance.
    pub distortion_correlation: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn distortion_correlation_median(&self) -> Option<f64> {
        let mut vals: Vec<f64> = self
            .distortion_correlation
            .iter()
            .filter_map(|v| *v)
            .collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = vals.len();
        Some(if n % 2 == 1 {
            vals[n / 2]
        } else {
            0.5 * (vals[n / 2 - 1] + vals[n / 2])
        })
    }
}

fn check_same_shape(op: &'static str, a: &Raster, b: &Raster) -> Result<()> {
    if a.width != b.width || a.height != b.height || a.channels != b.channels {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![a.height, a.width, a.channels],
            rhs: vec![b.height, b.width, b.channels],
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all channels, for values in [0, 1];
/// capped at 100 dB when the mean squared error drops below 1e-10.
pub fn psnr(a: &Raster, b: &Raster) -> Result<f64> {
    check_same_shape("psnr", a, b)?;
    let mut mse = 0.0;
    for (x, y) in a.data.iter().zip(b.data.iter()) {
        let d = x - y;
        mse += d * d;
    }
    mse /= a.data.len() as f64;
    Ok(if mse < 1e-10 {
        100.0
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

/// Rec. 601 luma of a color raster (identity for single-channel input).
fn luma(r: &Raster) -> Result<Vec<f64>> {
    match r.channels {
        1 => Ok(r.data.clone()),
        3 => Ok(r
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()),
        c => Err(Error::Input(format!(
            "ssim expects 1 or 3 channels, got {c}"
        ))),
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, wi) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *wi = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *wi;
    }
    for wi in w.iter_mut() {
        *wi /= sum;
    }
    w
}

/// Mean local SSIM over all fully-interior 11x11 windows, on luma, with a
/// separable Gaussian weighting. Dynamic range 1.0.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    check_same_shape("ssim", a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Input(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    let la = luma(a)?;
    let lb = luma(b)?;
    let (w, h) = (a.width, a.height);
    let win = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    // separable horizontal pass over the five window statistics
    let cols_out = w - SSIM_WINDOW + 1;
    let rows_out = h - SSIM_WINDOW + 1;
    let mut hpass = vec![[0.0f64; 5]; cols_out * h];
    for row in 0..h {
        for col in 0..cols_out {
            let mut acc = [0.0; 5];
            for (k, wk) in win.iter().enumerate() {
                let xa = la[row * w + col + k];
                let xb = lb[row * w + col + k];
                acc[0] += wk * xa;
                acc[1] += wk * xb;
                acc[2] += wk * xa * xa;
                acc[3] += wk * xb * xb;
                acc[4] += wk * xa * xb;
            }
            hpass[row * cols_out + col] = acc;
        }
    }

    let mut total = 0.0;
    for row in 0..rows_out {
        for col in 0..cols_out {
            let mut s = [0.0f64; 5];
            for (k, wk) in win.iter().enumerate() {
                let cell = &hpass[(row + k) * cols_out + col];
                for (si, ci) in s.iter_mut().zip(cell.iter()) {
                    *si += wk * ci;
                }
            }
            let (mu_a, mu_b) = (s[0], s[1]);
            let var_a = s[2] - mu_a * mu_a;
            let var_b = s[3] - mu_b * mu_b;
            let cov = s[4] - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
        }
    }
    Ok(total / (rows_out * cols_out) as f64)
}

/// Subtract the prediction's mean and add the reference mean, flipping the
/// sign first when the centered correlation with the reference is negative.
/// Constant offset and global sign are gauge freedoms of the height field:
/// they leave every observed frame unchanged, so they cannot be recovered
/// and must not be penalized.
pub fn gauge_align(pred: &Raster, reference: &Raster) -> Result<Raster> {
    check_same_shape("gauge_align", pred, reference)?;
    let n = pred.data.len() as f64;
    let mean_p: f64 = pred.data.iter().sum::<f64>() / n;
    let mean_g: f64 = reference.data.iter().sum::<f64>() / n;
    let mut corr = 0.0;
    for (p, g) in pred.data.iter().zip(reference.data.iter()) {
        corr += (p - mean_p) * (g - mean_g);
    }
    let sign = if corr < 0.0 { -1.0 } else { 1.0 };
    let mut out = pred.clone();
    for v in out.data.iter_mut() {
        *v = sign * (*v - mean_p) + mean_g;
    }
    Ok(out)
}

/// Gauge-align each predicted frame against its reference, then pool RMSE
/// and mean absolute relative error over the whole sequence.
pub fn height_errors(pred: &[Raster], reference: &[Raster]) -> Result<(f64, f64)> {
    if pred.len() != reference.len() || pred.is_empty() {
        return Err(Error::Input(format!(
            "height sequences differ in length: {} vs {}",
            pred.len(),
            reference.len()
        )));
    }
    let mut sq_sum = 0.0;
    let mut rel_sum = 0.0;
    let mut count = 0usize;
    for (p, g) in pred.iter().zip(reference.iter()) {
        if g.data.iter().any(|&v| v <= 0.0) {
            return Err(Error::Input(
                "height reference must be strictly positive for Abs Rel".into(),
            ));
        }
        let aligned = gauge_align(p, g)?;
        for (pv, gv) in aligned.data.iter().zip(g.data.iter()) {
            let d = pv - gv;
            sq_sum += d * d;
            rel_sum += d.abs() / gv;
            count += 1;
        }
    }
    Ok(((sq_sum / count as f64).sqrt(), rel_sum / count as f64))
}

/// Per-frame Pearson correlation between predicted and reference distortion
/// fields over all pixels and both components, after removing each
/// sequence's global mean (a constant distortion offset is absorbed by the
/// image field and is not recoverable).
///
/// Frames where either field has zero variance report `None`.
pub fn distortion_correlation(
    pred: &[Raster],
    reference: &[Raster],
) -> Result<Vec<Option<f64>>> {
    if pred.len() != reference.len() || pred.is_empty() {
        return Err(Error::Input(format!(
            "distortion sequences differ in length: {} vs {}",
            pred.len(),
            reference.len()
        )));
    }
    for (p, g) in pred.iter().zip(reference.iter()) {
        check_same_shape("distortion_correlation", p, g)?;
    }
    let seq_mean = |frames: &[Raster]| -> f64 {
        let total: f64 = frames.iter().map(|f| f.data.iter().sum::<f64>()).sum();
        let count: usize = frames.iter().map(|f| f.data.len()).sum();
        total / count as f64
    };
    let mp = seq_mean(pred);
    let mg = seq_mean(reference);

    let mut out = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(reference.iter()) {
        let n = p.data.len() as f64;
        let mean_p = p.data.iter().map(|v| v - mp).sum::<f64>() / n;
        let mean_g = g.data.iter().map(|v| v - mg).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut var_p = 0.0;
        let mut var_g = 0.0;
        for (pv, gv) in p.data.iter().zip(g.data.iter()) {
            let dp = (pv - mp) - mean_p;
            let dg = (gv - mg) - mean_g;
            cov += dp * dg;
            var_p += dp * dp;
            var_g += dg * dg;
        }
        if var_p <= 0.0 || var_g <= 0.0 {
            out.push(None);
        } else {
            out.push(Some(cov / (var_p.sqrt() * var_g.sqrt())));
        }
    }
    Ok(out)
}
