//! Evaluation metrics. Pointwise errors are computed in bpm and only at
//! positions that are both inside masked patches and were actually
//! observed in the raw recording — errors against interpolated filler
//! would measure the interpolator, not the model.

use nalgebra::{DMatrix, DVector};

use crate::model::{MaskSpec, Mode, ModelWeights};
use crate::signalio::{FHRSeries, MAX_BPM};
use crate::trainer::validation_mask;
use crate::{Error, Result};

pub const PSNR_CAP_DB: f64 = 200.0;
pub const SSIM_WINDOW: usize = 61;
pub const SSIM_SIGMA: f64 = 7.5;
pub const FID_EPS: f64 = 1e-6;

/// Sample positions that count toward pointwise error: inside a masked
/// patch and originally observed.
pub fn eval_points(mask: &MaskSpec, observed: &[bool], patch_size: usize) -> Vec<usize> {
    let mut idx = Vec::new();
    for i in mask.masked_indices() {
        for j in i * patch_size..(i + 1) * patch_size {
            if observed[j] {
                idx.push(j);
            }
        }
    }
    idx
}

/// Squared and absolute error means over the given positions.
pub fn point_errors(truth: &[f64], pred: &[f64], idx: &[usize]) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Err(Error::Data("no evaluable points".into()));
    }
    let (mut se, mut ae) = (0.0, 0.0);
    for &i in idx {
        let d = pred[i] - truth[i];
        se += d * d;
        ae += d.abs();
    }
    let n = idx.len() as f64;
    Ok((se / n, ae / n))
}

/// Peak signal-to-noise ratio against the per-signal peak over the
/// evaluated truth points, capped at 200 dB for exact reconstruction.
pub fn psnr(mse: f64, truth: &[f64], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::Data("no evaluable points".into()));
    }
    let peak = idx.iter().map(|&i| truth[i].abs()).fold(0.0f64, f64::max);
    if mse == 0.0 || peak == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Pearson correlation over the evaluated points. Degenerate (constant)
/// inputs have no defined correlation and are reported as NaN.
pub fn pearson_cc(truth: &[f64], pred: &[f64], idx: &[usize]) -> f64 {
    let n = idx.len() as f64;
    if idx.len() < 2 {
        return f64::NAN;
    }
    let ma = idx.iter().map(|&i| truth[i]).sum::<f64>() / n;
    let mb = idx.iter().map(|&i| pred[i]).sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for &i in idx {
        let a = truth[i] - ma;
        let b = pred[i] - mb;
        cov += a * b;
        va += a * a;
        vb += b * b;
    }
    if va == 0.0 || vb == 0.0 {
        return f64::NAN;
    }
    cov / (va.sqrt() * vb.sqrt())
}

fn gaussian_weights(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len - 1) as f64 / 2.0;
    let mut w: Vec<f64> = (0..len)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= s;
    }
    w
}

/// Gaussian-weighted 1-D SSIM between two bpm signals: window 61,
/// stride 1, mean over window positions. Signals shorter than the
/// window fall back to a single whole-signal window.
pub fn ssim_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Data(format!(
            "ssim needs equal non-empty signals, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let c1 = (0.01 * MAX_BPM).powi(2);
    let c2 = (0.03 * MAX_BPM).powi(2);
    let win = SSIM_WINDOW.min(a.len());
    let w = gaussian_weights(win, SSIM_SIGMA);
    let n_windows = a.len() - win + 1;
    let mut total = 0.0;
    for s in 0..n_windows {
        let (mut ma, mut mb) = (0.0, 0.0);
        for k in 0..win {
            ma += w[k] * a[s + k];
            mb += w[k] * b[s + k];
        }
        let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
        for k in 0..win {
            let da = a[s + k] - ma;
            let db = b[s + k] - mb;
            va += w[k] * da * da;
            vb += w[k] * db * db;
            cov += w[k] * da * db;
        }
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n_windows as f64)
}

fn mean_and_cov(feats: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = feats.len();
    let d = feats[0].len();
    let mut mu = DVector::zeros(d);
    for f in feats {
        for j in 0..d {
            mu[j] += f[j];
        }
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for f in feats {
        let c = DVector::from_column_slice(f) - &mu;
        cov += &c * c.transpose();
    }
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    (mu, cov)
}

/// Symmetric PSD square root via eigendecomposition; negative
/// eigenvalues from roundoff are clamped to zero.
fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * sqrt_vals * eig.eigenvectors.transpose()
}

/// Frechet distance between Gaussian fits of two feature sets:
/// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 sqrt(sqrt(S1) S2 sqrt(S1))).
/// Near-singular covariances get an eps*I ridge; the flag reports it.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(f64, bool)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Data(format!(
            "frechet distance needs at least 2 samples per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d = a[0].len();
    if b[0].len() != d || a.iter().chain(b).any(|f| f.len() != d) {
        return Err(Error::Data("feature dimension mismatch".into()));
    }
    let (mu1, mut s1) = mean_and_cov(a);
    let (mu2, mut s2) = mean_and_cov(b);
    let min_eig = |m: &DMatrix<f64>| {
        let sym = (m + m.transpose()) * 0.5;
        sym.symmetric_eigen().eigenvalues.min()
    };
    let mut regularized = false;
    if min_eig(&s1) < 1e-10 || min_eig(&s2) < 1e-10 {
        regularized = true;
        for i in 0..d {
            s1[(i, i)] += FID_EPS;
            s2[(i, i)] += FID_EPS;
        }
    }
    let diff = &mu1 - &mu2;
    let root1 = sym_sqrt(&s1);
    let inner = &root1 * &s2 * &root1;
    let cross = sym_sqrt(&inner);
    let dist = diff.dot(&diff) + (s1 + s2 - cross * 2.0).trace();
    if !dist.is_finite() {
        return Err(Error::Numeric("non-finite frechet distance".into()));
    }
    Ok((dist.max(0.0), regularized))
}

#[derive(Debug, Clone)]
pub struct SeriesMetrics {
    pub episode_id: String,
    pub n_points: usize,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub psnr: f64,
    pub cc: f64,
    pub ssim: f64,
}

#[derive(Debug)]
pub struct EvalReport {
    pub per_series: Vec<SeriesMetrics>,
    pub aggregate: SeriesMetrics,
    pub fid: f64,
    pub fid_regularized: bool,
    /// Episodes with no evaluable points, skipped with a reason.
    pub skipped: Vec<(String, String)>,
}

/// Mask-and-reconstruct evaluation over a test split. Masks are drawn
/// from the fixed seed so repeat runs score the same patches. All bpm.
pub fn evaluate(weights: &ModelWeights, test: &[FHRSeries], seed: u64) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Data("empty evaluation split".into()));
    }
    let ps = weights.config.patch_size;
    let mut per_series = Vec::new();
    let mut skipped = Vec::new();
    let mut truth_feats = Vec::new();
    let mut recon_feats = Vec::new();
    for (si, series) in test.iter().enumerate() {
        if series.values.len() % ps != 0 {
            return Err(Error::Data(format!(
                "episode {} has length {}, not a multiple of {ps}",
                series.episode_id,
                series.values.len()
            )));
        }
        let n = series.values.len() / ps;
        let mask = validation_mask(weights, si, seed, n)?;
        let out = weights.forward(&series.values, &mask, Mode::Eval)?;
        let truth_bpm: Vec<f64> = series.values.iter().map(|v| v * MAX_BPM).collect();
        let pred_bpm: Vec<f64> = out.recomposed.iter().map(|v| v * MAX_BPM).collect();
        truth_feats.push(weights.encode_mean_latent(&series.values)?);
        recon_feats.push(weights.encode_mean_latent(&out.recomposed)?);
        let idx = eval_points(&mask, &series.observed_mask, ps);
        if idx.is_empty() {
            skipped.push((series.episode_id.clone(), "no evaluable points".into()));
            continue;
        }
        let (mse, mae) = point_errors(&truth_bpm, &pred_bpm, &idx)?;
        per_series.push(SeriesMetrics {
            episode_id: series.episode_id.clone(),
            n_points: idx.len(),
            mse,
            rmse: mse.sqrt(),
            mae,
            psnr: psnr(mse, &truth_bpm, &idx)?,
            cc: pearson_cc(&truth_bpm, &pred_bpm, &idx),
            ssim: ssim_1d(&truth_bpm, &pred_bpm)?,
        });
    }
    if per_series.is_empty() {
        return Err(Error::Data(
            "no evaluable points in any evaluation episode".into(),
        ));
    }
    let n = per_series.len() as f64;
    let mean = |f: fn(&SeriesMetrics) -> f64| per_series.iter().map(f).sum::<f64>() / n;
    let mse = mean(|m| m.mse);
    let aggregate = SeriesMetrics {
        episode_id: "aggregate".into(),
        n_points: per_series.iter().map(|m| m.n_points).sum(),
        mse,
        rmse: mean(|m| m.rmse),
        mae: mean(|m| m.mae),
        psnr: mean(|m| m.psnr),
        cc: mean(|m| m.cc),
        ssim: mean(|m| m.ssim),
    };
    let (fid, fid_regularized) = frechet_distance(&truth_feats, &recon_feats)?;
    Ok(EvalReport {
        per_series,
        aggregate,
        fid,
        fid_regularized,
        skipped,
    })
}

/// Per-series rows plus the aggregate row as CSV.
pub fn write_report_csv(report: &EvalReport, path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "episode_id",
        "n_points",
        "mse_bpm2",
        "rmse_bpm",
        "mae_bpm",
        "psnr_db",
        "cc",
        "ssim",
    ])?;
    for m in report.per_series.iter().chain(std::iter::once(&report.aggregate)) {
        w.write_record([
            m.episode_id.clone(),
            m.n_points.to_string(),
            format!("{:.6}", m.mse),
            format!("{:.6}", m.rmse),
            format!("{:.6}", m.mae),
            format!("{:.6}", m.psnr),
            format!("{:.6}", m.cc),
            format!("{:.6}", m.ssim),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable summary table.
pub fn format_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>8} {:>10} {:>10} {:>10} {:>8} {:>8} {:>8}\n",
        "episode", "points", "rmse_bpm", "mae_bpm", "psnr_db", "cc", "ssim", "mse"
    ));
    for m in report.per_series.iter().chain(std::iter::once(&report.aggregate)) {
        out.push_str(&format!(
            "{:<14} {:>8} {:>10.3} {:>10.3} {:>10.2} {:>8.4} {:>8.4} {:>8.3}\n",
            m.episode_id, m.n_points, m.rmse, m.mae, m.psnr, m.cc, m.ssim, m.mse
        ));
    }
    out.push_str(&format!(
        "fid: {:.6}{}\n",
        report.fid,
        if report.fid_regularized {
            " (covariance regularized)"
        } else {
            ""
        }
    ));
    for (id, why) in &report.skipped {
        out.push_str(&format!("skipped {id}: {why}\n"));
    }
    out
}
