//! The two downstream tasks the trained autoencoder is used for:
//! filling signal-loss gaps in place (inpainting) and recursive
//! multi-step forecasting with empirical error bounds.

use std::path::Path;

use crate::model::{MaskSpec, Mode, ModelWeights};
use crate::signalio::{FHRSeries, MAX_BPM, SAMPLE_RATE_HZ};
use crate::{Error, Result};

/// Clamp a normalized prediction into the representable bpm range.
fn clip_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

#[derive(Debug)]
pub struct InpaintResult {
    /// Normalized signal with model values at unobserved samples only.
    pub values: Vec<f64>,
    /// True where a sample was replaced.
    pub replaced: Vec<bool>,
    /// Set when nothing was missing and the input passed through.
    pub nothing_to_do: bool,
}

/// Fill unobserved samples. Patches containing at least one missing
/// sample are masked and reconstructed; within them only the samples
/// the sensor actually lost are replaced, so every observed sample
/// survives bit-exact.
pub fn inpaint(weights: &ModelWeights, series: &FHRSeries) -> Result<InpaintResult> {
    series.validate()?;
    let ps = weights.config.patch_size;
    if series.values.len() % ps != 0 {
        return Err(Error::Data(format!(
            "episode {} has length {}, not a multiple of {ps}",
            series.episode_id,
            series.values.len()
        )));
    }
    let n = series.values.len() / ps;
    let visible: Vec<bool> = (0..n)
        .map(|i| series.observed_mask[i * ps..(i + 1) * ps].iter().all(|&o| o))
        .collect();
    let n_masked = visible.iter().filter(|&&v| !v).count();
    if n_masked == 0 {
        return Ok(InpaintResult {
            values: series.values.clone(),
            replaced: vec![false; series.values.len()],
            nothing_to_do: true,
        });
    }
    if n_masked == n {
        return Err(Error::Data(format!(
            "episode {}: every patch has missing samples, nothing for the encoder to attend to",
            series.episode_id
        )));
    }
    let mask = MaskSpec::new(visible)?;
    let out = weights.forward(&series.values, &mask, Mode::Eval)?;
    let mut values = series.values.clone();
    let mut replaced = vec![false; values.len()];
    for i in mask.masked_indices() {
        for j in i * ps..(i + 1) * ps {
            if !series.observed_mask[j] {
                values[j] = clip_unit(out.recomposed[j]);
                replaced[j] = true;
            }
        }
    }
    Ok(InpaintResult {
        values,
        replaced,
        nothing_to_do: false,
    })
}

/// Linear bridge across unobserved runs; the comparison baseline for
/// inpainting. Endpoints hold their nearest observed value.
pub fn linear_baseline(series: &FHRSeries) -> Vec<f64> {
    let mut values = series.values.clone();
    let obs: Vec<usize> = (0..values.len())
        .filter(|&i| series.observed_mask[i])
        .collect();
    if obs.is_empty() {
        return values;
    }
    for i in 0..values.len() {
        if series.observed_mask[i] {
            continue;
        }
        let prev = obs.iter().rev().find(|&&o| o < i).copied();
        let next = obs.iter().find(|&&o| o > i).copied();
        values[i] = match (prev, next) {
            (Some(a), Some(b)) => {
                let t = (i - a) as f64 / (b - a) as f64;
                series.values[a] + t * (series.values[b] - series.values[a])
            }
            (Some(a), None) => series.values[a],
            (None, Some(b)) => series.values[b],
            (None, None) => values[i],
        };
    }
    values
}

#[derive(Debug, Clone)]
pub struct ForecastConfig {
    /// Samples of history fed to the model per step.
    pub context_len: usize,
    /// Samples predicted per step.
    pub step_len: usize,
    /// Total samples to predict.
    pub horizon: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            context_len: 3600,
            step_len: 30,
            horizon: 600,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self, patch_size: usize) -> Result<()> {
        for (name, v) in [("context_len", self.context_len), ("step_len", self.step_len)] {
            if v == 0 || v % patch_size != 0 {
                return Err(Error::Data(format!(
                    "{name} {v} must be a positive multiple of the patch size {patch_size}"
                )));
            }
        }
        if self.horizon == 0 {
            return Err(Error::Data("horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.horizon.div_ceil(self.step_len)
    }
}

#[derive(Debug)]
pub struct ForecastResult {
    /// Normalized predictions, exactly `horizon` samples.
    pub predictions: Vec<f64>,
    pub steps_taken: usize,
}

/// Recursive forecasting: a fixed-width window of context plus one
/// future step slides forward, the final step's patches are masked,
/// and each reconstruction becomes context for the next step.
pub fn forecast(
    weights: &ModelWeights,
    history: &[f64],
    cfg: &ForecastConfig,
) -> Result<ForecastResult> {
    let ps = weights.config.patch_size;
    cfg.validate(ps)?;
    if history.len() < cfg.context_len {
        return Err(Error::Data(format!(
            "history has {} samples but forecasting needs at least {}",
            history.len(),
            cfg.context_len
        )));
    }
    let n_ctx = cfg.context_len / ps;
    let n_step = cfg.step_len / ps;
    let mut extended = history.to_vec();
    let mut predictions = Vec::with_capacity(cfg.n_steps() * cfg.step_len);
    for _ in 0..cfg.n_steps() {
        let mut window = extended[extended.len() - cfg.context_len..].to_vec();
        window.extend(std::iter::repeat(0.0).take(cfg.step_len));
        let visible: Vec<bool> = (0..n_ctx + n_step).map(|i| i < n_ctx).collect();
        let mask = MaskSpec::new(visible)?;
        let out = weights.forward(&window, &mask, Mode::Eval)?;
        let step: Vec<f64> = out.recomposed[cfg.context_len..]
            .iter()
            .map(|&v| clip_unit(v))
            .collect();
        predictions.extend_from_slice(&step);
        extended.extend_from_slice(&step);
    }
    let steps_taken = cfg.n_steps();
    predictions.truncate(cfg.horizon);
    Ok(ForecastResult {
        predictions,
        steps_taken,
    })
}

/// Repeat the last history sample; the sanity baseline every learned
/// forecaster has to beat.
pub fn persistence_forecast(history: &[f64], horizon: usize) -> Result<Vec<f64>> {
    let last = *history
        .last()
        .ok_or_else(|| Error::Data("empty history".into()))?;
    Ok(vec![last; horizon])
}

/// Empirical error bounds for one forecast step: each validation
/// series contributes the residual between a one-step forecast anchored
/// at its tail and the held-out truth, and the per-offset standard
/// deviation across series (population form, over every contributing
/// series) becomes the bound profile. Length = step_len.
pub fn forecast_error_bounds(
    weights: &ModelWeights,
    val_set: &[Vec<f64>],
    cfg: &ForecastConfig,
) -> Result<Vec<f64>> {
    let ps = weights.config.patch_size;
    cfg.validate(ps)?;
    let need = cfg.context_len + cfg.step_len;
    let mut residuals: Vec<Vec<f64>> = Vec::new();
    for (i, series) in val_set.iter().enumerate() {
        if series.len() < need {
            return Err(Error::Data(format!(
                "validation series {i} has {} samples but error bounds need {need}",
                series.len()
            )));
        }
        let tail = &series[series.len() - need..];
        let context = &tail[..cfg.context_len];
        let truth = &tail[cfg.context_len..];
        let one_step = ForecastConfig {
            horizon: cfg.step_len,
            ..cfg.clone()
        };
        let pred = forecast(weights, context, &one_step)?.predictions;
        residuals.push(
            pred.iter()
                .zip(truth)
                .map(|(p, t)| p - t)
                .collect(),
        );
    }
    if residuals.len() < 2 {
        return Err(Error::Data(
            "error bounds need at least 2 validation series".into(),
        ));
    }
    let n = residuals.len() as f64;
    let mut bounds = Vec::with_capacity(cfg.step_len);
    for k in 0..cfg.step_len {
        let mean = residuals.iter().map(|r| r[k]).sum::<f64>() / n;
        let var = residuals
            .iter()
            .map(|r| (r[k] - mean).powi(2))
            .sum::<f64>()
            / n;
        bounds.push(var.sqrt());
    }
    Ok(bounds)
}

/// Forecast CSV: time continues the history grid; bounds are the
/// per-offset std profile tiled across the horizon, around the
/// prediction. All bpm.
pub fn write_forecast_csv(
    result: &ForecastResult,
    bounds: &[f64],
    history_len: usize,
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "pred_bpm", "lower_bpm", "upper_bpm"])?;
    for (k, &p) in result.predictions.iter().enumerate() {
        let t = (history_len + k) as f64 / SAMPLE_RATE_HZ;
        let bpm = p * MAX_BPM;
        let b = if bounds.is_empty() {
            0.0
        } else {
            bounds[k % bounds.len()] * MAX_BPM
        };
        w.write_record([
            format!("{t:.1}"),
            format!("{bpm:.6}"),
            format!("{:.6}", bpm - b),
            format!("{:.6}", bpm + b),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Inpainted signal in the recording schema plus a `replaced` column.
pub fn write_inpaint_csv(
    series: &FHRSeries,
    result: &InpaintResult,
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "fhr_bpm", "observed", "replaced"])?;
    for (i, &v) in result.values.iter().enumerate() {
        w.write_record([
            format!("{:.1}", i as f64 / SAMPLE_RATE_HZ),
            format!("{:.6}", v * MAX_BPM),
            if series.observed_mask[i] { "1" } else { "0" }.into(),
            if result.replaced[i] { "1" } else { "0" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
