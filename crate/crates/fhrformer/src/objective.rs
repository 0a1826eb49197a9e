//! Hybrid training objective: masked-patch reconstruction error plus a
//! focal frequency term on windowed DFT magnitudes, mixed by alpha.

use crate::diffcore::{Graph, TensorId};
use crate::model::MaskSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    /// Mixing weight: alpha on reconstruction, (1 - alpha) on frequency.
    pub alpha: f64,
    /// Focal exponent beta in (1 - e^{-delta})^beta.
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            beta: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Data(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.beta < 0.0 {
            return Err(Error::Data(format!("beta {} negative", self.beta)));
        }
        Ok(())
    }
}

/// Number of one-sided spectrum bins for a patch of length `p`.
pub fn spectrum_bins(p: usize) -> usize {
    p / 2 + 1
}

fn masked_rows(
    g: &mut Graph,
    prediction: TensorId,
    target: TensorId,
    mask: &MaskSpec,
) -> Result<(TensorId, TensorId, usize)> {
    let idx = mask.masked_indices();
    if idx.is_empty() {
        return Err(Error::Data("loss undefined with no masked patches".into()));
    }
    let pred_m = g.gather_rows(prediction, &idx)?;
    let tgt_m = g.gather_rows(target, &idx)?;
    Ok((pred_m, tgt_m, idx.len()))
}

/// Mean over masked patches of the squared L2 distance between the
/// predicted and true patch vectors (the per-patch sum is not divided
/// by the patch length).
pub fn recon_loss(
    g: &mut Graph,
    prediction: TensorId,
    target: TensorId,
    mask: &MaskSpec,
) -> Result<TensorId> {
    let (pred_m, tgt_m, n_masked) = masked_rows(g, prediction, target, mask)?;
    let diff = g.sub(pred_m, tgt_m)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum_all(sq);
    Ok(g.scale(total, 1.0 / n_masked as f64))
}

/// Focal frequency term for a set of patches (`[n, p]` rows): per patch,
/// bin-wise squared magnitude error Delta_k of the Hann-windowed
/// one-sided DFT, focally reweighted by (1 - e^{-Delta_k})^beta and
/// averaged over the K = p/2 + 1 bins; then averaged over patches.
pub fn freq_loss(
    g: &mut Graph,
    prediction: TensorId,
    target: TensorId,
    mask: &MaskSpec,
    beta: f64,
) -> Result<TensorId> {
    let (pred_m, tgt_m, _) = masked_rows(g, prediction, target, mask)?;
    let mag_pred = g.dft_magnitude_rows(pred_m);
    let mag_tgt = g.dft_magnitude_rows(tgt_m);
    let diff = g.sub(mag_pred, mag_tgt)?;
    let delta = g.mul(diff, diff)?;
    // weight (1 - e^{-delta})^beta, beta = 1 kept as the plain factor
    let neg = g.scale(delta, -1.0);
    let e = g.exp(neg);
    let flipped = g.scale(e, -1.0);
    let one_minus = g.add_const(flipped, 1.0);
    let weight = if (beta - 1.0).abs() < 1e-15 {
        one_minus
    } else {
        g.pow_const(one_minus, beta)
    };
    let weighted = g.mul(weight, delta)?;
    // mean over bins and patches together = (1/|M|) sum_i (1/K) sum_k
    Ok(g.mean_all(weighted))
}

#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub recon: f64,
    pub freq: f64,
    pub total: f64,
}

/// Build L = alpha * L_recon + (1 - alpha) * L_freq on the graph and
/// return the node together with the component values.
pub fn total_loss(
    g: &mut Graph,
    prediction: TensorId,
    target: TensorId,
    mask: &MaskSpec,
    cfg: &LossConfig,
) -> Result<(TensorId, LossBreakdown)> {
    cfg.validate()?;
    let recon = recon_loss(g, prediction, target, mask)?;
    let freq = freq_loss(g, prediction, target, mask, cfg.beta)?;
    let a = g.scale(recon, cfg.alpha);
    let b = g.scale(freq, 1.0 - cfg.alpha);
    let total = g.add(a, b)?;
    let breakdown = LossBreakdown {
        recon: g.scalar_value(recon),
        freq: g.scalar_value(freq),
        total: g.scalar_value(total),
    };
    Ok((total, breakdown))
}
