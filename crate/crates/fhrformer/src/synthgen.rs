//! Synthetic FHR-like signal generation: baseline plus band-limited
//! sinusoidal variability, smooth acceleration/deceleration bumps and
//! Gaussian noise, with controlled dropout-gap and Doppler-artifact
//! injection whose positions are returned as ground truth for oracles.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::signalio::{RawRecording, SAMPLE_RATE_HZ};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Episode length in samples (2 Hz).
    pub len: usize,
    pub baseline_bpm: (f64, f64),
    pub variability_amp_bpm: (f64, f64),
    pub variability_freq_hz: (f64, f64),
    pub n_accels: usize,
    pub n_decels: usize,
    pub accel_amp_bpm: (f64, f64),
    pub decel_amp_bpm: (f64, f64),
    pub event_duration_s: (f64, f64),
    pub noise_std_bpm: f64,
    pub gap_count: usize,
    pub gap_len_s: (f64, f64),
    pub artifact_count: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            len: 7200,
            baseline_bpm: (110.0, 160.0),
            variability_amp_bpm: (5.0, 15.0),
            variability_freq_hz: (0.03, 0.2),
            n_accels: 3,
            n_decels: 2,
            accel_amp_bpm: (10.0, 20.0),
            decel_amp_bpm: (10.0, 25.0),
            event_duration_s: (20.0, 60.0),
            noise_std_bpm: 1.0,
            gap_count: 3,
            gap_len_s: (10.0, 60.0),
            artifact_count: 4,
        }
    }
}

impl SynthConfig {
    /// Short profile for fast tests: 6 minutes instead of an hour.
    pub fn short() -> Self {
        Self {
            len: 720,
            n_accels: 1,
            n_decels: 1,
            gap_count: 2,
            gap_len_s: (5.0, 30.0),
            artifact_count: 2,
            ..Self::default()
        }
    }
}

/// Generate a fully observed FHR-like signal, clipped to (30, 220) bpm.
/// Pure function of `(cfg, seed)`.
pub fn generate_signal(cfg: &SynthConfig, seed: u64, episode_id: &str) -> RawRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.len;
    let baseline = rng.gen_range(cfg.baseline_bpm.0..=cfg.baseline_bpm.1);
    let amp_total = rng.gen_range(cfg.variability_amp_bpm.0..=cfg.variability_amp_bpm.1);

    // three band-limited sinusoids sharing the variability amplitude
    let n_components = 3;
    let comps: Vec<(f64, f64, f64)> = (0..n_components)
        .map(|_| {
            let f = rng.gen_range(cfg.variability_freq_hz.0..=cfg.variability_freq_hz.1);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = amp_total / n_components as f64;
            (f, phase, amp)
        })
        .collect();

    // smooth Gaussian-shaped accelerations and decelerations
    let mut bumps: Vec<(f64, f64, f64)> = Vec::new(); // (center_s, sigma_s, amp)
    for _ in 0..cfg.n_accels {
        let center = rng.gen_range(0.0..n as f64 / SAMPLE_RATE_HZ);
        let dur = rng.gen_range(cfg.event_duration_s.0..=cfg.event_duration_s.1);
        let amp = rng.gen_range(cfg.accel_amp_bpm.0..=cfg.accel_amp_bpm.1);
        bumps.push((center, dur / 4.0, amp));
    }
    for _ in 0..cfg.n_decels {
        let center = rng.gen_range(0.0..n as f64 / SAMPLE_RATE_HZ);
        let dur = rng.gen_range(cfg.event_duration_s.0..=cfg.event_duration_s.1);
        let amp = rng.gen_range(cfg.decel_amp_bpm.0..=cfg.decel_amp_bpm.1);
        bumps.push((center, dur / 4.0, -amp));
    }

    let noise = Normal::new(0.0, cfg.noise_std_bpm.max(f64::MIN_POSITIVE)).unwrap();
    let fhr = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE_HZ;
            let mut v = baseline;
            for &(f, phase, amp) in &comps {
                v += amp * (std::f64::consts::TAU * f * t + phase).sin();
            }
            for &(c, sigma, amp) in &bumps {
                v += amp * (-(t - c) * (t - c) / (2.0 * sigma * sigma)).exp();
            }
            if cfg.noise_std_bpm > 0.0 {
                v += noise.sample(&mut rng);
            }
            Some(v.clamp(30.0 + 1e-9, 220.0 - 1e-9))
        })
        .collect();
    RawRecording {
        episode_id: episode_id.to_string(),
        fhr,
    }
}

/// Mark `gap_count` disjoint intervals missing. Returns the `(start,
/// len)` list for ground-truth oracles.
pub fn inject_dropouts(
    rec: &RawRecording,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<(RawRecording, Vec<(usize, usize)>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rec.len();
    let max_gap = (cfg.gap_len_s.1 * SAMPLE_RATE_HZ) as usize;
    if cfg.gap_count * max_gap > n * 9 / 10 {
        return Err(Error::Data(format!(
            "requested gap mass ({} x {max_gap}) exceeds 90% of signal length {n}",
            cfg.gap_count
        )));
    }
    let mut out = rec.fhr.clone();
    let mut gaps: Vec<(usize, usize)> = Vec::new();
    let mut attempts = 0;
    while gaps.len() < cfg.gap_count {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Data("could not place disjoint gaps".into()));
        }
        let len = (rng.gen_range(cfg.gap_len_s.0..=cfg.gap_len_s.1) * SAMPLE_RATE_HZ)
            .round()
            .max(1.0) as usize;
        if len >= n {
            continue;
        }
        let start = rng.gen_range(0..n - len);
        if gaps
            .iter()
            .any(|&(s, l)| start < s + l && s < start + len)
        {
            continue;
        }
        gaps.push((start, len));
    }
    gaps.sort_unstable();
    for &(start, len) in &gaps {
        for v in out.iter_mut().skip(start).take(len) {
            *v = None;
        }
    }
    Ok((
        RawRecording {
            episode_id: rec.episode_id.clone(),
            fhr: out,
        },
        gaps,
    ))
}

/// Replace `artifact_count` observed samples with exactly 2x or 0.5x
/// their value, reporting the positions.
pub fn inject_doppler_artifacts(
    rec: &RawRecording,
    cfg: &SynthConfig,
    seed: u64,
) -> (RawRecording, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let observed: Vec<usize> = rec
        .fhr
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|_| i))
        .collect();
    let mut out = rec.fhr.clone();
    let mut positions = Vec::new();
    let count = cfg.artifact_count.min(observed.len());
    while positions.len() < count {
        let idx = observed[rng.gen_range(0..observed.len())];
        if positions.contains(&idx) {
            continue;
        }
        let v = out[idx].unwrap();
        // doubling stays under the parse ceiling; halving otherwise
        let scaled = if rng.gen_bool(0.5) && v * 2.0 < 299.0 {
            v * 2.0
        } else {
            v * 0.5
        };
        out[idx] = Some(scaled);
        positions.push(idx);
    }
    positions.sort_unstable();
    (
        RawRecording {
            episode_id: rec.episode_id.clone(),
            fhr: out,
        },
        positions,
    )
}

/// One generated episode plus its injected ground truth.
#[derive(Debug, Clone)]
pub struct Episode {
    pub clean: RawRecording,
    pub degraded: RawRecording,
    pub gaps: Vec<(usize, usize)>,
    pub artifact_positions: Vec<usize>,
    pub seed: u64,
}

/// Manifest row, one JSON object per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub episode_id: String,
    pub seed: u64,
    /// `[start, len]` sample intervals marked missing.
    pub gaps: Vec<(usize, usize)>,
    /// Sample indices replaced by 2x / 0.5x artifacts.
    pub artifact_positions: Vec<usize>,
}

pub fn generate_episode(cfg: &SynthConfig, seed: u64, episode_id: &str) -> Result<Episode> {
    let clean = generate_signal(cfg, seed, episode_id);
    let (with_artifacts, artifact_positions) =
        inject_doppler_artifacts(&clean, cfg, seed.wrapping_add(0x9e37_79b9));
    let (degraded, gaps) = inject_dropouts(&with_artifacts, cfg, seed.wrapping_add(0x85eb_ca6b))?;
    Ok(Episode {
        clean,
        degraded,
        gaps,
        artifact_positions,
        seed,
    })
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Episode>,
    pub val: Vec<Episode>,
    pub test: Vec<Episode>,
}

fn episode_seed(master: u64, split: u64, index: u64) -> u64 {
    // splitmix64 on a (master, split, index) mix
    let mut z = master
        .wrapping_add(split.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(index.wrapping_mul(0x94d0_49bb_1331_11eb));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Build disjoint train/val/test splits at the episode level. Every
/// episode gets a unique id and a unique derived seed.
pub fn build_dataset(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    cfg: &SynthConfig,
    master_seed: u64,
) -> Result<Dataset> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Data("every split needs at least one episode".into()));
    }
    let gen_split = |tag: u64, name: &str, count: usize| -> Result<Vec<Episode>> {
        (0..count)
            .map(|i| {
                let id = format!("{name}-{i:04}");
                generate_episode(cfg, episode_seed(master_seed, tag, i as u64), &id)
            })
            .collect()
    };
    Ok(Dataset {
        train: gen_split(1, "train", n_train)?,
        val: gen_split(2, "val", n_val)?,
        test: gen_split(3, "test", n_test)?,
    })
}

impl Episode {
    pub fn manifest_entry(&self) -> ManifestEntry {
        ManifestEntry {
            episode_id: self.clean.episode_id.clone(),
            seed: self.seed,
            gaps: self.gaps.clone(),
            artifact_positions: self.artifact_positions.clone(),
        }
    }
}
