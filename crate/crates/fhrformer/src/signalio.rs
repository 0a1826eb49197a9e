//! Recording ingestion and the preprocessing pipeline: Doppler artifact
//! correction, linear gap filling with mask retention, fixed-length
//! trimming/padding, and [0,1] normalization against the 220 bpm global
//! maximum.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Device sample rate in Hz.
pub const SAMPLE_RATE_HZ: f64 = 2.0;
/// Global normalization maximum in bpm: 1.0 after normalization.
pub const MAX_BPM: f64 = 220.0;
/// Default fixed series length: one hour at 2 Hz.
pub const FIXED_LEN: usize = 7200;
/// Parse guard: observed bpm must lie in (0, 300).
pub const BPM_PARSE_CEILING: f64 = 300.0;

/// Median-ratio Doppler correction window (observed neighbors per side
/// pool) and ratio tolerance. The published noise-reduction method is
/// cited without internals; this stand-in is isolated behind
/// [`correct_doppler_artifacts`] so it can be swapped out.
pub const DOPPLER_WINDOW: usize = 15;
pub const DOPPLER_TAU: f64 = 0.15;

/// A raw 2 Hz recording. `None` marks a missing sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub episode_id: String,
    pub fhr: Vec<Option<f64>>,
}

impl RawRecording {
    pub fn len(&self) -> usize {
        self.fhr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fhr.is_empty()
    }

    pub fn n_observed(&self) -> usize {
        self.fhr.iter().filter(|v| v.is_some()).count()
    }
}

/// A preprocessed fixed-length series. Values are normalized to [0,1];
/// `observed_mask` is true only at originally observed samples (not
/// interpolated, not padded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FHRSeries {
    pub episode_id: String,
    pub values: Vec<f64>,
    pub observed_mask: Vec<bool>,
}

impl FHRSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Check the type invariants: equal lengths and values in [0,1].
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.observed_mask.len() {
            return Err(Error::Data(format!(
                "series {}: values ({}) and mask ({}) lengths differ",
                self.episode_id,
                self.values.len(),
                self.observed_mask.len()
            )));
        }
        if let Some(v) = self
            .values
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::Data(format!(
                "series {}: value {v} outside [0,1]",
                self.episode_id
            )));
        }
        Ok(())
    }
}

/// Parse a recording CSV with header `t,fhr_bpm,observed`.
pub fn parse_recording<R: Read>(reader: R, episode_id: &str) -> Result<RawRecording> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expect = ["t", "fhr_bpm", "observed"];
    if headers.iter().take(3).collect::<Vec<_>>() != expect {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header t,fhr_bpm,observed, got {:?}", headers),
        });
    }
    let mut fhr = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2; // header is line 1
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() < 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 fields, got {}", rec.len()),
            });
        }
        let t: f64 = rec[0].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad t value {:?}", &rec[0]),
        })?;
        let expected_t = fhr.len() as f64 / SAMPLE_RATE_HZ;
        if (t - expected_t).abs() > 1e-9 {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "t = {t} does not match the 2 Hz grid (expected {expected_t})"
                ),
            });
        }
        let observed: u8 = rec[2].trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad observed flag {:?}", &rec[2]),
        })?;
        match observed {
            0 => fhr.push(None),
            1 => {
                let bpm: f64 = rec[1].trim().parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad fhr_bpm value {:?}", &rec[1]),
                })?;
                if bpm <= 0.0 || bpm >= BPM_PARSE_CEILING {
                    return Err(Error::Parse {
                        line,
                        msg: format!("observed bpm {bpm} outside (0, {BPM_PARSE_CEILING})"),
                    });
                }
                fhr.push(Some(bpm));
            }
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("observed flag must be 0 or 1, got {other}"),
                })
            }
        }
    }
    if fhr.is_empty() {
        return Err(Error::Data("no samples".into()));
    }
    Ok(RawRecording {
        episode_id: episode_id.to_string(),
        fhr,
    })
}

pub fn parse_recording_file(path: &Path) -> Result<RawRecording> {
    let episode_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path)?;
    parse_recording(std::io::BufReader::new(file), &episode_id)
}

/// Write a recording in the `t,fhr_bpm,observed` schema. Missing samples
/// carry a 0.0 placeholder bpm and observed=0.
pub fn write_recording<W: Write>(w: W, rec: &RawRecording) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "fhr_bpm", "observed"])?;
    for (i, v) in rec.fhr.iter().enumerate() {
        let t = i as f64 / SAMPLE_RATE_HZ;
        match v {
            Some(bpm) => wtr.write_record([format!("{t}"), format!("{bpm}"), "1".into()])?,
            None => wtr.write_record([format!("{t}"), "0".into(), "0".into()])?,
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Write a preprocessed series with bpm de-normalized on export.
pub fn write_series<W: Write>(w: W, series: &FHRSeries) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "fhr_bpm", "observed"])?;
    for (i, (&v, &obs)) in series.values.iter().zip(&series.observed_mask).enumerate() {
        let t = i as f64 / SAMPLE_RATE_HZ;
        wtr.write_record([
            format!("{t}"),
            format!("{}", denormalize_value(v)),
            if obs { "1".into() } else { "0".to_string() },
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Read a preprocessed series back (inverse of [`write_series`]).
pub fn parse_series<R: Read>(reader: R, episode_id: &str) -> Result<FHRSeries> {
    let rec = parse_series_lenient(reader, episode_id)?;
    rec.validate()?;
    Ok(rec)
}

fn parse_series_lenient<R: Read>(reader: R, episode_id: &str) -> Result<FHRSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut values = Vec::new();
    let mut mask = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let bpm: f64 = rec[1].trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad fhr_bpm value {:?}", &rec[1]),
        })?;
        let obs: u8 = rec[2].trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad observed flag {:?}", &rec[2]),
        })?;
        values.push(bpm / MAX_BPM);
        mask.push(obs == 1);
    }
    if values.is_empty() {
        return Err(Error::Data("no samples".into()));
    }
    Ok(FHRSeries {
        episode_id: episode_id.to_string(),
        values,
        observed_mask: mask,
    })
}

pub fn parse_series_file(path: &Path) -> Result<FHRSeries> {
    let episode_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path)?;
    parse_series(std::io::BufReader::new(file), &episode_id)
}

fn median(sorted_scratch: &mut Vec<f64>) -> f64 {
    sorted_scratch.sort_by(f64::total_cmp);
    let n = sorted_scratch.len();
    if n % 2 == 1 {
        sorted_scratch[n / 2]
    } else {
        0.5 * (sorted_scratch[n / 2 - 1] + sorted_scratch[n / 2])
    }
}

/// Median-ratio correction of Doppler doubling/halving artifacts.
///
/// For each observed sample, the median of the nearest
/// [`DOPPLER_WINDOW`] observed neighbors is computed from the input
/// values. Samples whose ratio to that median falls in
/// `[2-tau, 2+tau]` are halved; in `[0.5-tau/4, 0.5+tau/4]` doubled.
/// Masks are unchanged.
pub fn correct_doppler_artifacts(rec: &RawRecording) -> RawRecording {
    let observed: Vec<(usize, f64)> = rec
        .fhr
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x)))
        .collect();
    let mut out = rec.fhr.clone();
    if observed.len() < 2 {
        return RawRecording {
            episode_id: rec.episode_id.clone(),
            fhr: out,
        };
    }
    let w = DOPPLER_WINDOW.min(observed.len() - 1);
    for (rank, &(idx, val)) in observed.iter().enumerate() {
        // nearest w observed neighbors by rank, excluding self
        let mut lo = rank;
        let mut hi = rank;
        let mut neigh = Vec::with_capacity(w);
        while neigh.len() < w {
            let left_gap = if lo > 0 {
                observed[rank].0 - observed[lo - 1].0
            } else {
                usize::MAX
            };
            let right_gap = if hi + 1 < observed.len() {
                observed[hi + 1].0 - observed[rank].0
            } else {
                usize::MAX
            };
            if left_gap <= right_gap {
                lo -= 1;
                neigh.push(observed[lo].1);
            } else {
                hi += 1;
                neigh.push(observed[hi].1);
            }
        }
        let med = median(&mut neigh);
        if med <= 0.0 {
            continue;
        }
        let ratio = val / med;
        if (2.0 - DOPPLER_TAU..=2.0 + DOPPLER_TAU).contains(&ratio) {
            out[idx] = Some(val / 2.0);
        } else if (0.5 - DOPPLER_TAU / 4.0..=0.5 + DOPPLER_TAU / 4.0).contains(&ratio) {
            out[idx] = Some(val * 2.0);
        }
    }
    RawRecording {
        episode_id: rec.episode_id.clone(),
        fhr: out,
    }
}

/// Fill gaps by linear interpolation between flanking observed samples;
/// leading/trailing gaps hold the nearest observed value. Returns the
/// filled values and the retained observed mask.
pub fn fill_gaps_linear(rec: &RawRecording) -> Result<(Vec<f64>, Vec<bool>)> {
    let n = rec.fhr.len();
    let observed: Vec<usize> = rec
        .fhr
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|_| i))
        .collect();
    if observed.is_empty() {
        return Err(Error::Data(format!(
            "recording {}: all samples missing",
            rec.episode_id
        )));
    }
    let mut values = vec![0.0; n];
    let mask: Vec<bool> = rec.fhr.iter().map(|v| v.is_some()).collect();
    for &i in &observed {
        values[i] = rec.fhr[i].unwrap();
    }
    // leading / trailing holds
    let first = observed[0];
    let last = *observed.last().unwrap();
    for v in values.iter_mut().take(first) {
        *v = rec.fhr[first].unwrap();
    }
    for v in values.iter_mut().skip(last + 1) {
        *v = rec.fhr[last].unwrap();
    }
    // interior gaps
    for pair in observed.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b > a + 1 {
            let va = values[a];
            let vb = values[b];
            let span = (b - a) as f64;
            for i in a + 1..b {
                values[i] = va + (vb - va) * (i - a) as f64 / span;
            }
        }
    }
    Ok((values, mask))
}

/// Trim to the last `target_len` samples or left-pad with zeros (mask 0),
/// keeping the end of the signal aligned to the end of the window.
pub fn fix_length(
    values: &[f64],
    mask: &[bool],
    target_len: usize,
) -> (Vec<f64>, Vec<bool>) {
    let n = values.len();
    if n >= target_len {
        let start = n - target_len;
        (values[start..].to_vec(), mask[start..].to_vec())
    } else {
        let pad = target_len - n;
        let mut v = vec![0.0; pad];
        v.extend_from_slice(values);
        let mut m = vec![false; pad];
        m.extend_from_slice(mask);
        (v, m)
    }
}

/// Normalize bpm to [0,1] by the fixed global 220 bpm map. Values above
/// 220 are clamped to 1.0; the clamp count is returned for diagnostics.
pub fn normalize(values_bpm: &[f64]) -> (Vec<f64>, usize) {
    let mut clamped = 0;
    let out = values_bpm
        .iter()
        .map(|&v| {
            let u = v / MAX_BPM;
            if u > 1.0 {
                clamped += 1;
                1.0
            } else {
                u
            }
        })
        .collect();
    (out, clamped)
}

pub fn denormalize_value(v: f64) -> f64 {
    v * MAX_BPM
}

pub fn denormalize(values_unit: &[f64]) -> Vec<f64> {
    values_unit.iter().map(|&v| denormalize_value(v)).collect()
}

/// The full preprocessing pipeline: Doppler correction, linear gap
/// filling, fixed length, normalization.
pub fn preprocess(rec: &RawRecording, target_len: usize) -> Result<FHRSeries> {
    let corrected = correct_doppler_artifacts(rec);
    let (values, mask) = fill_gaps_linear(&corrected)?;
    let (values, mask) = fix_length(&values, &mask, target_len);
    let (values, _clamped) = normalize(&values);
    let series = FHRSeries {
        episode_id: rec.episode_id.clone(),
        values,
        observed_mask: mask,
    };
    series.validate()?;
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(fhr: Vec<Option<f64>>) -> RawRecording {
        RawRecording {
            episode_id: "ep".into(),
            fhr,
        }
    }

    #[test]
    fn parse_preserves_gaps_and_length() {
        let csv = "t,fhr_bpm,observed\n0,140,1\n0.5,0,0\n1,142,1\n";
        let r = parse_recording(csv.as_bytes(), "ep").unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.fhr, vec![Some(140.0), None, Some(142.0)]);
    }

    #[test]
    fn parse_empty_file_is_error() {
        let csv = "t,fhr_bpm,observed\n";
        let err = parse_recording(csv.as_bytes(), "ep").unwrap_err();
        assert!(err.to_string().contains("no samples"));
    }

    #[test]
    fn parse_reports_line_numbers() {
        let csv = "t,fhr_bpm,observed\n0,140,1\n0.5,oops,1\n";
        match parse_recording(csv.as_bytes(), "ep") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_out_of_band_bpm() {
        let csv = "t,fhr_bpm,observed\n0,350,1\n";
        assert!(parse_recording(csv.as_bytes(), "ep").is_err());
    }

    #[test]
    fn recording_roundtrip_bit_exact() {
        let r = rec(vec![Some(140.25), None, Some(133.125), Some(150.0)]);
        let mut buf = Vec::new();
        write_recording(&mut buf, &r).unwrap();
        let back = parse_recording(buf.as_slice(), "ep").unwrap();
        assert_eq!(back.fhr, r.fhr);
    }

    #[test]
    fn doppler_exact_doubling_halved() {
        let mut fhr = vec![Some(140.0); 40];
        fhr[20] = Some(280.0);
        let out = correct_doppler_artifacts(&rec(fhr));
        assert_eq!(out.fhr[20], Some(140.0));
        assert_eq!(out.fhr[10], Some(140.0));
    }

    #[test]
    fn doppler_exact_halving_doubled() {
        let mut fhr = vec![Some(140.0); 40];
        fhr[7] = Some(70.0);
        let out = correct_doppler_artifacts(&rec(fhr));
        assert_eq!(out.fhr[7], Some(140.0));
    }

    #[test]
    fn doppler_leaves_normal_variation_alone() {
        let fhr: Vec<Option<f64>> = (0..60)
            .map(|i| Some(140.0 + 8.0 * (i as f64 * 0.3).sin()))
            .collect();
        let out = correct_doppler_artifacts(&rec(fhr.clone()));
        assert_eq!(out.fhr, fhr);
    }

    #[test]
    fn gap_fill_arithmetic_progression() {
        let r = rec(vec![Some(100.0), None, None, Some(130.0)]);
        let (values, mask) = fill_gaps_linear(&r).unwrap();
        assert_eq!(values, vec![100.0, 110.0, 120.0, 130.0]);
        assert_eq!(mask, vec![true, false, false, true]);
    }

    #[test]
    fn gap_fill_no_gaps_is_identity() {
        let r = rec(vec![Some(1.0), Some(2.0), Some(3.0)]);
        let (values, mask) = fill_gaps_linear(&r).unwrap();
        assert_eq!(values, vec![1.0, 2.0, 3.0]);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn gap_fill_leading_trailing_holds() {
        let r = rec(vec![None, None, Some(120.0), Some(124.0), None]);
        let (values, _) = fill_gaps_linear(&r).unwrap();
        assert_eq!(values, vec![120.0, 120.0, 120.0, 124.0, 124.0]);
    }

    #[test]
    fn gap_fill_all_missing_rejected() {
        let r = rec(vec![None, None]);
        assert!(fill_gaps_linear(&r).is_err());
    }

    #[test]
    fn gap_fill_matches_two_point_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 300;
        let mut fhr: Vec<Option<f64>> = (0..n)
            .map(|_| Some(rng.gen_range(110.0..160.0)))
            .collect();
        // punch random interior gaps
        for _ in 0..12 {
            let start = rng.gen_range(1..n - 20);
            let len = rng.gen_range(1..15);
            for v in fhr.iter_mut().skip(start).take(len) {
                *v = None;
            }
        }
        fhr[0] = Some(140.0);
        fhr[n - 1] = Some(140.0);
        let r = rec(fhr.clone());
        let (values, mask) = fill_gaps_linear(&r).unwrap();
        // oracle: for every filled position, find flanking observed points
        // and apply the closed-form two-point interpolation
        for i in 0..n {
            if mask[i] {
                assert_eq!(values[i], fhr[i].unwrap());
                continue;
            }
            let a = (0..i).rev().find(|&j| fhr[j].is_some()).unwrap();
            let b = (i + 1..n).find(|&j| fhr[j].is_some()).unwrap();
            let (va, vb) = (fhr[a].unwrap(), fhr[b].unwrap());
            let want = va + (vb - va) * (i - a) as f64 / (b - a) as f64;
            assert!((values[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn fix_length_trims_to_tail() {
        let values: Vec<f64> = (0..7300).map(|i| i as f64).collect();
        let mask = vec![true; 7300];
        let (v, m) = fix_length(&values, &mask, 7200);
        assert_eq!(v.len(), 7200);
        assert_eq!(v[0], 100.0);
        assert_eq!(*v.last().unwrap(), 7299.0);
        assert!(m.iter().all(|&x| x));
    }

    #[test]
    fn fix_length_identity_at_target() {
        let values = vec![1.0; 7200];
        let mask = vec![true; 7200];
        let (v, m) = fix_length(&values, &mask, 7200);
        assert_eq!(v, values);
        assert_eq!(m, mask);
    }

    #[test]
    fn fix_length_left_pads_short_input() {
        let values: Vec<f64> = (0..7000).map(|i| 100.0 + i as f64 * 1e-3).collect();
        let mask = vec![true; 7000];
        let (v, m) = fix_length(&values, &mask, 7200);
        assert_eq!(v.len(), 7200);
        assert!(v[..200].iter().all(|&x| x == 0.0));
        assert!(m[..200].iter().all(|&x| !x));
        assert_eq!(&v[200..], &values[..]);
    }

    #[test]
    fn normalize_fixed_points() {
        let (v, clamped) = normalize(&[220.0, 0.0, 110.0]);
        assert_eq!(v, vec![1.0, 0.0, 0.5]);
        assert_eq!(clamped, 0);
        let (v, clamped) = normalize(&[230.0]);
        assert_eq!(v, vec![1.0]);
        assert_eq!(clamped, 1);
    }

    #[test]
    fn normalize_denormalize_roundtrip() {
        let bpm = [0.0, 73.5, 140.0, 219.99];
        let (unit, _) = normalize(&bpm);
        for (&orig, &back) in bpm.iter().zip(denormalize(&unit).iter()) {
            assert!((orig - back).abs() < 1e-12);
        }
    }

    #[test]
    fn pipeline_preserves_observed_samples_and_invariants() {
        let mut fhr: Vec<Option<f64>> = (0..500)
            .map(|i| Some(140.0 + 10.0 * (i as f64 * 0.05).sin()))
            .collect();
        for v in fhr.iter_mut().skip(100).take(40) {
            *v = None;
        }
        let r = rec(fhr.clone());
        let series = preprocess(&r, 720).unwrap();
        series.validate().unwrap();
        assert_eq!(series.len(), 720);
        // observed positions carry the original value (after the 220 map)
        let pad = 720 - 500;
        for i in 0..500 {
            if let Some(bpm) = fhr[i] {
                assert!(series.observed_mask[pad + i]);
                assert!((series.values[pad + i] - bpm / MAX_BPM).abs() < 1e-12);
            } else {
                assert!(!series.observed_mask[pad + i]);
            }
        }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let fhr: Vec<Option<f64>> = (0..300)
            .map(|i| {
                if i % 37 == 0 {
                    None
                } else {
                    Some(130.0 + (i as f64 * 0.21).cos() * 12.0)
                }
            })
            .collect();
        let r = rec(fhr);
        let a = preprocess(&r, 720).unwrap();
        let b = preprocess(&r, 720).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn series_roundtrip_through_csv() {
        let series = FHRSeries {
            episode_id: "ep".into(),
            values: vec![0.5, 0.25, 0.75],
            observed_mask: vec![true, false, true],
        };
        let mut buf = Vec::new();
        write_series(&mut buf, &series).unwrap();
        let back = parse_series(buf.as_slice(), "ep").unwrap();
        assert_eq!(back.observed_mask, series.observed_mask);
        for (&a, &b) in back.values.iter().zip(&series.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
