//! Command-line front end: synthetic data generation, preprocessing,
//! training, evaluation, inpainting and forecasting.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad data, 3 numeric failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fhrformer::metrics::{evaluate, format_report, write_report_csv};
use fhrformer::model::{load_checkpoint, ModelConfig, ModelWeights};
use fhrformer::signalio::{self, FHRSeries};
use fhrformer::synthgen::{build_dataset, SynthConfig};
use fhrformer::tasks::{
    forecast, forecast_error_bounds, inpaint, write_forecast_csv, write_inpaint_csv,
    ForecastConfig,
};
use fhrformer::trainer::{fit, TrainConfig};
use fhrformer::Error;

#[derive(Parser)]
#[command(name = "fhrformer", about = "Masked-autoencoder modeling of fetal heart rate signals", version)]
struct Cli {
    /// Flat key=value configuration file; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Scale profile providing the default settings.
    #[arg(long, global = true, value_parser = ["desk", "paper"], default_value = "desk")]
    profile: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    patch_size: Option<usize>,
    #[arg(long, global = true)]
    mask_ratio: Option<f64>,
    /// Where to echo the fully resolved settings (default: next to --out).
    #[arg(long, global = true)]
    echo_config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/val/test corpus with injected
    /// signal loss and Doppler artifacts.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the cleanup pipeline on one raw recording.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-supervised training on a generated corpus.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Epoch log CSV (default: `<checkpoint>.log.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mask-and-reconstruct metrics on the test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill signal-loss gaps in a recording.
    Inpaint {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recursive forecast continuing a recording.
    Forecast {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Corpus whose val split calibrates the error bounds.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

/// Every tunable, resolved from profile defaults, then the config file,
/// then command-line flags. Unknown keys are fatal.
struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    fn from_profile(profile: &str) -> Result<Self, Error> {
        let (model, batch) = match profile {
            "desk" => (ModelConfig::desk(), 16usize),
            "paper" => (ModelConfig::paper(), 128),
            other => return Err(Error::Data(format!("unknown profile {other}"))),
        };
        let t = TrainConfig::default();
        let f = ForecastConfig::default();
        let s = if profile == "desk" { SynthConfig::short() } else { SynthConfig::default() };
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("input_len", model.input_len.to_string());
        put("patch_size", model.patch_size.to_string());
        put("d_model", model.d_model.to_string());
        put("ffn_dim", model.ffn_dim.to_string());
        put("n_heads", model.n_heads.to_string());
        put("n_enc_layers", model.n_enc_layers.to_string());
        put("n_dec_layers", model.n_dec_layers.to_string());
        put("dropout", model.dropout.to_string());
        put("mask_ratio", model.mask_ratio.to_string());
        put("lr", t.lr.to_string());
        put("weight_decay", t.weight_decay.to_string());
        put("batch_size", batch.to_string());
        put("max_epochs", t.max_epochs.to_string());
        put("early_stop_patience", t.early_stop_patience.to_string());
        put("plateau_patience", t.plateau_patience.to_string());
        put("plateau_factor", t.plateau_factor.to_string());
        put("alpha", t.loss.alpha.to_string());
        put("beta", t.loss.beta.to_string());
        put("seed", "0".into());
        put("context_len", f.context_len.to_string());
        put("step_len", f.step_len.to_string());
        put("horizon", f.horizon.to_string());
        put("n_train", "16".into());
        put("n_val", "4".into());
        put("n_test", "4".into());
        put("gap_count", s.gap_count.to_string());
        put("gap_len_min_s", s.gap_len_s.0.to_string());
        put("gap_len_max_s", s.gap_len_s.1.to_string());
        put("artifact_count", s.artifact_count.to_string());
        put("noise_std_bpm", s.noise_std_bpm.to_string());
        Ok(Self { map })
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        if !self.map.contains_key(key) {
            return Err(Error::Data(format!("unknown configuration key: {key}")));
        }
        self.map.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn load_file(&mut self, path: &Path) -> Result<(), Error> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T, Error> {
        let raw = &self.map[key];
        raw.parse().map_err(|_| {
            Error::Data(format!("setting {key}={raw} is not a valid value"))
        })
    }

    fn echo(&self, path: &Path) -> Result<(), Error> {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(&format!("{k}={v}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    fn model_config(&self) -> Result<ModelConfig, Error> {
        let cfg = ModelConfig {
            input_len: self.get("input_len")?,
            patch_size: self.get("patch_size")?,
            input_dim: 1,
            d_model: self.get("d_model")?,
            ffn_dim: self.get("ffn_dim")?,
            n_heads: self.get("n_heads")?,
            n_enc_layers: self.get("n_enc_layers")?,
            n_dec_layers: self.get("n_dec_layers")?,
            dropout: self.get("dropout")?,
            mask_ratio: self.get("mask_ratio")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn train_config(&self, checkpoint: &Path) -> Result<TrainConfig, Error> {
        let loss = fhrformer::objective::LossConfig {
            alpha: self.get("alpha")?,
            beta: self.get("beta")?,
        };
        loss.validate()?;
        Ok(TrainConfig {
            lr: self.get("lr")?,
            weight_decay: self.get("weight_decay")?,
            batch_size: self.get("batch_size")?,
            max_epochs: self.get("max_epochs")?,
            early_stop_patience: self.get("early_stop_patience")?,
            plateau_patience: self.get("plateau_patience")?,
            plateau_factor: self.get("plateau_factor")?,
            seed: self.get("seed")?,
            loss,
            checkpoint_path: Some(checkpoint.to_path_buf()),
            verbose: true,
            ..TrainConfig::default()
        })
    }

    fn forecast_config(&self) -> Result<ForecastConfig, Error> {
        Ok(ForecastConfig {
            context_len: self.get("context_len")?,
            step_len: self.get("step_len")?,
            horizon: self.get("horizon")?,
        })
    }

    fn synth_config(&self) -> Result<SynthConfig, Error> {
        Ok(SynthConfig {
            len: self.get("input_len")?,
            gap_count: self.get("gap_count")?,
            gap_len_s: (self.get("gap_len_min_s")?, self.get("gap_len_max_s")?),
            artifact_count: self.get("artifact_count")?,
            noise_std_bpm: self.get("noise_std_bpm")?,
            ..if self.get::<usize>("input_len")? <= 720 {
                SynthConfig::short()
            } else {
                SynthConfig::default()
            }
        })
    }
}

fn load_split(dir: &Path, split: &str, target_len: usize) -> Result<Vec<FHRSeries>, Error> {
    let split_dir = dir.join(split);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&split_dir)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", split_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && !p.to_string_lossy().ends_with(".clean.csv")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "no recordings found in {}",
            split_dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let rec = signalio::parse_recording_file(p)?;
            signalio::preprocess(&rec, target_len)
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut settings = Settings::from_profile(&cli.profile)?;
    if let Some(path) = &cli.config {
        settings.load_file(path)?;
    }
    if let Some(seed) = cli.seed {
        settings.set("seed", &seed.to_string())?;
    }
    if let Some(ps) = cli.patch_size {
        settings.set("patch_size", &ps.to_string())?;
    }
    if let Some(mr) = cli.mask_ratio {
        settings.set("mask_ratio", &mr.to_string())?;
    }

    let echo_target = |primary: &Path| -> PathBuf {
        cli.echo_config.clone().unwrap_or_else(|| {
            if primary.extension().is_some() {
                primary.with_extension("resolved.cfg")
            } else {
                primary.join("resolved_config.txt")
            }
        })
    };

    let seed: u64 = settings.get("seed")?;
    match &cli.command {
        Command::Synth { out } => {
            let cfg = settings.synth_config()?;
            let ds = build_dataset(
                settings.get("n_train")?,
                settings.get("n_val")?,
                settings.get("n_test")?,
                &cfg,
                seed,
            )?;
            let mut manifest = String::new();
            for (split, episodes) in [
                ("train", &ds.train),
                ("val", &ds.val),
                ("test", &ds.test),
            ] {
                let dir = out.join(split);
                std::fs::create_dir_all(&dir)?;
                for ep in episodes {
                    let id = &ep.clean.episode_id;
                    let f = std::fs::File::create(dir.join(format!("{id}.csv")))?;
                    signalio::write_recording(f, &ep.degraded)?;
                    let f = std::fs::File::create(dir.join(format!("{id}.clean.csv")))?;
                    signalio::write_recording(f, &ep.clean)?;
                    manifest.push_str(&serde_json::to_string(&ep.manifest_entry()).map_err(
                        |e| Error::Data(format!("manifest serialization failed: {e}")),
                    )?);
                    manifest.push('\n');
                }
            }
            std::fs::write(out.join("manifest.jsonl"), manifest)?;
            settings.echo(&echo_target(out))?;
            println!(
                "wrote {} episodes under {}",
                settings.get::<usize>("n_train")?
                    + settings.get::<usize>("n_val")?
                    + settings.get::<usize>("n_test")?,
                out.display()
            );
        }
        Command::Preprocess { input, out } => {
            let rec = signalio::parse_recording_file(input)?;
            let series = signalio::preprocess(&rec, settings.get("input_len")?)?;
            let f = std::fs::File::create(out)?;
            signalio::write_series(f, &series)?;
            settings.echo(&echo_target(out))?;
            println!("preprocessed {} -> {}", input.display(), out.display());
        }
        Command::Train { data, checkpoint, out } => {
            let target_len: usize = settings.get("input_len")?;
            let train_split = load_split(data, "train", target_len)?;
            let val_split = load_split(data, "val", target_len)?;
            let model_cfg = settings.model_config()?;
            let weights = ModelWeights::init(model_cfg, seed)?;
            let cfg = settings.train_config(checkpoint)?;
            let train_vals: Vec<Vec<f64>> = train_split.into_iter().map(|s| s.values).collect();
            let val_vals: Vec<Vec<f64>> = val_split.into_iter().map(|s| s.values).collect();
            let report = fit(weights, &train_vals, &val_vals, &cfg)?;
            let log_path = out
                .clone()
                .unwrap_or_else(|| checkpoint.with_extension("log.csv"));
            let mut w = csv::Writer::from_path(&log_path)?;
            w.write_record(["epoch", "train_loss", "val_loss", "lr", "seconds"])?;
            for e in &report.epochs {
                w.write_record([
                    e.epoch.to_string(),
                    format!("{:.8}", e.train_loss),
                    format!("{:.8}", e.val_loss),
                    format!("{:.3e}", e.lr),
                    format!("{:.2}", e.seconds),
                ])?;
            }
            w.flush()?;
            settings.echo(&echo_target(checkpoint))?;
            println!(
                "best val loss {:.6} at epoch {} ({} epochs run); checkpoint {}",
                report.best_val,
                report.best_epoch,
                report.epochs.len(),
                checkpoint.display()
            );
        }
        Command::Eval { data, checkpoint, out } => {
            let weights = load_checkpoint(checkpoint)?;
            let test = load_split(data, "test", weights.config.input_len)?;
            let report = evaluate(&weights, &test, seed)?;
            write_report_csv(&report, out)?;
            settings.echo(&echo_target(out))?;
            print!("{}", format_report(&report));
        }
        Command::Inpaint { input, checkpoint, out } => {
            let weights = load_checkpoint(checkpoint)?;
            let rec = signalio::parse_recording_file(input)?;
            let series = signalio::preprocess(&rec, weights.config.input_len)?;
            let result = inpaint(&weights, &series)?;
            write_inpaint_csv(&series, &result, out)?;
            settings.echo(&echo_target(out))?;
            if result.nothing_to_do {
                println!("no missing samples; output is the input unchanged");
            } else {
                let n = result.replaced.iter().filter(|&&r| r).count();
                println!("inpainted {n} samples -> {}", out.display());
            }
        }
        Command::Forecast { input, checkpoint, out, data } => {
            let weights = load_checkpoint(checkpoint)?;
            let rec = signalio::parse_recording_file(input)?;
            let series = signalio::preprocess(&rec, weights.config.input_len)?;
            let fcfg = settings.forecast_config()?;
            let result = forecast(&weights, &series.values, &fcfg)?;
            let bounds = match data {
                Some(dir) => {
                    let val = load_split(dir, "val", weights.config.input_len)?;
                    let vals: Vec<Vec<f64>> = val.into_iter().map(|s| s.values).collect();
                    forecast_error_bounds(&weights, &vals, &fcfg)?
                }
                None => Vec::new(),
            };
            write_forecast_csv(&result, &bounds, series.values.len(), out)?;
            settings.echo(&echo_target(out))?;
            println!(
                "forecast {} samples in {} steps -> {}",
                result.predictions.len(),
                result.steps_taken,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.exit_code() == 0 => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let msg = e.to_string();
            let code = if msg.contains("unknown configuration key")
                || msg.contains("unknown profile")
            {
                1 // a misspelled setting is a usage problem
            } else {
                match &e {
                    Error::Numeric(_) | Error::Diff(_) => 3,
                    Error::Parse { .. }
                    | Error::Data(_)
                    | Error::Checkpoint(_)
                    | Error::Io(_)
                    | Error::Csv(_) => 2,
                }
            };
            ExitCode::from(code)
        }
    }
}
