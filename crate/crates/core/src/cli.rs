//! Command-line driver: `analyze`, `train`, `eval`, `modulation-report`,
//! and the `decompose` debug dump.

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{parse_tasks, RunConfig};
use crate::degrade;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, modulation_csv_header, modulation_report, modulation_report_learnable,
    EVAL_CSV_HEADER,
};
use crate::freq_analysis;
use crate::imgio;
use crate::rformer::RformerConfig;
use crate::spectral;
use crate::tensor::Tensor;
use crate::train::{self, ModelBundle, ToyTrainConfig};

#[derive(Parser)]
#[command(
    name = "freqrestore",
    version,
    about = "Frequency-aware all-in-one image restoration at desk scale"
)]
pub struct Cli {
    /// Master seed (flag > FREQRESTORE_SEED > config file > 0).
    #[arg(long, global = true, env = "FREQRESTORE_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Measure how each degradation shifts spectral energy; writes CSV.
    Analyze {
        /// Comma-separated tasks, e.g. "noise:25,rain,haze,blur".
        #[arg(long, default_value = "noise:25,rain,haze,blur")]
        tasks: String,
        /// Synthesized pairs per task.
        #[arg(long, default_value_t = 50)]
        pairs: usize,
        /// Procedural image side length.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Low/high cutoff as a fraction of the maximum radius.
        #[arg(long, default_value_t = 0.5)]
        cutoff: f64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the two-stage training schedule from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    ///

    /// Restoration quality (PSNR/SSIM) of a checkpoint on held-out pairs.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "noise:25,rain,haze,blur")]
        tasks: String,
        #[arg(long, default_value_t = 10)]
        pairs: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean attention-map modulation ratios per task and band.
    ModulationReport {
        /// Checkpoint with a trained encoder (embedded mode).
        #[arg(long, required_unless_present = "learnable")]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "noise:25,rain,haze,blur")]
        tasks: String,
        /// Degraded samples per task in embedded mode.
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Train free ratio parameters per task (one-by-one mode) instead
        /// of embedding them from a checkpointed encoder.
        #[arg(long)]
        learnable: bool,
        /// Optimizer steps for --learnable.
        #[arg(long, default_value_t = 240)]
        train_steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the frequency-band images of one input as PPM files.
    Decompose {
        /// PNG or PPM input; a procedural image is synthesized if omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        bands: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Parse arguments and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Analyze { tasks, pairs, size, cutoff, out } => {
            let specs = parse_tasks(&tasks, seed.unwrap_or(0))?;
            if let Some(dir) = out.parent() {
                fs::create_dir_all(dir)?;
            }
            let mut file = fs::File::create(&out)?;
            let rows = freq_analysis::analyze(&specs, pairs, size, cutoff, &mut file)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            // direction summary: sign of the mean high-frequency shift
            for spec in &specs {
                let name = spec.kind.kind_name();
                let deltas: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.kind == name)
                    .map(|r| {
                        let hf = |ratio: f64| 1.0 / (1.0 + ratio);
                        hf(r.degraded_ratio) - hf(r.clean_ratio)
                    })
                    .collect();
                let mean = deltas.iter().sum::<f64>() / deltas.len().max(1) as f64;
                let sign = if mean > 0.0 { "+" } else { "-" };
                println!("{name:>9}: high-frequency shift {sign} (mean {mean:+.4})");
            }
            Ok(())
        }
        Cmd::Train { config, out } => {
            let mut run_cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                run_cfg.seed = seed;
            }
            if let Some(out) = out {
                run_cfg.paths.out_dir = out;
            }
            let out = train::train(&run_cfg)?;
            println!("metrics: {}", out.metrics_path.display());
            if let Some(p) = &out.stage1_ckpt {
                println!("stage1 checkpoint: {}", p.display());
            }
            if let Some(p) = &out.best_ckpt {
                println!("best checkpoint: {}", p.display());
            }
            println!("final checkpoint: {}", out.final_ckpt.display());
            Ok(())
        }
        Cmd::Eval { ckpt, tasks, pairs, size, out } => {
            let specs = parse_tasks(&tasks, seed.unwrap_or(0))?;
            let bundle = ModelBundle::load(&ckpt)?;
            let rows = evaluate(&bundle, &specs, pairs, size, seed.unwrap_or(0))?;
            println!(
                "{:>9} {:>4} {:>9} {:>8} {:>9} {:>8}",
                "task", "n", "psnr_in", "ssim_in", "psnr_out", "ssim_out"
            );
            for r in &rows {
                println!(
                    "{:>9} {:>4} {:>9.3} {:>8.4} {:>9.3} {:>8.4}",
                    r.task, r.n, r.psnr_in, r.ssim_in, r.psnr_out, r.ssim_out
                );
            }
            if let Some(path) = out {
                if let Some(dir) = path.parent() {
                    fs::create_dir_all(dir)?;
                }
                let mut text = String::from(EVAL_CSV_HEADER);
                for r in &rows {
                    text.push('\n');
                    text.push_str(&r.to_csv());
                }
                text.push('\n');
                fs::write(&path, text)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Cmd::ModulationReport { ckpt, tasks, samples, size, learnable, train_steps, out } => {
            let specs = parse_tasks(&tasks, seed.unwrap_or(0))?;
            let (rows, mode, bands) = if learnable {
                let rcfg = match &ckpt {
                    Some(path) => crate::checkpoint::load(path)?
                        .config
                        .rformer
                        .ok_or_else(|| Error::Checkpoint("no rformer config in ckpt".into()))?,
                    None => RformerConfig::default(),
                };
                let toy = ToyTrainConfig {
                    steps: train_steps,
                    seed: seed.unwrap_or(0),
                    ..ToyTrainConfig::default()
                };
                let rows = modulation_report_learnable(&specs, &rcfg, &toy)?;
                (rows, "learned", rcfg.mod_bands)
            } else {
                let bundle = ModelBundle::load(ckpt.as_ref().expect("clap enforces ckpt"))?;
                let bands = bundle.rformer.cfg.mod_bands;
                let rows = modulation_report(&bundle, &specs, samples, size, seed.unwrap_or(0))?;
                (rows, "embedded", bands)
            };
            println!("{}", modulation_csv_header(bands));
            let mut text = modulation_csv_header(bands);
            for r in &rows {
                let line = r.to_csv(mode);
                println!("{line}");
                text.push('\n');
                text.push_str(&line);
            }
            if let Some(path) = out {
                if let Some(dir) = path.parent() {
                    fs::create_dir_all(dir)?;
                }
                text.push('\n');
                fs::write(&path, text)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Cmd::Decompose { input, bands, size, out_dir } => {
            let img = match input {
                Some(path) => imgio::read_image(&path)?,
                None => degrade::synth_clean(seed.unwrap_or(0), size, size),
            };
            fs::create_dir_all(&out_dir)?;
            let set = spectral::decompose(&img, bands)?;
            imgio::write_ppm(&out_dir.join("input.ppm"), &img)?;
            let mut reconstruction = vec![0.0; img.numel()];
            for (k, band) in set.bands.iter().enumerate() {
                for (r, v) in reconstruction.iter_mut().zip(band.data().iter()) {
                    *r += v;
                }
                // non-DC bands are zero-mean; shift for visibility
                let vis = if k == 0 { band.detach() } else { band.add_scalar(0.5) };
                let (l, r) = set.ranges[k];
                imgio::write_ppm(&out_dir.join(format!("band_{k}_radius_{l}_{r}.ppm")), &vis)?;
            }
            let recon = Tensor::from_vec(reconstruction, &img.shape());
            imgio::write_ppm(&out_dir.join("reconstruction.ppm"), &recon)?;
            println!("wrote {} band images to {}", set.bands.len(), out_dir.display());
            Ok(())
        }
    }
}
