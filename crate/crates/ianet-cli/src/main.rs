use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ianet::boxes::BoxF;
use ianet::config::{KvConfig, TrainConfig};
use ianet::error::Error;
use ianet::eval::{self, PatchSpec};
use ianet::gradcheck;
use ianet::heatmap;
use ianet::ppm;
use ianet::synth::{self, SceneSpec};
use ianet::train;

#[derive(Parser)]
#[command(name = "ianet", version, about = "Inverted-attention training on a desk-scale detector/classifier")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic shapes dataset from a scene config
    GenData {
        /// Scene config (flat key=value; see README)
        spec: PathBuf,
        /// Output directory (PPM images + JSON-lines manifest)
        out_dir: PathBuf,
    },
    /// Train a model from a run config
    Train {
        /// Run config (flat key=value; see README)
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset and print the report as JSON
    Eval {
        /// Checkpoint directory (written by `train`)
        ckpt: PathBuf,
        /// Dataset directory (written by `gen-data`)
        data_dir: PathBuf,
        /// Also write the report to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure the metric drop when occluding the highest-attention patch
    OcclusionTest {
        ckpt: PathBuf,
        data_dir: PathBuf,
        /// Occluder side in pixels
        #[arg(long, conflicts_with = "patch_frac")]
        patch: Option<usize>,
        /// Occluder side as a fraction of each object's side
        #[arg(long)]
        patch_frac: Option<f64>,
    },
    /// Export an attention heat-map blended over an image as PPM
    Heatmap {
        ckpt: PathBuf,
        /// Input image (PPM)
        image: PathBuf,
        /// Output path (PPM)
        out: PathBuf,
        /// Restrict attention to one ROI: x1,y1,x2,y2 in pixels
        #[arg(long)]
        roi: Option<String>,
    },
    /// Run the finite-difference gradient suite over every operator
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_roi(raw: &str) -> Result<BoxF, Error> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 4 {
        return Err(Error::InvalidArg(format!(
            "--roi expects x1,y1,x2,y2, got '{raw}'"
        )));
    }
    let mut vals = [0.0; 4];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArg(format!("--roi: bad number '{p}'")))?;
    }
    let b = BoxF::new(vals[0], vals[1], vals[2], vals[3]);
    if !b.is_valid() {
        return Err(Error::InvalidArg(format!("--roi box {raw} is not valid")));
    }
    Ok(b)
}

fn run(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::GenData { spec, out_dir } => {
            let kv = KvConfig::from_file(&spec)?;
            let scene = SceneSpec::from_kv(&kv)?;
            let count = kv.usize_or("count", 100)?;
            let samples = synth::generate_dataset(&scene, count)?;
            synth::write_dataset(&out_dir, &samples)?;
            let mut echo = scene.to_kv();
            echo.set("count", count);
            std::fs::write(out_dir.join("effective.cfg"), echo.echo())?;
            let objects: usize = samples.iter().map(|s| s.gt.len()).sum();
            println!(
                "wrote {count} samples ({objects} objects) to {}",
                out_dir.display()
            );
            Ok(())
        }
        Cmd::Train { config } => {
            let cfg = TrainConfig::from_file(&config)?;
            let outcome = train::train(&cfg)?;
            for line in &outcome.log_lines {
                println!("{line}");
            }
            println!("final checkpoint: {}", outcome.final_checkpoint.display());
            Ok(())
        }
        Cmd::Eval { ckpt, data_dir, out } => {
            let (model, cfg) = train::load_model(&ckpt)?;
            let samples = synth::read_dataset(&data_dir)?;
            let report = eval::evaluate(&model, &cfg, &samples)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Data(format!("report encode: {e}")))?;
            println!("{json}");
            if let Some(path) = out {
                std::fs::write(&path, format!("{json}\n"))?;
            }
            Ok(())
        }
        Cmd::OcclusionTest { ckpt, data_dir, patch, patch_frac } => {
            let (model, cfg) = train::load_model(&ckpt)?;
            let samples = synth::read_dataset(&data_dir)?;
            let spec = match (patch, patch_frac) {
                (Some(p), None) => PatchSpec::Pixels(p),
                (None, Some(f)) => PatchSpec::ObjectFraction(f),
                (None, None) => PatchSpec::ObjectFraction(0.25),
                (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
            };
            let report = eval::occlusion_sensitivity(&model, &cfg, &samples, spec)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Data(format!("report encode: {e}")))?;
            println!("{json}");
            Ok(())
        }
        Cmd::Heatmap { ckpt, image, out, roi } => {
            let (model, _) = train::load_model(&ckpt)?;
            let img = ppm::read_ppm(&image)?;
            let region = roi.as_deref().map(parse_roi).transpose()?;
            heatmap::export_heatmap(&model, &img, region, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Gradcheck { seed } => {
            let results = gradcheck::run_gradcheck(seed)?;
            let mut failed = false;
            for r in &results {
                println!(
                    "{:<16} instances {:>2}  max rel err {:>10.3e}  {}",
                    r.op,
                    r.instances,
                    r.max_rel_err,
                    if r.passed { "PASS" } else { "FAIL" }
                );
                failed |= !r.passed;
            }
            if failed {
                Err(Error::InvalidArg("gradient check failed".into()))
            } else {
                Ok(())
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
