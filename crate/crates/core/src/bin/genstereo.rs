use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use genstereo::fusion::{fuse_with, FusionParams};
use genstereo::grid::io;
use genstereo::pipeline::dataset::{configured_datasets, discover_datasets};
use genstereo::pipeline::eval::{eval_generation_dirs, eval_stereo_dirs};
use genstereo::pipeline::generate::mask_image;
use genstereo::pipeline::plan::parse_sizes;
use genstereo::pipeline::{
    build_dataset, generate_right_view, load_dataset, resample_plan, scale_disparity, train_toy, Checkpoint,
    PipelineConfig,
};
use genstereo::warp::{warp_image, CombineMode};
use genstereo::{Error, Result};

#[derive(Parser)]
#[command(name = "genstereo", version, about = "Disparity-conditioned right-view synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward-warp a left image with a scaled disparity map.
    Warp {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        disp: PathBuf,
        #[arg(long)]
        gamma: f32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "mask-out")]
        mask_out: PathBuf,
    },
    /// Synthesize the right view with a trained checkpoint.
    Generate {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        disp: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blend a generated and a warped view with trained fusion weights.
    Fuse {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        warp: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy denoiser and fusion weights.
    TrainToy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// PSNR / SSIM of generated views against references.
    EvalGen {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// JSON file of externally computed LPIPS scores to merge in.
        #[arg(long)]
        lpips: Option<PathBuf>,
    },
    /// EPE, D1-all and bad-N of predicted disparities.
    EvalStereo {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "and")]
        mode: CombineMode,
        #[arg(long)]
        report: PathBuf,
    },
    /// Resampling plans and training-set construction.
    #[command(subcommand)]
    Dataset(DatasetCommand),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Print the replication plan for the given dataset sizes.
    Plan(PlanArgs),
    /// Build a training set from the datasets named in a config.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PlanArgs {
    /// Comma separated sizes, `K`/`M` suffixes allowed.
    #[arg(long)]
    sizes: String,
    #[arg(long)]
    fraction: f64,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Warp {
            left,
            disp,
            gamma,
            out,
            mask_out,
        } => {
            let img = io::read_png(&left)?;
            let d = scale_disparity(&io::read_disparity(&disp)?, gamma)?;
            let (warped, mask) = warp_image(&img, &d)?;
            io::write_png(&out, &mask_image(&warped, &mask)?)?;
            io::write_mask_png(&mask_out, &mask)?;
            let valid = mask.data().iter().filter(|&&v| v == 1).count();
            println!("warped {}x{}, {valid} valid pixels", mask.height(), mask.width());
        }
        Command::Generate {
            left,
            disp,
            config,
            checkpoint,
            out,
        } => {
            let cfg = PipelineConfig::load(&config)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let g = generate_right_view(
                &io::read_png(&left)?,
                &io::read_disparity(&disp)?,
                &cfg.gen_config()?,
                &ck.denoiser,
                &ck.fusion,
            )?;
            io::write_png(&out, &g.right)?;
            println!("wrote {}", out.display());
        }
        Command::Fuse {
            gen,
            warp,
            mask,
            params,
            out,
        } => {
            let fused = fuse_with(
                &io::read_png(&gen)?,
                &io::read_png(&warp)?,
                &io::read_mask_png(&mask)?,
                &FusionParams::load(&params)?,
            )?;
            io::write_png(&out, &fused)?;
            println!("wrote {}", out.display());
        }
        Command::TrainToy {
            config,
            data,
            out,
            seed,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let datasets = discover_datasets(&data)?
                .iter()
                .map(load_dataset)
                .collect::<Result<Vec<_>>>()?;
            let sizes: Vec<usize> = datasets.iter().map(|d| d.len()).collect();
            let plan = resample_plan(&sizes, cfg.fraction)?;
            let outcome = train_toy(&datasets, &plan, &cfg)?;
            let ck = Checkpoint {
                config: cfg,
                denoiser: outcome.denoiser,
                fusion: outcome.fusion,
            };
            ck.save(&out)?;
            write_json(&out.join("losses.json"), &outcome.log)?;
            match outcome.log.losses.last() {
                Some(l) => println!(
                    "trained {} steps, final loss {:.6} (latent {:.6}, pixel {:.6})",
                    outcome.log.losses.len(),
                    l.total,
                    l.latent,
                    l.pixel
                ),
                None => println!("no training steps run"),
            }
        }
        Command::EvalGen {
            pred,
            reference,
            report,
            lpips,
        } => {
            let mut rep = eval_generation_dirs(&pred, &reference)?;
            if let Some(path) = lpips {
                rep.add_external(genstereo::metrics::ingest_lpips(&path)?)?;
            }
            rep.write(&report)?;
            for a in &rep.aggregate {
                println!("{}: {:.4} over {} pairs", a.metric, a.mean, a.pairs);
            }
        }
        Command::EvalStereo {
            pred,
            gt,
            mode,
            report,
        } => {
            let rep = eval_stereo_dirs(&pred, &gt, mode)?;
            rep.write(&report)?;
            for a in &rep.aggregate {
                println!("{}: {:.4} over {} pairs", a.metric, a.mean, a.pairs);
            }
        }
        Command::Dataset(DatasetCommand::Plan(args)) => {
            let plan = resample_plan(&parse_sizes(&args.sizes)?, args.fraction)?;
            println!("{}", serde_json::to_string_pretty(&plan)?);
        }
        Command::Dataset(DatasetCommand::Build { config, out }) => {
            let cfg = PipelineConfig::load(&config)?;
            let datasets = configured_datasets(&cfg)?;
            let ck = cfg.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            let manifest = build_dataset(&datasets, &cfg, ck.as_ref().map(|c| (&c.denoiser, &c.fusion)), &out)?;
            println!(
                "built {} samples ({}) into {}",
                manifest.entries.len(),
                if manifest.generated { "generated" } else { "warped" },
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
