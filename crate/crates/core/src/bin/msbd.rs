use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use msbd::demo::mixture_demo;
use msbd::denoiser::{DenoiserBackend, MixtureOracle, MixtureSpec, StubDenoiser};
use msbd::pipeline::{Ablation, Pipeline, PipelineConfig};
use msbd::png_io::{read_image, read_mask, write_image, BitDepth};
use msbd::protocol::RemoteBackend;
use msbd::rerank::ScorerBackend;
use msbd::upscaler::{BicubicUpscaler, UpscalerBackend};

#[derive(Parser)]
#[command(name = "msbd", version, about = "Multi-stage blended diffusion image editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Edit the masked region of an image.
    Edit(Box<EditArgs>),
    /// Print the default configuration as TOML.
    Defaults,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Oracle,
    Remote,
    Stub,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Ablation,
}

#[derive(Clone, Copy, ValueEnum)]
enum UpscaleOnly {
    Bilinear,
    Sr,
}

#[derive(Clone, Copy, ValueEnum)]
enum Demo {
    Mixture,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    image: Option<PathBuf>,
    /// Grayscale PNG: 0 keeps a pixel, full scale edits it.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value = "")]
    prompt: String,
    #[arg(long)]
    out: PathBuf,
    /// TOML file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "oracle")]
    backend: BackendKind,
    #[arg(long, value_enum, default_value = "full")]
    mode: Mode,
    /// Ablation shortcut for the variants without later diffusion.
    #[arg(long, value_enum)]
    upscale_only: Option<UpscaleOnly>,
    /// Ablation variant a-f.
    #[arg(long)]
    ablation: Option<String>,
    /// Write every intermediate image into this directory.
    #[arg(long)]
    dump_intermediates: Option<PathBuf>,
    /// Worker threads; the output does not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    pixel_space: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    repaint: Option<usize>,
    #[arg(long)]
    margin: Option<usize>,
    /// Native resolution of the built-in oracle and stub backends.
    #[arg(long, default_value_t = 64)]
    native: usize,
    #[arg(long, value_parser = ["8", "16"], default_value = "8")]
    bit_depth: String,
    /// Run a built-in demo instead of an edit; `--out` receives JSON stats.
    #[arg(long, value_enum)]
    demo: Option<Demo>,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
}

/// Failure classes with their exit codes.
enum Failure {
    Input(anyhow::Error),
    Backend(anyhow::Error),
    Config(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Backend(_) => 2,
            Failure::Config(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Backend(e) | Failure::Config(e) => e,
        }
    }
}

impl From<msbd::Error> for Failure {
    fn from(e: msbd::Error) -> Self {
        let class = if e.is_backend_failure() {
            Failure::Backend
        } else if matches!(e.root(), msbd::Error::Config(_)) {
            Failure::Config
        } else {
            Failure::Input
        };
        class(e.into())
    }
}

fn config_for(args: &EditArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.steps {
        cfg.sampler_steps = v;
    }
    if let Some(v) = args.batch {
        cfg.batch_b = v;
    }
    if let Some(v) = args.repaint {
        cfg.repaint_r = v;
    }
    if let Some(v) = args.margin {
        cfg.margin = v;
    }
    if args.pixel_space {
        cfg.pixel_space_mode = true;
    }
    if args.dump_intermediates.is_some() {
        cfg.dump_intermediates = true;
    }
    cfg.ablation = match (args.mode, args.upscale_only, &args.ablation) {
        (Mode::Full, None, None) => cfg.ablation,
        (Mode::Full, _, _) => {
            return Err(Failure::Config(anyhow!(
                "--upscale-only and --ablation need --mode ablation"
            )));
        }
        (Mode::Ablation, Some(UpscaleOnly::Bilinear), None) => Ablation::Bilinear,
        (Mode::Ablation, Some(UpscaleOnly::Sr), None) => Ablation::SrOnly,
        (Mode::Ablation, None, Some(letter)) => letter.parse()?,
        (Mode::Ablation, Some(_), Some(_)) => {
            return Err(Failure::Config(anyhow!("use either --upscale-only or --ablation")));
        }
        (Mode::Ablation, None, None) => {
            return Err(Failure::Config(anyhow!(
                "--mode ablation needs --upscale-only or --ablation"
            )));
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn default_oracle(native: usize) -> MixtureOracle {
    let mix = MixtureSpec::scalar(&[(0.5, 0.3, 0.1), (0.5, 0.7, 0.1)]).expect("valid mixture");
    MixtureOracle::new(mix, native)
}

fn run_demo(args: &EditArgs) -> Result<(), Failure> {
    if !matches!(args.backend, BackendKind::Oracle) {
        return Err(Failure::Config(anyhow!("--demo mixture runs on --backend oracle")));
    }
    let steps = args.steps.unwrap_or(50);
    let stats = mixture_demo(1.0, 0.1, args.samples, steps, args.seed.unwrap_or(0))?;
    let json = serde_json::to_string_pretty(&stats).map_err(|e| Failure::Input(e.into()))?;
    std::fs::write(&args.out, json + "\n")
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(Failure::Input)?;
    for m in &stats.modes {
        println!(
            "mode {:+.1}: mass {:.4}, mean {:+.4}, std {:.4}",
            m.center, m.mass, m.mean, m.std
        );
    }
    Ok(())
}

fn dump(dir: &Path, items: &[msbd::pipeline::Intermediate], depth: BitDepth) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, item) in items.iter().enumerate() {
        let path = dir.join(format!("{i:02}_{}.png", item.name));
        write_image(&path, &item.image, depth).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run_edit(args: &EditArgs) -> Result<(), Failure> {
    let cfg = config_for(args)?;
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Failure::Config(e.into()))?;
    }
    let (image_path, mask_path) = match (&args.image, &args.mask) {
        (Some(i), Some(m)) => (i, m),
        _ => return Err(Failure::Input(anyhow!("edit needs --image and --mask"))),
    };
    let image = read_image(image_path)?;
    let mask = read_mask(mask_path)?;
    let depth = if args.bit_depth == "16" {
        BitDepth::Sixteen
    } else {
        BitDepth::Eight
    };

    let oracle;
    let stub;
    let remote;
    let bicubic = BicubicUpscaler::default();
    let (denoiser, upscaler, scorer): (&dyn DenoiserBackend, &dyn UpscalerBackend, Option<&dyn ScorerBackend>) =
        match args.backend {
            BackendKind::Oracle => {
                oracle = default_oracle(args.native);
                (&oracle, &bicubic, None)
            }
            BackendKind::Stub => {
                stub = StubDenoiser {
                    native_resolution: args.native,
                };
                (&stub, &bicubic, None)
            }
            BackendKind::Remote => {
                remote = RemoteBackend::from_env()?;
                (&remote, &remote, Some(&remote))
            }
        };
    let mut pipeline = Pipeline::new(cfg, denoiser, upscaler)?;
    if let Some(s) = scorer {
        pipeline = pipeline.with_scorer(s);
    }
    let out = pipeline.run(&image, &mask, &args.prompt)?;
    write_image(&args.out, &out.image, depth)?;
    if let Some(dir) = &args.dump_intermediates {
        dump(dir, &out.intermediates, depth).map_err(Failure::Input)?;
    }
    eprintln!(
        "wrote {} ({} denoiser calls, candidate {} of {})",
        args.out.display(),
        out.denoiser_calls,
        out.selected,
        out.scores.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Defaults => {
            print!("{}", PipelineConfig::default().to_toml_string());
            Ok(())
        }
        Command::Edit(args) if args.demo.is_some() => run_demo(args),
        Command::Edit(args) => run_edit(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
