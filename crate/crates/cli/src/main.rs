use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use densitykit::{KernelConfig, Scheme};
use densitykit_cli::commands::{cmd_count, cmd_dedup, cmd_eval, cmd_features, format_count, FeatureSource};
use densitykit_cli::job::{cmd_generate, JobConfig, MaskRect};
use densitykit_cli::service::{serve, AppState};

#[derive(Parser)]
#[command(name = "densitykit", version, about = "Density-map ground truth from line-segment labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one DMAP density map per annotated image.
    Generate(GenerateArgs),
    /// Score predicted DMAP maps against ground truth.
    Eval(EvalArgs),
    /// Drop near-duplicate images by feature distance.
    Dedup(DedupArgs),
    /// Write built-in pyramid FST5 features for a directory of images.
    Features {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Print the object count of DMAP files.
    Count {
        files: Vec<PathBuf>,
        #[arg(long)]
        round_counts: bool,
    },
    /// Run the annotation HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
    },
}

#[derive(Args)]
struct KernelArgs {
    /// Spread at line endpoints and for dot labels (pixels).
    #[arg(long, default_value_t = 15.0)]
    sigma_basic: f64,
    /// Expanding factor along lines.
    #[arg(long, default_value_t = 0.2)]
    a: f64,
    /// Aspect ratio (length / width).
    #[arg(long, default_value_t = 4.0)]
    ar: f64,
    /// FWHM constant in units of sigma.
    #[arg(long, default_value_t = 2.355)]
    fwhm: f64,
    /// FWHM penaliser.
    #[arg(long, default_value_t = 4.0)]
    alpha: f64,
    /// Truncation half-width in sigmas.
    #[arg(long, default_value_t = 3.0)]
    trunc_mult: f64,
}

impl From<&KernelArgs> for KernelConfig {
    fn from(k: &KernelArgs) -> Self {
        KernelConfig {
            sigma_basic: k.sigma_basic,
            a: k.a,
            aspect_ratio: k.ar,
            fwhm_const: k.fwhm,
            alpha: k.alpha,
            trunc_mult: k.trunc_mult,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Annotation JSON files or directories of them.
    #[arg(long, required = true, num_args = 1..)]
    annotations: Vec<PathBuf>,
    /// Source images (needed for --mask).
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "agk")]
    scheme: Scheme,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Black out x,y,w,h in each image before use (repeatable).
    #[arg(long = "mask")]
    masks: Vec<MaskRect>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    round_counts: bool,
    /// Also write 16-bit PGM previews.
    #[arg(long)]
    pgm: bool,
    /// Write the run summary as JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-image records as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct DedupArgs {
    /// Directory of FST5 feature files.
    #[arg(long, conflicts_with = "images", required_unless_present = "images")]
    features: Option<PathBuf>,
    /// Directory of images, featurised with the built-in pyramid.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    threshold: f64,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate(args) => {
            let config = JobConfig {
                annotation_paths: args.annotations,
                image_dir: args.images,
                output_dir: args.out,
                scheme: args.scheme,
                kernel: KernelConfig::from(&args.kernel),
                masks: args.masks,
                jobs: args.jobs,
                write_pgm: args.pgm,
            };
            let summary = cmd_generate(&config)?;
            for s in &summary.images {
                println!("{}\t{}\t{}", s.image_id, s.labels, format_count(s.count, args.round_counts));
            }
            for e in &summary.errors {
                eprintln!("error: {e}");
            }
            println!(
                "generated {} map(s) with scheme {} in {:.3}s",
                summary.images.len(),
                summary.scheme,
                summary.wall_time_s
            );
            if let Some(path) = args.summary {
                std::fs::write(path, serde_json::to_string_pretty(&summary)?)?;
            }
            Ok(summary.ok())
        }
        Command::Eval(args) => {
            let (report, _) = cmd_eval(&args.gt, &args.pred, args.report.as_deref(), args.csv.as_deref(), args.jobs)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(true)
        }
        Command::Dedup(args) => {
            let source = match (args.features, args.images) {
                (Some(dir), _) => FeatureSource::Files(dir),
                (None, Some(dir)) => FeatureSource::Images(dir),
                (None, None) => unreachable!("clap requires one source"),
            };
            let report = cmd_dedup(&source, args.threshold, args.report.as_deref(), args.jobs)?;
            for d in &report.outcome.dropped {
                println!("drop {}\t(near {}, distance {:.4})", d.id, d.kept_id, d.distance);
            }
            println!("kept {} of {} image(s)", report.outcome.kept.len(), report.total);
            Ok(true)
        }
        Command::Features { images, out, jobs } => {
            let n = cmd_features(&images, &out, jobs)?;
            println!("wrote {n} feature stack(s) to {}", out.display());
            Ok(true)
        }
        Command::Count { files, round_counts } => {
            for (name, count) in cmd_count(&files)? {
                println!("{name}\t{}", format_count(count, round_counts));
            }
            Ok(true)
        }
        Command::Serve {
            port,
            host,
            images,
            annotations,
        } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(
                SocketAddr::new(host, port),
                AppState {
                    image_dir: images,
                    annotation_dir: annotations,
                },
            ))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
