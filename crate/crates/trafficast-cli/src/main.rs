//! Command-line entry point wiring the pipeline stages together.
//!
//! Exit codes: 0 on success, 1 on configuration/validation errors, 2 on
//! runtime errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trafficast::config::PipelineConfig;
use trafficast::pipeline::{self, write_run_manifest};
use trafficast::Error;

#[derive(Parser)]
#[command(
    name = "trafficast",
    version,
    about = "Network-scale short-term traffic prediction: shape-based clustering plus group-shared recurrent predictors"
)]
struct Cli {
    /// Configuration file (TOML); defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed override
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the parallel stages
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory override
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the labeled synthetic network (data.csv, labels.csv)
    Synth,
    /// Load, clean, and calendar-filter the dataset; writes cleaned.csv
    Ingest,
    /// Pooled day-to-day similarity CDF (similarity.csv/.svg)
    Similarity,
    /// Mean training-data autocorrelation profile (acf.csv/.svg)
    Acf,
    /// Choose the input interval from the ACF profile and print the table
    SelectInterval,
    /// Export every daily sub-series as a binary PGM image
    Rasterize {
        /// Raster resolution R (images are R x R)
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Run DeepCluster: embedder training, embeddings, k-means grouping
    Cluster,
    /// Train group models (and per-segment baselines) per horizon
    Train,
    /// Evaluate trained models and emit the report artifacts
    Evaluate,
    /// Re-emit report.csv and the charts from an existing report.json
    Report,
    /// Everything end to end
    Pipeline,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Ingest => "ingest",
            Command::Similarity => "similarity",
            Command::Acf => "acf",
            Command::SelectInterval => "select-interval",
            Command::Rasterize { .. } => "rasterize",
            Command::Cluster => "cluster",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
            Command::Pipeline => "pipeline",
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::from_path(path)?,
        None => PipelineConfig::from_env()?,
    };
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.run.threads = threads;
    }
    if let Some(out_dir) = &cli.out_dir {
        config.run.out_dir = out_dir.display().to_string();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let config = load_config(cli)?;
    let out_dir = config.out_dir();

    // determinism first: one worker unless asked otherwise
    pipeline::init_threads(config.run.threads);

    write_run_manifest(cli.command.name(), &config, &out_dir)?;

    match &cli.command {
        Command::Synth => {
            pipeline::synth_dataset(&config, &out_dir)?;
            println!(
                "wrote {} and {}",
                out_dir.join(pipeline::DATA_CSV).display(),
                out_dir.join(pipeline::LABELS_CSV).display()
            );
        }
        Command::Ingest => {
            let raw = pipeline::load_dataset(&config, &out_dir)?;
            let cleaned = pipeline::clean(&raw, &config)?;
            let path = out_dir.join("cleaned.csv");
            trafficast::ingest::write_csv(&cleaned, &path)?;
            for s in &cleaned {
                println!(
                    "{}: {} samples, {} days",
                    s.segment_id(),
                    s.len(),
                    s.len() / config.data.period
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Similarity => {
            let grids = load_grids(&config, &out_dir)?;
            let cdf = pipeline::similarity_artifacts(&grids, &config, &out_dir)?;
            let at_02 = cdf
                .iter()
                .find(|(t, _)| (*t - 0.2).abs() < 1e-9)
                .map_or(0.0, |(_, f)| *f);
            println!(
                "pooled similarity CDF written; {:.1}% of slots below 0.2",
                at_02 * 100.0
            );
        }
        Command::Acf => {
            let grids = load_grids(&config, &out_dir)?;
            pipeline::interval_stage(&grids, &config, &out_dir)?;
            println!(
                "wrote {} and {}",
                out_dir.join(pipeline::ACF_CSV).display(),
                out_dir.join(pipeline::ACF_SVG).display()
            );
        }
        Command::SelectInterval => {
            let grids = load_grids(&config, &out_dir)?;
            let decision = pipeline::interval_stage(&grids, &config, &out_dir)?;
            pipeline::print_interval_table(&decision, std::io::stdout())
                .map_err(|source| Error::Io {
                    path: "stdout".into(),
                    source,
                })?;
        }
        Command::Rasterize { resolution } => {
            let grids = load_grids(&config, &out_dir)?;
            let resolution = resolution.unwrap_or(config.cluster.resolution);
            let written = pipeline::rasterize_stage(&grids, resolution, &out_dir)?;
            println!("wrote {written} PGM images at {resolution}x{resolution}");
        }
        Command::Cluster => {
            let grids = load_grids(&config, &out_dir)?;
            let artifacts = pipeline::cluster_stage(&grids, &config, &out_dir)?;
            println!(
                "K = {} groups, silhouette {:.3}; wrote {}",
                artifacts.clustering.k,
                artifacts.clustering.silhouette,
                out_dir.join(pipeline::CLUSTERS_JSON).display()
            );
        }
        Command::Train => {
            let raw = pipeline::load_dataset(&config, &out_dir)?;
            let cleaned = pipeline::clean(&raw, &config)?;
            let clusters = pipeline::read_clusters(&out_dir)?;
            let decision = stride_decision(&config, &out_dir, &cleaned)?;
            let predict_config = config.predict_config(decision.stride);
            let models = pipeline::train_stage(
                &cleaned,
                &clusters.assignments,
                &predict_config,
                &config,
                &out_dir,
            )?;
            println!(
                "trained {} group models and {} baselines (l = {})",
                models.gm.len(),
                models.im.len(),
                decision.stride
            );
        }
        Command::Evaluate => {
            let raw = pipeline::load_dataset(&config, &out_dir)?;
            let cleaned = pipeline::clean(&raw, &config)?;
            let clusters = pipeline::read_clusters(&out_dir)?;
            let decision = stride_decision(&config, &out_dir, &cleaned)?;
            let predict_config = config.predict_config(decision.stride);
            let models =
                pipeline::load_models(&clusters.assignments, clusters.k, &config, &out_dir)?;
            let report = pipeline::evaluate_stage(
                &cleaned,
                &clusters.assignments,
                clusters.k,
                &predict_config,
                &config,
                &models,
                &out_dir,
            )?;
            print_network_summary(&report);
        }
        Command::Report => {
            let report = trafficast::report::read_report(&out_dir.join("report.json"))?;
            trafficast::report::write_report(&report, &out_dir)?;
            trafficast::report::write_report_charts(&report, &out_dir)?;
            print_network_summary(&report);
        }
        Command::Pipeline => {
            let report = pipeline::run_pipeline(&config, &out_dir, |msg| {
                println!("[pipeline] {msg}");
            })?;
            print_network_summary(&report);
        }
    }
    Ok(())
}

fn load_grids(
    config: &PipelineConfig,
    out_dir: &std::path::Path,
) -> Result<Vec<trafficast::series::DayGrid>, Error> {
    let raw = pipeline::load_dataset(config, out_dir)?;
    let cleaned = pipeline::clean(&raw, config)?;
    pipeline::day_grids(&cleaned, config)
}

fn stride_decision(
    config: &PipelineConfig,
    out_dir: &std::path::Path,
    cleaned: &[trafficast::ingest::SpeedSeries],
) -> Result<pipeline::IntervalDecision, Error> {
    if config.series.stride > 0 {
        return Ok(pipeline::IntervalDecision {
            stride: config.series.stride,
            fallback: false,
            threshold: config.series.acf_threshold,
            coefficients: Vec::new(),
            confidence_band: 0.0,
        });
    }
    match pipeline::read_interval(out_dir) {
        Ok(decision) => Ok(decision),
        Err(_) => {
            let grids = pipeline::day_grids(cleaned, config)?;
            pipeline::interval_stage(&grids, config, out_dir)
        }
    }
}

fn print_network_summary(report: &trafficast::report::Report) {
    println!(
        "{} segments in {} groups; model reduction {:.1}%",
        report.segments,
        report.groups,
        report.model_reduction * 100.0
    );
    for row in &report.network {
        println!(
            "horizon {} {}: train MRE {:.2}%, test MRE {:.2}%, gap {:.2}%",
            row.horizon,
            row.algorithm,
            row.mre_train * 100.0,
            row.mre_test * 100.0,
            row.gap * 100.0
        );
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not errors
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
