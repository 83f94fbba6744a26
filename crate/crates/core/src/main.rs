use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use monolabel::cluster::double_cluster;
use monolabel::exec;
use monolabel::pipeline::io::{self, CLUSTERS_FILE, LABELS_FILE, POINTS_FILE, PR_CURVES_FILE, REPORT_FILE, REPORT_TEXT_FILE};
use monolabel::pipeline::report::{pr_curves_csv, render_text};
use monolabel::pipeline::run::{fit_labels, IdentityRefiner};
use monolabel::pipeline::{
    evaluate, merge_keep_initial, merge_replace, run_global_ba, select_by_depth, simulate, PipelineConfig,
    PipelineError, RunStatus, SceneBundle, EXIT_GATE_SKIPPED, EXIT_OK,
};
use monolabel::triangulate::{parallax_gate, reconstruct};

#[derive(Parser)]
#[command(name = "monolabel", version, about = "3D pseudo labels from monocular video geometry")]
struct Cli {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads. Overrides MONOLABEL_THREADS and the config file.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    /// Keep initial 3D labels, add confident predictions for the rest.
    KeepInitial,
    /// Use the last predictions only, one generation later.
    Replace,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory with ground truth.
    Simulate {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_objects: Option<usize>,
        #[arg(long)]
        n_frames: Option<usize>,
        /// Pixel noise standard deviation.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        moving_fraction: Option<f64>,
        #[arg(long)]
        no_occlusion: bool,
    },
    /// Triangulate and refine every keypoint track.
    Triangulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Group reconstructed points into per-track clusters.
    Cluster {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a 3D box to each cluster; tracks without one become 2D-only.
    Fit {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full Global-BA stage; evaluates too when the scene has ground truth.
    Run {
        #[arg(long)]
        scene: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_eval: bool,
    },
    /// Demote labels outside a depth range to 2D-only.
    Select {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the self-training range instead of the initial one.
        #[arg(long)]
        retrain: bool,
        #[arg(long)]
        min: Option<f64>,
        #[arg(long)]
        max: Option<f64>,
    },
    /// Combine label sets between self-training iterations.
    Merge {
        #[arg(long, value_enum)]
        strategy: Strategy,
        /// Initial labels (keep-initial only).
        #[arg(long)]
        initial: Option<PathBuf>,
        #[arg(long)]
        predicted: PathBuf,
        #[arg(long)]
        score_floor: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score labels against the scene's ground truth.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// JSON report path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        text: Option<PathBuf>,
        #[arg(long)]
        curves: Option<PathBuf>,
    },
}

fn config_error(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(PipelineError::from)
}

fn load_scene(dir: &Path) -> Result<SceneBundle, PipelineError> {
    io::read_scene(dir)
}

fn write_report(dir_or_file: &Path, text: Option<&Path>, curves: Option<&Path>, labels: &monolabel::pipeline::LabelSet, scene: &SceneBundle, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let report = evaluate(labels, scene, &cfg.eval)?;
    write_text(dir_or_file, &io::to_json_pretty(&report))?;
    if let Some(p) = text {
        write_text(p, &render_text(&report))?;
    }
    if let Some(p) = curves {
        write_text(p, &pr_curves_csv(labels, scene, &cfg.eval)?)?;
    }
    Ok(())
}

fn execute(command: Command, mut cfg: PipelineConfig) -> Result<i32, PipelineError> {
    match command {
        Command::Simulate { seed, out, n_objects, n_frames, noise, moving_fraction, no_occlusion } => {
            cfg.sim.seed = seed;
            if let Some(n) = n_objects {
                cfg.sim.n_objects = n;
            }
            if let Some(n) = n_frames {
                cfg.sim.n_frames = n;
            }
            if let Some(s) = noise {
                cfg.sim.pixel_noise = s;
            }
            if let Some(f) = moving_fraction {
                cfg.sim.moving_fraction = f;
            }
            if no_occlusion {
                cfg.sim.occlusion = false;
            }
            cfg.sim.validate().map_err(config_error)?;
            let scene = simulate(&cfg.sim)?;
            io::write_scene(&out, &scene)?;
            eprintln!(
                "wrote {} frames, {} boxes, {} point tracks to {}",
                scene.frames.len(),
                scene.tracks2d.len(),
                scene.obs_tracks.len(),
                out.display()
            );
            Ok(EXIT_OK)
        }
        Command::Triangulate { scene, out } => {
            let scene = load_scene(&scene)?;
            if !parallax_gate(&scene.frames, &cfg.ba) {
                io::write_points(&out, &[])?;
                eprintln!("camera baseline below {} m: reconstruction skipped", cfg.ba.parallax_min_baseline_m);
                return Ok(EXIT_GATE_SKIPPED);
            }
            let rec = reconstruct(&scene.obs_tracks, &scene.frames, &cfg.ba);
            io::write_points(&out, &rec.points)?;
            eprintln!("reconstructed {} points, dropped {}", rec.points.len(), rec.dropped.len());
            Ok(EXIT_OK)
        }
        Command::Cluster { scene, points, out } => {
            let scene = load_scene(&scene)?;
            let points = io::read_points(&points)?;
            let clusters = double_cluster(&points, &scene.frames, &scene.tracks2d, &cfg.cluster);
            io::write_clusters(&out, clusters.values())?;
            eprintln!("{} tracks matched to clusters", clusters.len());
            Ok(EXIT_OK)
        }
        Command::Fit { scene, clusters, out } => {
            let scene = load_scene(&scene)?;
            let clusters = io::read_clusters(&clusters)?;
            let (labels, failures) = fit_labels(&scene, &clusters, &cfg.fit, &IdentityRefiner);
            io::write_labels(&out, &labels)?;
            eprintln!("{} labels ({} fit failures)", labels.len(), failures);
            Ok(EXIT_OK)
        }
        Command::Run { scene: dir, out, no_eval } => {
            let scene = load_scene(&dir)?;
            let result = run_global_ba(&scene, &cfg);
            std::fs::create_dir_all(&out)?;
            io::write_points(&out.join(POINTS_FILE), &result.reconstruction.points)?;
            io::write_clusters(&out.join(CLUSTERS_FILE), result.clusters.values())?;
            io::write_labels(&out.join(LABELS_FILE), &result.labels)?;
            if !no_eval && scene.truth.is_some() {
                write_report(
                    &out.join(REPORT_FILE),
                    Some(&out.join(REPORT_TEXT_FILE)),
                    Some(&out.join(PR_CURVES_FILE)),
                    &result.labels,
                    &scene,
                    &cfg,
                )?;
            }
            let d = &result.diagnostics;
            eprintln!(
                "{} tracks: {} with 3D labels ({} complete); {} of {} points reconstructed",
                d.n_tracks, d.n_labels_3d, d.n_complete, d.n_reconstructed_points, d.n_observed_points
            );
            Ok(match result.status {
                RunStatus::Completed => EXIT_OK,
                RunStatus::GateSkipped => {
                    eprintln!("camera baseline below {} m: all labels are 2D-only", cfg.ba.parallax_min_baseline_m);
                    EXIT_GATE_SKIPPED
                }
            })
        }
        Command::Select { scene, labels, out, retrain, min, max } => {
            let scene = load_scene(&scene)?;
            let labels = io::read_labels(&labels)?;
            let base = if retrain { cfg.select.retrain_range } else { cfg.select.initial_range };
            let range = (min.unwrap_or(base.0), max.unwrap_or(base.1));
            if !(range.0 < range.1) {
                return Err(config_error("depth range min must be below max"));
            }
            let selected = select_by_depth(&labels, range, &scene.frames, &scene.tracks2d);
            io::write_labels(&out, &selected)?;
            Ok(EXIT_OK)
        }
        Command::Merge { strategy, initial, predicted, score_floor, out } => {
            let predicted = io::read_labels(&predicted)?;
            let merged = match strategy {
                Strategy::KeepInitial => {
                    let initial = initial.ok_or_else(|| config_error("--initial is required for keep-initial"))?;
                    let floor = score_floor.unwrap_or(cfg.merge.score_floor);
                    if !floor.is_finite() {
                        return Err(config_error("--score-floor must be finite"));
                    }
                    merge_keep_initial(&io::read_labels(&initial)?, &predicted, floor)
                }
                Strategy::Replace => merge_replace(&predicted),
            };
            io::write_labels(&out, &merged)?;
            Ok(EXIT_OK)
        }
        Command::Eval { scene, labels, out, text, curves } => {
            let scene = load_scene(&scene)?;
            let labels = io::read_labels(&labels)?;
            write_report(&out, text.as_deref(), curves.as_deref(), &labels, &scene, &cfg)?;
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = (|| {
        let cfg = match &cli.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        let threads = cfg.resolve_threads(cli.threads)?;
        match threads {
            Some(n) => exec::with_threads(n, || execute(cli.command, cfg)),
            None => execute(cli.command, cfg),
        }
    })();
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
