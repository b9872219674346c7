use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ovreg_core::bnb::Polish;
use ovreg_core::harness::{align, default_np, oracle, run_experiment, AlignOptions, ExperimentConfig, TransformChoice};
use ovreg_core::pointset::PointSet;
use ovreg_core::transform::Transform;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "ovreg", version, about = "Globally ε-optimal registration of partially overlapping point sets")]
struct Cli {
    /// Worker threads for node evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Similarity2d,
    Affine2d,
    Rigid3d,
}

impl From<Kind> for TransformChoice {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Similarity2d => TransformChoice::Similarity2d,
            Kind::Affine2d => TransformChoice::Affine2d,
            Kind::Rigid3d => TransformChoice::Rigid3d,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolishArg {
    Off,
    Incumbent,
    Every,
}

impl From<PolishArg> for Polish {
    fn from(p: PolishArg) -> Self {
        match p {
            PolishArg::Off => Polish::Off,
            PolishArg::Incumbent => Polish::Incumbent,
            PolishArg::Every => Polish::Every,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Register a model point set onto a scene point set.
    Align {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum)]
        transform: Kind,
        /// Number of matched pairs, or `auto` for ⌊0.9 min(n_x, n_y)⌋.
        #[arg(long, value_parser = parse_np)]
        np: NpArg,
        /// Tolerance factor; the search stops within min(n_x, n_y)·eps0 of the optimum.
        #[arg(long, default_value_t = 8.0)]
        eps0: f64,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long, default_value_t = 1_000_000)]
        max_nodes: usize,
        /// Rotation grid points per axis (rigid3d only).
        #[arg(long, default_value_t = 50)]
        grid: usize,
        /// Widening of grid-sampled rotation ranges, in grid steps (rigid3d only).
        #[arg(long, default_value_t = 0.0)]
        padding: f64,
        #[arg(long, value_enum, default_value = "off")]
        polish: PolishArg,
        /// Result file (JSON); the trace goes next to it as `<stem>.trace.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a synthetic experiment described by a key = value config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Directory for results.csv and summary.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Exhaustive search over all matchings; only for tiny inputs.
    Oracle {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum)]
        transform: Kind,
        #[arg(long)]
        np: usize,
        /// Result file (JSON); printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Align { model, scene, transform, np, eps0, max_depth, max_nodes, grid, padding, polish, out } => {
            let choice = TransformChoice::from(transform);
            let (x, y) = read_pair(&model, &scene, choice)?;
            let n_p = match np {
                NpArg::Auto => default_np(x.len(), y.len()),
                NpArg::Count(n) => n,
            };
            let opts = AlignOptions { eps0, max_depth, max_nodes, grid, padding, polish: polish.into(), rotation_grid: None };
            let res = align(choice, &x, &y, n_p, &opts)?;
            let trace_path = trace_path(&out);
            res.trace.save_csv(&trace_path).with_context(|| format!("writing {}", trace_path.display()))?;
            let doc = json!({
                "transform_kind": choice.to_string(),
                "transform": transform_json(&res.transform),
                "n_p": n_p,
                "matches": res.matches,
                "residual_rms": res.residual_rms,
                "energy": res.energy,
                "lower_bound": res.lower_bound,
                "epsilon": res.epsilon,
                "status": res.status.to_string(),
                "nodes": res.trace.nodes_evaluated,
                "flagged_nodes": res.trace.flagged_nodes,
                "wall_time_s": res.seconds,
                "trace": trace_path.file_name().map(|f| f.to_string_lossy().into_owned()),
            });
            write_json(&out, &doc)?;
            println!(
                "{}: E = {:.6}, lower bound = {:.6}, rms = {:.6}, {} nodes, {:.2} s",
                res.status, res.energy, res.lower_bound, res.residual_rms, res.trace.nodes_evaluated, res.seconds
            );
        }
        Command::Experiment { config, out } => {
            let cfg = ExperimentConfig::read(&config).with_context(|| format!("reading {}", config.display()))?;
            let res = run_experiment(&cfg)?;
            res.write(&out).with_context(|| format!("writing results into {}", out.display()))?;
            println!("outlier_ratio,occlusion,np_ratio,trials,mean_rms,median_rms,successes");
            for s in &res.summary {
                println!(
                    "{},{},{},{},{:.6},{:.6},{}",
                    s.outlier_ratio, s.occlusion, s.np_ratio, s.trials, s.mean_rms, s.median_rms, s.successes
                );
            }
        }
        Command::Oracle { model, scene, transform, np, out } => {
            let choice = TransformChoice::from(transform);
            let (x, y) = read_pair(&model, &scene, choice)?;
            let res = oracle(choice, &x, &y, np)?;
            let doc = json!({
                "transform_kind": choice.to_string(),
                "transform": transform_json(&res.transform),
                "n_p": np,
                "matches": res.matches,
                "energy": res.energy,
                "eliminated_energy": res.eliminated_energy,
                "matchings": res.matchings,
            });
            match out {
                Some(path) => write_json(&path, &doc)?,
                None => println!("{}", serde_json::to_string_pretty(&doc)?),
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum NpArg {
    Auto,
    Count(usize),
}

fn parse_np(s: &str) -> std::result::Result<NpArg, String> {
    if s == "auto" {
        return Ok(NpArg::Auto);
    }
    s.parse().map(NpArg::Count).map_err(|_| format!("expected a positive integer or `auto`, got {s:?}"))
}

fn read_pair(model: &Path, scene: &Path, choice: TransformChoice) -> Result<(PointSet, PointSet)> {
    let read = |p: &Path| PointSet::read(p, Some(choice.dim())).with_context(|| format!("reading {}", p.display()));
    Ok((read(model)?, read(scene)?))
}

fn trace_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "result".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.trace.csv"))
}

fn write_json(path: &Path, doc: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(doc)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn transform_json(t: &Transform) -> Value {
    match t {
        Transform::Affine2 { a, b } => json!({
            "a": [[a[(0, 0)], a[(0, 1)]], [a[(1, 0)], a[(1, 1)]]],
            "b": [b[0], b[1]],
        }),
        Transform::Rigid3 { r, t } => json!({
            "r": (0..3).map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]).collect::<Vec<_>>(),
            "t": [t[0], t[1], t[2]],
        }),
    }
}
