//! Command-line front end.
//!
//! Module errors are reported as a single stderr line
//! `error: <Class>: <message>` with exit code 1; usage errors exit with 2.
//!
//! Environment:
//! - `POISSONPROP_THREADS`: worker thread cap.
//! - `POISSONPROP_SEED`: overrides the seed of `synth` specs.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::Serialize;

use crate::episode::{run_episode, EpisodeResult, PredictionMode};
use crate::error::{Error, Result};
use crate::graph::{build_weight_graph_with, Symmetrization, WeightedGraph, DEFAULT_K};
use crate::io::{load_episode, load_tensor, save_tensor, save_tensor_as, write_synth_episode, Dtype, SynthSpec};
use crate::metrics::{dsc, BinaryMask, DSC_CONVENTION};
use crate::poisson::{
    build_source, build_source_one_hot, poisson_solve_iterative, IterationOptions, StopReason, DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOL,
};
use crate::tensor::{FeatureMap, Tensor};

pub const THREADS_ENV: &str = "POISSONPROP_THREADS";
pub const SEED_ENV: &str = "POISSONPROP_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "poissonprop",
    version,
    about = "Poisson-learning label propagation for few-shot segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SymArg {
    Mean,
    Max,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a kNN weight graph and write it as (i, j, w) triplets.
    Graph {
        /// n x C point list, or C x H x W feature map (pixels become points).
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, value_enum, default_value = "mean")]
        symmetrization: SymArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Propagate labels over a saved graph.
    Propagate {
        #[arg(long)]
        graph: PathBuf,
        /// Class indices (rank 1) or one-hot rows (rank 2) of the first vertices.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long = "k-classes", default_value_t = 2)]
        k_classes: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
        tmax: usize,
        /// Vertex count; defaults to the largest index in the graph plus one.
        #[arg(long)]
        vertices: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full episode described by a manifest.
    Episode {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Dice similarity score of two binary masks.
    Dice {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Generate a synthetic episode.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
}

/// Entry point used by the binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(args, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let threads = match thread_limit() {
        Ok(t) => t,
        Err(e) => return report(err, &e),
    };
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command, out, err)),
            Err(e) => Err(Error::InvalidParameter(format!("thread pool: {e}"))),
        },
        None => dispatch(cli.command, out, err),
    };
    match result {
        Ok(()) => 0,
        Err(e) => report(err, &e),
    }
}

fn report(err: &mut (dyn Write + Send), e: &Error) -> i32 {
    let message = e.to_string().replace('\n', " ");
    let _ = writeln!(err, "error: {}: {}", e.class(), message);
    1
}

fn thread_limit() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::InvalidParameter(format!("{THREADS_ENV}={v} is not a positive integer"))),
        _ => Ok(None),
    }
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::InvalidParameter(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        _ => Ok(None),
    }
}

fn dispatch(command: Command, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<()> {
    match command {
        Command::Graph {
            features,
            k,
            symmetrization,
            out: path,
        } => cmd_graph(&features, k, symmetrization, &path, out),
        Command::Propagate {
            graph,
            labels,
            k_classes,
            tol,
            tmax,
            vertices,
            out: path,
        } => cmd_propagate(
            &graph,
            &labels,
            k_classes,
            IterationOptions {
                tol,
                max_iterations: tmax,
            },
            vertices,
            &path,
            out,
            err,
        ),
        Command::Episode { manifest, out_dir } => cmd_episode(&manifest, &out_dir, out, err),
        Command::Dice { pred, gt } => cmd_dice(&pred, &gt, out),
        Command::Synth { spec, out_dir } => cmd_synth(&spec, &out_dir, out),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

/// Points from a rank-2 `n x C` tensor or the pixels of a feature map.
pub fn points_from_tensor(t: Tensor) -> Result<Vec<Vec<f64>>> {
    match *t.dims() {
        [_, c] => Ok(t.data().chunks(c).map(<[f64]>::to_vec).collect()),
        [_, _, _] => Ok(FeatureMap::from_tensor(t)?.pixels()),
        _ => Err(Error::ShapeMismatch(format!(
            "features must be rank 2 (n x C) or rank 3 (C x H x W), got {:?}",
            t.dims()
        ))),
    }
}

/// Graph as an `n_edges x 3` tensor of `(i, j, w)` rows.
pub fn graph_to_tensor(g: &WeightedGraph) -> Result<Tensor> {
    let triplets = g.triplets();
    let data = triplets.iter().flat_map(|&(i, j, w)| [i as f64, j as f64, w]).collect();
    Tensor::new(vec![triplets.len(), 3], data)
}

pub fn graph_from_tensor(t: &Tensor, n: Option<usize>) -> Result<WeightedGraph> {
    let [rows, 3] = *t.dims() else {
        return Err(Error::ShapeMismatch(format!(
            "graph tensor must be n_edges x 3, got {:?}",
            t.dims()
        )));
    };
    let index = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 {
            Ok(v as usize)
        } else {
            Err(Error::InvalidTensor(format!(
                "vertex index {v} is not a non-negative integer"
            )))
        }
    };
    let mut triplets = Vec::with_capacity(rows);
    for row in t.data().chunks(3) {
        triplets.push((index(row[0])?, index(row[1])?, row[2]));
    }
    let inferred = triplets.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0);
    WeightedGraph::from_triplets(n.unwrap_or(inferred), &triplets)
}

fn cmd_graph(features: &Path, k: usize, sym: SymArg, path: &Path, out: &mut (dyn Write + Send)) -> Result<()> {
    let points = points_from_tensor(load_tensor(features)?)?;
    let sym = match sym {
        SymArg::Mean => Symmetrization::Mean,
        SymArg::Max => Symmetrization::Max,
    };
    let g = build_weight_graph_with(&points, k, sym)?;
    save_tensor(path, &graph_to_tensor(&g)?)?;
    writeln!(
        out,
        "vertices {} entries {} components {}",
        g.n(),
        g.nnz(),
        g.connected_components()
    )
    .map_err(stdout_err)
}

#[allow(clippy::too_many_arguments)]
fn cmd_propagate(
    graph: &Path,
    labels: &Path,
    k_classes: usize,
    options: IterationOptions,
    vertices: Option<usize>,
    path: &Path,
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> Result<()> {
    let g = graph_from_tensor(&load_tensor(graph)?, vertices)?;
    let lt = load_tensor(labels)?;
    let source = match *lt.dims() {
        [_] => {
            let idx = lt
                .data()
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::InvalidLabel(format!("{v} is not a class index")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            build_source(&idx, g.n(), k_classes)?
        }
        [rows, cols] => {
            if cols != k_classes {
                return Err(Error::DimensionMismatch(format!(
                    "one-hot labels have {cols} columns, k = {k_classes}"
                )));
            }
            let m = Array2::from_shape_vec((rows, cols), lt.data().to_vec()).expect("dims checked");
            build_source_one_hot(m.view(), g.n())?
        }
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "labels must be rank 1 or 2, got {:?}",
                lt.dims()
            )))
        }
    };
    let res = poisson_solve_iterative(&g, &source, options)?;
    for w in &res.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    let (rows, cols) = res.r.dim();
    save_tensor(path, &Tensor::new(vec![rows, cols], res.r.iter().copied().collect())?)?;
    writeln!(
        out,
        "iterations {} final_step {:e} stop {}",
        res.iterations,
        res.final_step,
        stop_name(res.stop)
    )
    .map_err(stdout_err)
}

fn stop_name(s: StopReason) -> &'static str {
    match s {
        StopReason::Converged => "converged",
        StopReason::MaxIterations => "max_iterations",
        StopReason::Direct => "direct",
    }
}

fn mode_name(m: PredictionMode) -> &'static str {
    match m {
        PredictionMode::PoissonOnly => "poisson_only",
        PredictionMode::Calibrated => "calibrated",
    }
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    support_vertices: usize,
    support_foreground: usize,
    support_background: usize,
    auxiliary_vertices: usize,
    query_vertices: usize,
    graph_entries: usize,
    iterations: usize,
    final_step: f64,
    stop: &'static str,
    prediction_mode: &'static str,
    prediction_threshold: f64,
    foreground_pixels: usize,
    dsc: Option<f64>,
    dsc_poisson_only: Option<f64>,
    dsc_calibrated: Option<f64>,
    dsc_convention: &'static str,
    warnings: Vec<String>,
}

fn diagnostics(res: &EpisodeResult, mode: PredictionMode, theta: f64) -> Diagnostics {
    use crate::prototype::PrototypeLabel;
    let (n_s, n_a, n_q) = res.vertices.counts();
    let fg = res
        .support_prototypes
        .iter()
        .filter(|p| p.label == PrototypeLabel::Foreground)
        .count();
    Diagnostics {
        support_vertices: n_s,
        support_foreground: fg,
        support_background: n_s - fg,
        auxiliary_vertices: n_a,
        query_vertices: n_q,
        graph_entries: res.graph.nnz(),
        iterations: res.propagation.iterations,
        final_step: res.propagation.final_step,
        stop: stop_name(res.propagation.stop),
        prediction_mode: mode_name(mode),
        prediction_threshold: theta,
        foreground_pixels: res.predicted.count(),
        dsc: res.dsc(mode),
        dsc_poisson_only: res.dsc_poisson,
        dsc_calibrated: res.dsc_calibrated,
        dsc_convention: DSC_CONVENTION,
        warnings: res.warnings.iter().map(ToString::to_string).collect(),
    }
}

fn mask_tensor(m: &BinaryMask) -> Result<Tensor> {
    Tensor::new(vec![m.height(), m.width()], m.to_values())
}

fn cmd_episode(manifest: &Path, dir: &Path, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<()> {
    let ep = load_episode(manifest)?;
    let res = run_episode(&ep)?;
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let conf = &res.confidence;
    save_tensor(
        dir.join("confidence.t"),
        &Tensor::new(vec![conf.height(), conf.width()], conf.data().to_vec())?,
    )?;
    save_tensor(dir.join("calibrated.t"), &res.calibrated.0.to_tensor())?;
    save_tensor_as(dir.join("predicted_mask.t"), &mask_tensor(&res.predicted)?, Dtype::U8)?;
    save_tensor_as(dir.join("poisson_mask.t"), &mask_tensor(&res.poisson_mask)?, Dtype::U8)?;
    save_tensor_as(
        dir.join("calibrated_mask.t"),
        &mask_tensor(&res.calibrated_mask)?,
        Dtype::U8,
    )?;
    let (rows, cols) = res.propagation.r.dim();
    save_tensor(
        dir.join("propagation.t"),
        &Tensor::new(vec![rows, cols], res.propagation.r.iter().copied().collect())?,
    )?;

    let diag = diagnostics(&res, ep.config.prediction_mode, ep.config.prediction_threshold);
    let json = serde_json::to_string_pretty(&diag).expect("diagnostics serialize") + "\n";
    let diag_path = dir.join("diagnostics.json");
    fs::write(&diag_path, &json).map_err(Error::io(&diag_path))?;

    for w in &res.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    writeln!(
        out,
        "iterations {} final_step {:e} stop {}",
        diag.iterations, diag.final_step, diag.stop
    )
    .map_err(stdout_err)?;
    if let Some(d) = diag.dsc {
        writeln!(out, "DSC {d:?} ({}; mode {})", DSC_CONVENTION, diag.prediction_mode).map_err(stdout_err)?;
    }
    Ok(())
}

fn load_binary(path: &Path) -> Result<BinaryMask> {
    let t = load_tensor(path)?;
    let (h, w) = match *t.dims() {
        [h, w] | [1, h, w] => (h, w),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "{}: mask must be H x W, got {:?}",
                path.display(),
                t.dims()
            )))
        }
    };
    BinaryMask::from_values(h, w, t.data())
}

fn cmd_dice(pred: &Path, gt: &Path, out: &mut (dyn Write + Send)) -> Result<()> {
    let a = load_binary(pred)?;
    let b = load_binary(gt)?;
    let score = dsc(&a, &b)?;
    writeln!(out, "DSC {score:?} ({DSC_CONVENTION})").map_err(stdout_err)
}

fn cmd_synth(spec_path: &Path, dir: &Path, out: &mut (dyn Write + Send)) -> Result<()> {
    let mut spec = SynthSpec::load(spec_path)?;
    if let Some(seed) = seed_override()? {
        spec.seed = seed;
    }
    let manifest = write_synth_episode(&spec, dir)?;
    writeln!(out, "seed {} manifest {}", spec.seed, manifest.display()).map_err(stdout_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(args.iter().copied(), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_error_exit_code() {
        let (code, _, err) = run_capture(&["poissonprop", "frobnicate"]);
        assert_eq!(code, 2);
        assert!(!err.is_empty());
    }

    #[test]
    fn missing_file_is_io_error() {
        let (code, _, err) = run_capture(&["poissonprop", "dice", "--pred", "/no/such/a.t", "--gt", "/no/such/b.t"]);
        assert_eq!(code, 1);
        assert!(err.starts_with("error: IoError: "), "{err}");
        assert_eq!(err.lines().count(), 1);
    }

    #[test]
    fn graph_tensor_round_trip() {
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()])
            .collect();
        let g = crate::graph::build_weight_graph(&pts, 3).unwrap();
        let t = graph_to_tensor(&g).unwrap();
        assert_eq!(t.dims(), &[g.nnz(), 3]);
        assert_eq!(graph_from_tensor(&t, None).unwrap(), g);
        let bad = Tensor::new(vec![1, 3], vec![0.5, 1.0, 1.0]).unwrap();
        assert!(graph_from_tensor(&bad, None).is_err());
    }
}
