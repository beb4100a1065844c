//! Command pipelines behind the `smalltrack` binary: dataset statistics,
//! attribute reports, simulation, training, tracking, evaluation, the omega
//! sweep, and plot rendering.
//!
//! Every command is deterministic given its config and seed, and every
//! output directory embeds the exact configuration that produced it as
//! `config.json`. Summary files are written through an atomic rename.

use crate::dataset::{
    attribute_cooccurrence, dataset_stats, load_dataset, load_results, save_confidences,
    save_results, DatasetError, Sequence,
};
use crate::matcher::{
    load_matcher, save_matcher, train_matcher, BranchMode, MatcherArch, MatcherConfig,
    MatcherError, TrainConfig, TrainingPair,
};
use crate::metrics::{
    attribute_breakdown, evaluate, rank, Curve, EvalResult, MetricsError, RankKey,
};
use crate::sim::{derive_seed, gen_dataset, load_bundle, SimDatasetConfig, SimError};
use crate::tracker::{run_sequence, TrackerConfig, TrackerError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

/// Published sweep results for the original 250-sequence benchmark at full
/// scale: the best weight was 0.2 with PRC 0.437 and AUC 0.255, while 1.0
/// (the deep-cue-only reduction) scored 0.424 / 0.247. Kept for reference;
/// synthetic runs are judged on their own sweep output.
pub const REFERENCE_BEST_OMEGA: f64 = 0.2;
/// See [`REFERENCE_BEST_OMEGA`].
pub const REFERENCE_BEST_PRC: f64 = 0.437;
/// See [`REFERENCE_BEST_OMEGA`].
pub const REFERENCE_BEST_AUC: f64 = 0.255;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl CliError {
    /// Process exit code: 2 for input/validation problems, 3 for violated
    /// internal invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

macro_rules! input_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Input(e.to_string())
            }
        })*
    };
}
input_from!(DatasetError, SimError, MetricsError, MatcherError, TrackerError);

fn io_input(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

/// Tunables shared by train, track, and sweep; loadable from a JSON file via
/// the `--config` flag. Unset fields keep their defaults.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub arch: MatcherArch,
    pub tau_match: f64,
    pub sinkhorn_iters_infer: usize,
    pub sinkhorn_iters_train: usize,
    pub train_steps: usize,
    pub train_lr: f64,
    pub tau_cand_rel: f64,
    pub tau_cand_abs: f64,
    pub tau_new: f64,
    pub tau_redetect: f64,
    pub delta: f64,
    pub nms_window: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            arch: MatcherArch::default(),
            tau_match: 0.2,
            sinkhorn_iters_infer: 100,
            sinkhorn_iters_train: 50,
            train_steps: 600,
            train_lr: 1e-3,
            tau_cand_rel: 0.05,
            tau_cand_abs: 0.1,
            tau_new: 0.25,
            tau_redetect: 0.25,
            delta: 0.05,
            nms_window: 5,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(PipelineConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| io_input(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn matcher_config(&self, omega: f64, mode: BranchMode) -> MatcherConfig {
        MatcherConfig {
            arch: self.arch,
            omega,
            mode,
            tau_match: self.tau_match,
            sinkhorn_iters_infer: self.sinkhorn_iters_infer,
            sinkhorn_iters_train: self.sinkhorn_iters_train,
        }
    }

    pub fn tracker_config(&self, omega: f64, mode: BranchMode) -> TrackerConfig {
        TrackerConfig {
            matcher: self.matcher_config(omega, mode),
            tau_cand_rel: self.tau_cand_rel,
            tau_cand_abs: self.tau_cand_abs,
            tau_new: self.tau_new,
            tau_redetect: self.tau_redetect,
            delta: self.delta,
            nms_window: self.nms_window,
        }
    }
}

/// Runs `f` over the items on up to `jobs` threads, preserving item order in
/// the result. Falls back to the current thread for `jobs <= 1`.
pub fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("worker filled every slot"))
        .collect()
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_input(dir, e))
}

/// Summary files go through a temp file plus rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_input(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_input(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Internal(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_run_config<T: Serialize>(
    out_dir: &Path,
    command: &str,
    seed: u64,
    params: &T,
) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct RunConfig<'a, T> {
        command: &'a str,
        seed: u64,
        params: &'a T,
    }
    write_json(
        &out_dir.join("config.json"),
        &RunConfig {
            command,
            seed,
            params,
        },
    )
}

/// Dataset statistics plus the per-category average sequence length.
pub fn cmd_stats(dataset_dir: &Path, out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let sequences = load_dataset(dataset_dir)?;
    ensure_dir(out_dir)?;
    #[derive(Serialize)]
    struct Params<'a> {
        dataset: &'a str,
    }
    write_run_config(
        out_dir,
        "stats",
        seed,
        &Params {
            dataset: &dataset_dir.display().to_string(),
        },
    )?;

    let stats = dataset_stats(&sequences);
    write_json(&out_dir.join("stats.json"), &stats)?;

    let mut by_category: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for seq in &sequences {
        let slot = by_category.entry(&seq.category).or_insert((0, 0));
        slot.0 += 1;
        slot.1 += seq.len();
    }
    let mut csv = String::from("category,sequences,avg_frames\n");
    for (cat, (count, frames)) in &by_category {
        csv.push_str(&format!(
            "{cat},{count},{}\n",
            *frames as f64 / *count as f64
        ));
    }
    write_atomic(&out_dir.join("per_category.csv"), csv.as_bytes())?;
    Ok(())
}

/// Resolved attributes per sequence and the attribute co-occurrence matrix.
pub fn cmd_attrs(dataset_dir: &Path, out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let sequences = load_dataset(dataset_dir)?;
    ensure_dir(out_dir)?;
    #[derive(Serialize)]
    struct Params<'a> {
        dataset: &'a str,
    }
    write_run_config(
        out_dir,
        "attrs",
        seed,
        &Params {
            dataset: &dataset_dir.display().to_string(),
        },
    )?;

    let per_sequence: BTreeMap<&str, Vec<String>> = sequences
        .iter()
        .map(|s| {
            (
                s.name.as_str(),
                s.resolved_attributes()
                    .iter()
                    .map(|a| a.to_string())
                    .collect(),
            )
        })
        .collect();
    write_json(&out_dir.join("attributes.json"), &per_sequence)?;

    let matrix = attribute_cooccurrence(&sequences);
    write_atomic(&out_dir.join("cooccurrence.csv"), matrix.to_csv().as_bytes())?;
    Ok(())
}

/// Generates a dataset from a [`SimDatasetConfig`] JSON file.
pub fn cmd_simulate(config_file: &Path, out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let text = fs::read_to_string(config_file).map_err(|e| io_input(config_file, e))?;
    let cfg: SimDatasetConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", config_file.display())))?;
    ensure_dir(out_dir)?;
    gen_dataset(&cfg, seed, out_dir)?;
    write_run_config(out_dir, "simulate", seed, &cfg)?;
    Ok(())
}

fn load_sim_bundles(dataset_dir: &Path) -> Result<Vec<crate::sim::SimSequence>, CliError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dataset_dir)
        .map_err(|e| io_input(dataset_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no sequence bundles",
            dataset_dir.display()
        )));
    }
    let mut bundles = Vec::new();
    for dir in dirs {
        bundles.push(load_bundle(&dir).map_err(|e| {
            CliError::Input(format!(
                "{}: not a simulated bundle with sidecars: {e}",
                dir.display()
            ))
        })?);
    }
    Ok(bundles)
}

/// Options for [`cmd_train`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TrainOptions {
    pub omega: f64,
    pub mode: BranchMode,
    pub seed: u64,
}

/// Trains the matcher on a simulated dataset's correspondence labels and
/// writes `checkpoint.bin` plus `training_loss.csv`.
pub fn cmd_train(
    dataset_dir: &Path,
    out_dir: &Path,
    opts: &TrainOptions,
    pipeline: &PipelineConfig,
) -> Result<(), CliError> {
    let bundles = load_sim_bundles(dataset_dir)?;
    let mut pairs: Vec<TrainingPair> = Vec::new();
    for bundle in &bundles {
        pairs.extend(bundle.training_pairs()?);
    }
    let matcher_cfg = pipeline.matcher_config(opts.omega, opts.mode);
    let train_cfg = TrainConfig {
        steps: pipeline.train_steps,
        lr: pipeline.train_lr,
        seed: derive_seed(opts.seed, &["train"]),
    };
    let (params, losses) = train_matcher(&pairs, &matcher_cfg, &train_cfg)?;
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(CliError::Internal(
            "training produced a non-finite loss".to_string(),
        ));
    }

    ensure_dir(out_dir)?;
    #[derive(Serialize)]
    struct Params<'a> {
        dataset: &'a str,
        options: &'a TrainOptions,
        pipeline: &'a PipelineConfig,
    }
    write_run_config(
        out_dir,
        "train",
        opts.seed,
        &Params {
            dataset: &dataset_dir.display().to_string(),
            options: opts,
            pipeline,
        },
    )?;
    save_matcher(
        &out_dir.join("checkpoint.bin"),
        &params,
        opts.omega,
        opts.mode,
        opts.seed,
    )?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    write_atomic(&out_dir.join("training_loss.csv"), csv.as_bytes())?;
    Ok(())
}

/// Runs the tracker over every sequence of a simulated dataset, writing one
/// results file and one confidence sidecar per sequence.
pub fn cmd_track(
    dataset_dir: &Path,
    checkpoint: &Path,
    out_dir: &Path,
    seed: u64,
    jobs: usize,
    pipeline: &PipelineConfig,
) -> Result<(), CliError> {
    let (params, meta) = load_matcher(checkpoint)?;
    if meta.arch != pipeline.arch {
        return Err(CliError::Input(format!(
            "checkpoint architecture {:?} does not match the configured {:?}",
            meta.arch, pipeline.arch
        )));
    }
    let bundles = load_sim_bundles(dataset_dir)?;
    let tracker_cfg = pipeline.tracker_config(meta.omega, meta.mode);

    ensure_dir(out_dir)?;
    #[derive(Serialize)]
    struct Params<'a> {
        dataset: &'a str,
        checkpoint: &'a str,
        omega: f64,
        mode: BranchMode,
        pipeline: &'a PipelineConfig,
    }
    write_run_config(
        out_dir,
        "track",
        seed,
        &Params {
            dataset: &dataset_dir.display().to_string(),
            checkpoint: &checkpoint.display().to_string(),
            omega: meta.omega,
            mode: meta.mode,
            pipeline,
        },
    )?;

    let outcomes = parallel_map(&bundles, jobs, |bundle| {
        let frames = bundle.frame_data();
        run_sequence(&frames, &bundle.init_box(), &params, &tracker_cfg)
            .map(|(boxes, betas)| (bundle.name.clone(), boxes, betas))
    });
    for outcome in outcomes {
        let (name, boxes, betas) = outcome?;
        save_results(&out_dir.join(format!("{name}.txt")), &boxes)?;
        save_confidences(&out_dir.join(format!("{name}.conf.txt")), &betas)?;
    }
    Ok(())
}

/// The document written to `eval.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalDoc {
    pub trackers: BTreeMap<String, EvalResult>,
}

fn tracker_name(dir: &Path) -> Result<String, CliError> {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::Input(format!("{}: no directory name", dir.display())))
}

fn load_tracker_results(
    dir: &Path,
    dataset: &[Sequence],
) -> Result<BTreeMap<String, Vec<crate::geometry::BBox>>, CliError> {
    let mut results = BTreeMap::new();
    for seq in dataset {
        let path = dir.join(format!("{}.txt", seq.name));
        if !path.is_file() {
            return Err(CliError::Input(format!(
                "missing results for sequence {} in {}",
                seq.name,
                dir.display()
            )));
        }
        results.insert(seq.name.clone(), load_results(&path, seq.len())?);
    }
    Ok(results)
}

/// Evaluates one or more trackers' result directories against a dataset:
/// `eval.json`, aggregate curve CSVs, a ranking table, and the
/// per-attribute breakdown.
pub fn cmd_eval(
    dataset_dir: &Path,
    results_dirs: &[PathBuf],
    out_dir: &Path,
    seed: u64,
) -> Result<(), CliError> {
    if results_dirs.is_empty() {
        return Err(CliError::Input("no results directories given".to_string()));
    }
    let dataset = load_dataset(dataset_dir)?;
    let mut trackers: BTreeMap<String, EvalResult> = BTreeMap::new();
    for dir in results_dirs {
        let name = tracker_name(dir)?;
        if trackers.contains_key(&name) {
            return Err(CliError::Input(format!(
                "duplicate tracker name {name:?} among results directories"
            )));
        }
        let results = load_tracker_results(dir, &dataset)?;
        trackers.insert(name, evaluate(&dataset, &results)?);
    }

    ensure_dir(out_dir)?;
    #[derive(Serialize)]
    struct Params<'a> {
        dataset: &'a str,
        results: Vec<String>,
    }
    write_run_config(
        out_dir,
        "eval",
        seed,
        &Params {
            dataset: &dataset_dir.display().to_string(),
            results: results_dirs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
        },
    )?;

    for (name, eval) in &trackers {
        write_atomic(
            &out_dir.join(format!("{name}_precision.csv")),
            eval.aggregate.precision_curve.to_csv().as_bytes(),
        )?;
        write_atomic(
            &out_dir.join(format!("{name}_success.csv")),
            eval.aggregate.success_curve.to_csv().as_bytes(),
        )?;
    }

    let mut ranking = String::from("rank,tracker,auc,prc\n");
    for (i, (name, auc)) in rank(&trackers, RankKey::Auc).iter().enumerate() {
        let prc = trackers[name].aggregate.prc;
        ranking.push_str(&format!("{},{name},{auc},{prc}\n", i + 1));
    }
    write_atomic(&out_dir.join("ranking.csv"), ranking.as_bytes())?;

    #[derive(Serialize)]
    struct AttrScores {
        sequences: usize,
        prc: f64,
        auc: f64,
        success_at_half: f64,
    }
    let mut breakdown: BTreeMap<&String, BTreeMap<String, AttrScores>> = BTreeMap::new();
    for (name, eval) in &trackers {
        let per_attr = attribute_breakdown(eval, &dataset);
        breakdown.insert(
            name,
            per_attr
                .iter()
                .map(|(attr, e)| {
                    (
                        attr.to_string(),
                        AttrScores {
                            sequences: e.per_sequence.len(),
                            prc: e.aggregate.prc,
                            auc: e.aggregate.auc,
                            success_at_half: e.aggregate.success_at_half,
                        },
                    )
                })
                .collect(),
        );
    }
    write_json(&out_dir.join("attributes.json"), &breakdown)?;

    write_json(&out_dir.join("eval.json"), &EvalDoc { trackers })?;
    Ok(())
}

/// One row of the sweep table.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub omega: f64,
    pub prc: f64,
    pub auc: f64,
}

/// Trains, tracks and evaluates once per omega with a shared seed, writing
/// `sweep.csv` plus the per-omega artifacts.
pub fn cmd_sweep(
    dataset_dir: &Path,
    omegas: &[f64],
    out_dir: &Path,
    seed: u64,
    jobs: usize,
    pipeline: &PipelineConfig,
) -> Result<(), CliError> {
    if omegas.is_empty() {
        return Err(CliError::Input("empty omega grid".to_string()));
    }
    ensure_dir(out_dir)?;
    #[derive(Serialize)]
    struct Params<'a> {
        dataset: &'a str,
        omegas: &'a [f64],
        pipeline: &'a PipelineConfig,
    }
    write_run_config(
        out_dir,
        "sweep",
        seed,
        &Params {
            dataset: &dataset_dir.display().to_string(),
            omegas,
            pipeline,
        },
    )?;

    let rows = parallel_map(omegas, jobs, |omega| -> Result<SweepRow, CliError> {
        let sub = out_dir.join(format!("omega_{omega}"));
        let opts = TrainOptions {
            omega: *omega,
            mode: BranchMode::Dual,
            seed,
        };
        cmd_train(dataset_dir, &sub, &opts, pipeline)?;
        let results_dir = sub.join("results");
        cmd_track(
            dataset_dir,
            &sub.join("checkpoint.bin"),
            &results_dir,
            seed,
            1,
            pipeline,
        )?;
        let eval_dir = sub.join("eval");
        cmd_eval(dataset_dir, &[results_dir], &eval_dir, seed)?;
        let text = fs::read_to_string(eval_dir.join("eval.json"))
            .map_err(|e| io_input(&eval_dir.join("eval.json"), e))?;
        let doc: EvalDoc = serde_json::from_str(&text)
            .map_err(|e| CliError::Internal(format!("reading back eval.json: {e}")))?;
        let eval = doc
            .trackers
            .values()
            .next()
            .ok_or_else(|| CliError::Internal("eval.json lists no tracker".to_string()))?;
        Ok(SweepRow {
            omega: *omega,
            prc: eval.aggregate.prc,
            auc: eval.aggregate.auc,
        })
    });

    let mut csv = String::from("omega,prc,auc\n");
    for row in rows {
        let row = row?;
        csv.push_str(&format!("{},{},{}\n", row.omega, row.prc, row.auc));
    }
    write_atomic(&out_dir.join("sweep.csv"), csv.as_bytes())?;
    Ok(())
}

/// Reads the sweep table back.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_input(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(CliError::Input(format!(
                "{}:{}: expected 3 fields",
                path.display(),
                i + 1
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))
        };
        rows.push(SweepRow {
            omega: parse(fields[0])?,
            prc: parse(fields[1])?,
            auc: parse(fields[2])?,
        });
    }
    Ok(rows)
}

const PALETTE: [&str; 8] = [
    "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

struct PlotSpec<'a> {
    title: &'a str,
    x_label: &'a str,
    x_max: f64,
    /// (legend label, curve), already in legend order
    series: Vec<(String, &'a Curve)>,
}

fn render_svg(spec: &PlotSpec) -> String {
    let (width, height) = (640.0, 480.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 40.0, 50.0);
    let plot_w = width - ml - mr;
    let plot_h = height - mt - mb;
    let x_of = |t: f64| ml + t / spec.x_max * plot_w;
    let y_of = |v: f64| mt + (1.0 - v) * plot_h;

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    s.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        spec.title
    ));
    // axes
    s.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + plot_h,
        ml + plot_w,
        mt + plot_h
    ));
    s.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + plot_h
    ));
    for i in 0..=5 {
        let frac = i as f64 / 5.0;
        let x = ml + frac * plot_w;
        let y = mt + plot_h - frac * plot_h;
        s.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            mt + plot_h + 18.0,
            format_tick(frac * spec.x_max)
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            ml - 6.0,
            y + 4.0,
            format_tick(frac)
        ));
        s.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            mt + plot_h,
            mt + plot_h + 4.0
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        ml + plot_w / 2.0,
        height - 12.0,
        spec.x_label
    ));

    for (idx, (label, curve)) in spec.series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let points: Vec<String> = curve
            .thresholds
            .iter()
            .zip(&curve.values)
            .map(|(t, v)| format!("{},{}", x_of(*t), y_of(*v)))
            .collect();
        let data: Vec<String> = curve
            .thresholds
            .iter()
            .zip(&curve.values)
            .map(|(t, v)| format!("{t},{v}"))
            .collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\" data-series=\"{}\"/>\n",
            points.join(" "),
            data.join(";")
        ));
        let ly = mt + 16.0 + idx as f64 * 18.0;
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            ml + plot_w - 190.0,
            ly - 4.0,
            ml + plot_w - 165.0,
            ly - 4.0
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            ml + plot_w - 158.0,
            ly,
            label
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

/// Renders precision and success plots from an `eval.json`, with legends
/// ordered by the respective ranking key, plus the underlying curve CSVs.
pub fn cmd_report(eval_json: &Path, out_dir: &Path, seed: u64) -> Result<(), CliError> {
    let text = fs::read_to_string(eval_json).map_err(|e| io_input(eval_json, e))?;
    let doc: EvalDoc = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", eval_json.display())))?;
    if doc.trackers.is_empty() {
        return Err(CliError::Input("eval document lists no trackers".to_string()));
    }
    ensure_dir(out_dir)?;
    #[derive(Serialize)]
    struct Params<'a> {
        eval: &'a str,
    }
    write_run_config(
        out_dir,
        "report",
        seed,
        &Params {
            eval: &eval_json.display().to_string(),
        },
    )?;

    for (name, eval) in &doc.trackers {
        write_atomic(
            &out_dir.join(format!("{name}_precision.csv")),
            eval.aggregate.precision_curve.to_csv().as_bytes(),
        )?;
        write_atomic(
            &out_dir.join(format!("{name}_success.csv")),
            eval.aggregate.success_curve.to_csv().as_bytes(),
        )?;
    }

    let by_prc = rank(&doc.trackers, RankKey::Prc);
    let precision_series = by_prc
        .iter()
        .map(|(name, prc)| {
            (
                format!("{name} [{prc:.3}]"),
                &doc.trackers[name].aggregate.precision_curve,
            )
        })
        .collect();
    let svg = render_svg(&PlotSpec {
        title: "Precision plot",
        x_label: "center error threshold, px",
        x_max: 50.0,
        series: precision_series,
    });
    write_atomic(&out_dir.join("precision_plot.svg"), svg.as_bytes())?;

    let by_auc = rank(&doc.trackers, RankKey::Auc);
    let success_series = by_auc
        .iter()
        .map(|(name, auc)| {
            (
                format!("{name} [{auc:.3}]"),
                &doc.trackers[name].aggregate.success_curve,
            )
        })
        .collect();
    let svg = render_svg(&PlotSpec {
        title: "Success plot",
        x_label: "overlap threshold",
        x_max: 1.0,
        series: success_series,
    });
    write_atomic(&out_dir.join("success_plot.svg"), svg.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<usize> = (0..100).collect();
        let doubled = parallel_map(&items, 4, |x| x * 2);
        assert_eq!(doubled, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        let sequential = parallel_map(&items, 1, |x| x * 2);
        assert_eq!(doubled, sequential);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Input("x".into()).exit_code(), 2);
        assert_eq!(CliError::Internal("x".into()).exit_code(), 3);
    }

    #[test]
    fn pipeline_config_loads_partial_overrides() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("cfg.json");
        fs::write(&path, r#"{"train_steps": 42}"#).unwrap();
        let cfg = PipelineConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.train_steps, 42);
        assert_eq!(cfg.train_lr, PipelineConfig::default().train_lr);
        assert!(PipelineConfig::load(Some(&tmp.path().join("missing.json"))).is_err());
    }

    #[test]
    fn format_tick_values() {
        assert_eq!(format_tick(10.0), "10");
        assert_eq!(format_tick(0.2), "0.20");
    }
}
