//! Experiment subcommands: each one reads a configuration, runs a phase of
//! the pipeline, and writes its artifacts plus a manifest under the output
//! directory.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::cli::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::cli::config::{parse_config, ExperimentConfig};
use crate::ctf::{
    best_teacher_for_inference, run_ctf_until, CtfState, EvalPoint, MetricsRecord, ResetPolicy,
};
use crate::error::{Error, Result};
use crate::eval::consistency::{dpc_consistency_experiment, ConsistencyConfig};
use crate::eval::export::{bar_chart, line_chart, write_csv, Series};
use crate::eval::map::mean_ap50_95;
use crate::eval::trace::{distance_chart, weight_distance_trace, write_distance_csv};
use crate::ssod::{burn_in, MtHyper, PairState};
use crate::synthdata::generate::{generate_dataset, SplitSet};

/// Training laboratory for collaborative teacher–student detection.
#[derive(Debug, Parser)]
#[command(name = "ctflab", version, about)]
pub struct Cli {
    /// Experiment configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides CTFLAB_OUT_DIR and the config file.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Supervised warm-up of every pair on the labeled split.
    Burnin,
    /// Collaborative training from a burn-in or mid-run checkpoint.
    Train {
        /// Pause after this iteration instead of running to max_iter.
        #[arg(long)]
        stop_at: Option<u64>,
        /// Checkpoint to start from (default: checkpoints/burnin.ckpt
        /// under the output directory).
        #[arg(long)]
        from: Option<PathBuf>,
        /// Continue even if the checkpoint was written under a different
        /// configuration.
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Validation AP of every teacher in a checkpoint.
    Eval {
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate even if the checkpoint was written under a different
        /// configuration.
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Train once per window length and compare final accuracy.
    AblateWindow {
        /// Window lengths to sweep.
        #[arg(long, value_delimiter = ',', default_value = "25,100,400")]
        windows: Vec<u64>,
    },
    /// Train once per ledger policy (reset vs carry-over) and compare.
    AblateReset,
    /// Winner-estimator consistency experiment against the hidden-truth
    /// oracle.
    DpcConsistency {
        /// Number of selection windows.
        #[arg(long, default_value_t = 100)]
        windows: usize,
        /// Training iterations per window.
        #[arg(long, default_value_t = 100)]
        window_len: u64,
    },
    /// Re-render loss and distance plots from a metrics log.
    ExportPlots {
        /// Metrics log (one JSON record per line) to read.
        #[arg(long)]
        metrics: PathBuf,
    },
}

/// Validates the thread-count override. The trainer is single-threaded by
/// design — results must not depend on scheduling — so any value above 1 is
/// accepted but has nothing to speed up.
pub fn resolve_threads(raw: Option<&str>) -> Result<usize> {
    match raw {
        None => Ok(1),
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::InvalidConfig(format!(
                "CTFLAB_THREADS must be a positive integer, got {s:?}"
            ))),
        },
    }
}

/// Output-directory precedence: command-line flag, then the CTFLAB_OUT_DIR
/// environment variable, then the configuration.
pub fn resolve_out_dir(
    flag: Option<PathBuf>,
    env: Option<PathBuf>,
    cfg: &ExperimentConfig,
) -> PathBuf {
    flag.or(env).unwrap_or_else(|| cfg.output_dir.clone())
}

/// Loads the configuration file, or the defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| {
                Error::InvalidConfig(format!("cannot read config {}: {e}", p.display()))
            })?;
            parse_config(&text)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

/// Entry point used by the binary: resolves environment and configuration,
/// then dispatches to the subcommand.
pub fn run_cli(cli: Cli) -> Result<()> {
    let threads = resolve_threads(std::env::var("CTFLAB_THREADS").ok().as_deref())?;
    if threads > 1 {
        eprintln!(
            "note: CTFLAB_THREADS={threads} requested, but execution is single-threaded by design"
        );
    }
    let cfg = load_config(cli.config.as_deref())?;
    let env_dir = std::env::var_os("CTFLAB_OUT_DIR").map(PathBuf::from);
    let out = resolve_out_dir(cli.out_dir, env_dir, &cfg);
    match cli.command {
        Command::Burnin => cmd_burnin(&cfg, &out),
        Command::Train { stop_at, from, allow_config_mismatch } => {
            cmd_train(&cfg, &out, TrainOpts { stop_at, from, allow_config_mismatch })
        }
        Command::Eval { checkpoint, allow_config_mismatch } => {
            cmd_eval(&cfg, &out, &checkpoint, allow_config_mismatch)
        }
        Command::AblateWindow { windows } => cmd_ablate_window(&cfg, &out, &windows),
        Command::AblateReset => cmd_ablate_reset(&cfg, &out),
        Command::DpcConsistency { windows, window_len } => {
            cmd_dpc_consistency(&cfg, &out, windows, window_len)
        }
        Command::ExportPlots { metrics } => cmd_export_plots(&cfg, &out, &metrics),
    }
}

/// Tracks the files a command writes so the manifest can list them all.
struct Artifacts {
    out_dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)?;
        Ok(Artifacts { out_dir: out_dir.to_path_buf(), files: Vec::new() })
    }

    /// Registers a relative artifact path and returns where to write it.
    fn path(&mut self, rel: &str) -> PathBuf {
        self.files.push(rel.to_string());
        self.out_dir.join(rel)
    }

    /// Writes the canonical configuration dump and the manifest. The
    /// manifest names the command, the configuration hash, and every
    /// artifact, so a run's outputs can be verified and reproduced.
    fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> Result<()> {
        let config_path = self.path("config.txt");
        fs::write(&config_path, cfg.canonical_string())?;
        let mut manifest = format!("command = {command}\nconfig_hash = {}\n", hex(&cfg.hash()));
        for f in &self.files {
            manifest.push_str(&format!("artifact = {f}\n"));
        }
        let name = format!("manifest-{command}.txt");
        fs::write(self.out_dir.join(&name), manifest)?;
        for f in &self.files {
            println!("wrote {}", self.out_dir.join(f).display());
        }
        println!("wrote {}", self.out_dir.join(&name).display());
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn f(v: f64) -> String {
    format!("{v}")
}

/// Burn-in checkpoint location for an output directory.
fn burnin_ckpt_path(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoints/burnin.ckpt")
}

pub struct TrainOpts {
    pub stop_at: Option<u64>,
    pub from: Option<PathBuf>,
    pub allow_config_mismatch: bool,
}

/// Checks a loaded checkpoint against the active configuration.
fn check_config_hash(ckpt: &Checkpoint, cfg: &ExperimentConfig, allow: bool) -> Result<()> {
    if ckpt.config_hash == cfg.hash() {
        return Ok(());
    }
    if allow {
        eprintln!(
            "warning: checkpoint config hash {} differs from the active configuration {}",
            hex(&ckpt.config_hash),
            hex(&cfg.hash())
        );
        return Ok(());
    }
    Err(Error::Checkpoint(format!(
        "checkpoint was written under configuration {} but the active configuration is {}; \
         pass --allow-config-mismatch to proceed anyway",
        hex(&ckpt.config_hash),
        hex(&cfg.hash())
    )))
}

pub fn cmd_burnin(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    let det = cfg.detector()?;
    let data = generate_dataset(&cfg.dataset)?;
    let mut art = Artifacts::new(out_dir)?;

    let mut state = CtfState::new(&cfg.ctf, &det)?;
    let spec = cfg.labeled_aug.spec(cfg.dataset.image_size);
    let mut rows = Vec::new();
    for pair in &mut state.pairs {
        let losses = burn_in(
            pair,
            &det,
            &data.labeled,
            &spec,
            &cfg.ctf.optim,
            cfg.burn_in_iters,
            cfg.burn_in_batch,
        )?;
        for (i, l) in losses.iter().enumerate() {
            rows.push(vec![pair.pair_id.to_string(), (i + 1).to_string(), f(*l)]);
        }
        if let Some(last) = losses.last() {
            println!(
                "pair {}: burn-in loss {} -> {} over {} iterations",
                pair.pair_id,
                losses[0],
                last,
                losses.len()
            );
        }
    }
    write_csv(&art.path("burnin_losses.csv"), &["pair", "iter", "loss"], &rows)?;
    save_checkpoint(
        &art.path("checkpoints/burnin.ckpt"),
        &Checkpoint { config_hash: cfg.hash(), state },
    )?;
    art.finish("burnin", cfg)
}

/// Shared by train and the ablations: runs the collaborative loop from
/// `state` to `stop`, streaming metrics to a JSONL file, and writes the
/// winner and evaluation tables.
fn train_span(
    cfg: &ExperimentConfig,
    ctf_cfg: &crate::ctf::CtfConfig,
    data: &SplitSet,
    state: &mut CtfState,
    stop: u64,
    art: &mut Artifacts,
) -> Result<Vec<EvalPoint>> {
    let det = cfg.detector()?;
    let first = state.iteration + 1;
    let metrics_rel = format!("metrics-{first:06}-{stop:06}.jsonl");
    let metrics_path = art.path(&metrics_rel);
    if let Some(parent) = metrics_path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut log = std::io::BufWriter::new(fs::File::create(&metrics_path)?);
    let out = run_ctf_until(ctf_cfg, &det, data, state, stop, |r| {
        serde_json::to_writer(&mut log, r)
            .map_err(|e| Error::InvalidConfig(format!("cannot encode metrics record: {e}")))?;
        log.write_all(b"\n")?;
        Ok(())
    })?;
    log.flush()?;

    let winner_rows: Vec<Vec<String>> = out
        .winner_history
        .iter()
        .map(|w| vec![w.iter.to_string(), w.winner.to_string()])
        .collect();
    write_csv(&art.path("winners.csv"), &["iter", "winner"], &winner_rows)?;
    let eval_rows: Vec<Vec<String>> = out
        .eval_points
        .iter()
        .map(|e| vec![e.iter.to_string(), e.pair_id.to_string(), f(e.val_ap)])
        .collect();
    write_csv(&art.path("eval_points.csv"), &["iter", "pair", "val_ap"], &eval_rows)?;
    save_checkpoint(
        &art.path(&format!("checkpoints/iter-{stop:06}.ckpt")),
        &Checkpoint { config_hash: cfg.hash(), state: state.clone() },
    )?;
    Ok(out.eval_points)
}

pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path, opts: TrainOpts) -> Result<()> {
    cfg.validate()?;
    let from = opts.from.unwrap_or_else(|| burnin_ckpt_path(out_dir));
    let ckpt = load_checkpoint(&from)?;
    check_config_hash(&ckpt, cfg, opts.allow_config_mismatch)?;
    let mut state = ckpt.state;

    let stop = opts.stop_at.unwrap_or(cfg.ctf.max_iter);
    if stop > cfg.ctf.max_iter {
        return Err(Error::InvalidConfig(format!(
            "--stop-at {stop} is beyond max_iter {}",
            cfg.ctf.max_iter
        )));
    }
    if stop <= state.iteration {
        return Err(Error::InvalidConfig(format!(
            "checkpoint is already at iteration {}, nothing to run before {stop}",
            state.iteration
        )));
    }

    let data = generate_dataset(&cfg.dataset)?;
    let mut art = Artifacts::new(out_dir)?;
    train_span(cfg, &cfg.ctf, &data, &mut state, stop, &mut art)?;

    if stop == cfg.ctf.max_iter && !data.validation.is_empty() {
        let det = cfg.detector()?;
        let (best, ap) = best_teacher_for_inference(&det, &state.pairs, &data.validation)?;
        println!("best teacher: pair {best} (validation AP {ap:.4})");
    } else {
        println!("paused at iteration {stop} of {}", cfg.ctf.max_iter);
    }
    art.finish("train", cfg)
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    checkpoint: &Path,
    allow_config_mismatch: bool,
) -> Result<()> {
    cfg.validate()?;
    let ckpt = load_checkpoint(checkpoint)?;
    check_config_hash(&ckpt, cfg, allow_config_mismatch)?;
    let det = cfg.detector()?;
    let data = generate_dataset(&cfg.dataset)?;
    let (best, _) = best_teacher_for_inference(&det, &ckpt.state.pairs, &data.validation)?;

    let mut rows = Vec::new();
    for (i, pair) in ckpt.state.pairs.iter().enumerate() {
        let ap = mean_ap50_95(&det, &pair.teacher, &data.validation)?;
        println!(
            "pair {}: validation AP {:.4}{}",
            pair.pair_id,
            ap,
            if i == best { " (best)" } else { "" }
        );
        rows.push(vec![
            pair.pair_id.to_string(),
            f(ap),
            (i == best).to_string(),
        ]);
    }
    let mut art = Artifacts::new(out_dir)?;
    write_csv(&art.path("eval_report.csv"), &["pair", "val_ap", "best"], &rows)?;
    art.finish("eval", cfg)
}

/// Mean of the last up-to-ten evaluation APs of one pair, plus its final
/// AP. This is the summary statistic the ablations compare.
fn late_eval_summary(points: &[EvalPoint], pair_id: usize) -> Result<(f64, f64)> {
    let aps: Vec<f64> =
        points.iter().filter(|e| e.pair_id == pair_id).map(|e| e.val_ap).collect();
    if aps.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no evaluation points recorded for pair {pair_id}"
        )));
    }
    let tail = &aps[aps.len().saturating_sub(10)..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    Ok((mean, *aps.last().expect("non-empty")))
}

/// One complete pipeline run (burn-in + collaborative training) under a
/// variant configuration, writing artifacts into a subdirectory. Returns
/// (best pair, mean AP of its last ten evals, its final AP).
fn run_variant(
    cfg: &ExperimentConfig,
    ctf_cfg: &crate::ctf::CtfConfig,
    data: &SplitSet,
    base_state: &CtfState,
    sub_dir: &Path,
) -> Result<(usize, f64, f64)> {
    let det = cfg.detector()?;
    let mut art = Artifacts::new(sub_dir)?;
    let mut state = base_state.clone();
    let points = train_span(cfg, ctf_cfg, data, &mut state, ctf_cfg.max_iter, &mut art)?;
    let (best, _) = best_teacher_for_inference(&det, &state.pairs, &data.validation)?;
    let (late_mean, final_ap) = late_eval_summary(&points, best)?;
    art.finish("train", cfg)?;
    Ok((best, late_mean, final_ap))
}

/// Burns in one set of pairs that every ablation variant starts from, so
/// variants differ only in the setting under study.
fn burned_in_state(cfg: &ExperimentConfig, data: &SplitSet) -> Result<CtfState> {
    let det = cfg.detector()?;
    let mut state = CtfState::new(&cfg.ctf, &det)?;
    let spec = cfg.labeled_aug.spec(cfg.dataset.image_size);
    for pair in &mut state.pairs {
        burn_in(
            pair,
            &det,
            &data.labeled,
            &spec,
            &cfg.ctf.optim,
            cfg.burn_in_iters,
            cfg.burn_in_batch,
        )?;
    }
    Ok(state)
}

pub fn cmd_ablate_window(cfg: &ExperimentConfig, out_dir: &Path, windows: &[u64]) -> Result<()> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::InvalidConfig("no window lengths given".to_string()));
    }
    for &s in windows {
        if s == 0 || cfg.ctf.max_iter < 2 * s {
            return Err(Error::InvalidConfig(format!(
                "window length {s} needs max_iter of at least {} for a full alternation, \
                 have {}",
                2 * s.max(1),
                cfg.ctf.max_iter
            )));
        }
    }
    let data = generate_dataset(&cfg.dataset)?;
    let base = burned_in_state(cfg, &data)?;
    let mut art = Artifacts::new(out_dir)?;
    let mut rows = Vec::new();
    for &s in windows {
        let mut variant = cfg.ctf.clone();
        variant.stage_length = s;
        let sub = format!("window-{s}");
        let (best, late_mean, final_ap) =
            run_variant(cfg, &variant, &data, &base, &out_dir.join(&sub))?;
        println!(
            "window {s}: best pair {best}, late-run AP {late_mean:.4}, final AP {final_ap:.4}"
        );
        rows.push(vec![s.to_string(), best.to_string(), f(late_mean), f(final_ap)]);
        art.files.push(format!("{sub}/"));
    }
    write_csv(
        &art.path("summary.csv"),
        &["window_length", "best_pair", "late_mean_ap", "final_ap"],
        &rows,
    )?;
    art.finish("ablate-window", cfg)
}

pub fn cmd_ablate_reset(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    let data = generate_dataset(&cfg.dataset)?;
    let base = burned_in_state(cfg, &data)?;
    let mut art = Artifacts::new(out_dir)?;
    let mut rows = Vec::new();
    for (policy, name) in [(ResetPolicy::Reset, "reset"), (ResetPolicy::Continue, "continue")] {
        let mut variant = cfg.ctf.clone();
        variant.reset_policy = policy;
        let (best, late_mean, final_ap) =
            run_variant(cfg, &variant, &data, &base, &out_dir.join(name))?;
        println!(
            "{name}: best pair {best}, late-run AP {late_mean:.4}, final AP {final_ap:.4}"
        );
        rows.push(vec![name.to_string(), best.to_string(), f(late_mean), f(final_ap)]);
        art.files.push(format!("{name}/"));
    }
    write_csv(
        &art.path("summary.csv"),
        &["policy", "best_pair", "late_mean_ap", "final_ap"],
        &rows,
    )?;
    art.finish("ablate-reset", cfg)
}

pub fn cmd_dpc_consistency(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    windows: usize,
    window_len: u64,
) -> Result<()> {
    cfg.validate()?;
    let det = cfg.detector()?;
    let data = generate_dataset(&cfg.dataset)?;
    let spec = cfg.labeled_aug.spec(cfg.dataset.image_size);
    let mut pairs: Vec<PairState> = cfg
        .ctf
        .pair_seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| PairState::init(i, seed, &det))
        .collect::<Result<_>>()?;
    for pair in &mut pairs {
        burn_in(
            pair,
            &det,
            &data.labeled,
            &spec,
            &cfg.ctf.optim,
            cfg.burn_in_iters,
            cfg.burn_in_batch,
        )?;
    }
    let exp_cfg = ConsistencyConfig {
        windows,
        window_len,
        labeled_batch: cfg.ctf.labeled_batch,
        unlabeled_batch: cfg.ctf.unlabeled_batch,
        hp: MtHyper {
            optim: cfg.ctf.optim.clone(),
            lambda_u: cfg.ctf.lambda_u,
            ema_rate: cfg.ctf.ema_rate,
            pseudo_threshold: cfg.ctf.pseudo_threshold,
        },
        master_seed: cfg.ctf.master_seed,
        ..ConsistencyConfig::default()
    };
    let report = dpc_consistency_experiment(&det, &data, &mut pairs, &exp_cfg)?;

    let mut art = Artifacts::new(out_dir)?;
    let pick_rows: Vec<Vec<String>> = report
        .picks
        .iter()
        .map(|p| {
            vec![
                p.window.to_string(),
                p.oracle.to_string(),
                p.accumulative.to_string(),
                p.single_sample.to_string(),
                p.stable_sample.to_string(),
            ]
        })
        .collect();
    write_csv(
        &art.path("consistency.csv"),
        &["window", "oracle", "accumulative", "single_sample", "stable_sample"],
        &pick_rows,
    )?;
    let rates = [
        ("accumulative", report.accumulative_consistent, report.accumulative_rate()),
        ("single_sample", report.single_sample_consistent, report.single_sample_rate()),
        ("stable_sample", report.stable_sample_consistent, report.stable_sample_rate()),
    ];
    let rate_rows: Vec<Vec<String>> = rates
        .iter()
        .map(|(name, n, rate)| {
            vec![name.to_string(), n.to_string(), report.windows.to_string(), f(*rate)]
        })
        .collect();
    write_csv(
        &art.path("rates.csv"),
        &["selector", "consistent_windows", "total_windows", "rate"],
        &rate_rows,
    )?;
    bar_chart(
        &art.path("bars.svg"),
        "winner-estimator consistency with the hidden-truth oracle",
        "consistent fraction",
        &rates.iter().map(|(n, _, _)| n.to_string()).collect::<Vec<_>>(),
        &rates.iter().map(|(_, _, r)| *r).collect::<Vec<_>>(),
    )?;
    for (name, n, rate) in rates {
        println!("{name}: {n}/{} windows consistent ({:.1}%)", report.windows, rate * 100.0);
    }
    art.finish("dpc-consistency", cfg)
}

/// Reads a metrics log written by the train command: one JSON record per
/// line.
pub fn read_metrics_log(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: MetricsRecord = serde_json::from_str(line).map_err(|e| {
            Error::InvalidConfig(format!("{}:{}: bad metrics record: {e}", path.display(), i + 1))
        })?;
        records.push(r);
    }
    if records.is_empty() {
        return Err(Error::InvalidConfig(format!("{} holds no records", path.display())));
    }
    Ok(records)
}

pub fn cmd_export_plots(cfg: &ExperimentConfig, out_dir: &Path, metrics: &Path) -> Result<()> {
    let records = read_metrics_log(metrics)?;
    let trace = weight_distance_trace(&records)?;
    let mut art = Artifacts::new(out_dir)?;

    // rectangular loss table, one row per iteration
    let mut index = std::collections::BTreeMap::new();
    for r in &records {
        index.insert((r.iter, r.pair_id), r);
    }
    let mut header: Vec<String> = vec!["iter".to_string()];
    for &p in &trace.pair_ids {
        header.push(format!("l_l_pair{p}"));
        header.push(format!("l_u_pair{p}"));
        header.push(format!("l_dpc_pair{p}"));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::with_capacity(trace.iters.len());
    for &it in &trace.iters {
        let mut row = vec![it.to_string()];
        for &p in &trace.pair_ids {
            let r = index.get(&(it, p)).expect("trace guarantees rectangularity");
            row.push(f(r.l_l));
            row.push(f(r.l_u));
            row.push(f(r.l_dpc));
        }
        rows.push(row);
    }
    write_csv(&art.path("losses.csv"), &header_refs, &rows)?;

    let mut series = Vec::new();
    for &p in &trace.pair_ids {
        for (label, pick) in [("labeled", 0usize), ("pseudo", 1), ("guidance", 2)] {
            let points: Vec<(f64, f64)> = trace
                .iters
                .iter()
                .map(|&it| {
                    let r = index.get(&(it, p)).expect("rectangular");
                    let y = match pick {
                        0 => r.l_l,
                        1 => r.l_u,
                        _ => r.l_dpc,
                    };
                    (it as f64, y)
                })
                .collect();
            series.push(Series { name: format!("pair {p} {label}"), points });
        }
    }
    line_chart(&art.path("losses.svg"), "training losses", "iteration", "loss", &series)?;

    write_distance_csv(&art.path("distances.csv"), &trace)?;
    distance_chart(&art.path("distances.svg"), "parameter distances", &trace)?;
    art.finish("export-plots", cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::checkpoint::load_checkpoint;
    use clap::Parser;

    /// A configuration small enough that full pipelines run in well under a
    /// second of training.
    fn tiny_config(dir: &Path) -> ExperimentConfig {
        let text = format!(
            "dataset.image_size = 32\n\
             dataset.n_labeled = 4\n\
             dataset.n_unlabeled = 6\n\
             dataset.n_val = 2\n\
             detector.trunk_channels = 4,8\n\
             ctf.stage_length = 2\n\
             ctf.max_iter = 8\n\
             ctf.labeled_batch = 2\n\
             ctf.unlabeled_batch = 2\n\
             ctf.eval_every = 4\n\
             run.seed = 11\n\
             run.burn_in_iters = 3\n\
             run.burn_in_batch = 2\n\
             run.output_dir = {}\n",
            dir.display()
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn cli_parses_subcommands_and_flags() {
        let cli = Cli::parse_from(["ctflab", "--config", "exp.cfg", "train", "--stop-at", "7"]);
        assert_eq!(cli.config, Some(PathBuf::from("exp.cfg")));
        match cli.command {
            Command::Train { stop_at, from, allow_config_mismatch } => {
                assert_eq!(stop_at, Some(7));
                assert_eq!(from, None);
                assert!(!allow_config_mismatch);
            }
            _ => panic!("wrong command"),
        }
        let cli = Cli::parse_from(["ctflab", "ablate-window", "--windows", "25,100"]);
        match cli.command {
            Command::AblateWindow { windows } => assert_eq!(windows, vec![25, 100]),
            _ => panic!("wrong command"),
        }
        assert!(Cli::try_parse_from(["ctflab", "no-such-command"]).is_err());
        assert!(Cli::try_parse_from(["ctflab"]).is_err());
    }

    #[test]
    fn thread_override_is_validated() {
        assert_eq!(resolve_threads(None).unwrap(), 1);
        assert_eq!(resolve_threads(Some("1")).unwrap(), 1);
        assert_eq!(resolve_threads(Some(" 4 ")).unwrap(), 4);
        assert!(resolve_threads(Some("0")).is_err());
        assert!(resolve_threads(Some("-2")).is_err());
        assert!(resolve_threads(Some("many")).is_err());
        assert!(resolve_threads(Some("")).is_err());
    }

    #[test]
    fn out_dir_precedence_is_flag_env_config() {
        let cfg = ExperimentConfig::default();
        let flag = Some(PathBuf::from("from-flag"));
        let env = Some(PathBuf::from("from-env"));
        assert_eq!(resolve_out_dir(flag.clone(), env.clone(), &cfg), PathBuf::from("from-flag"));
        assert_eq!(resolve_out_dir(None, env, &cfg), PathBuf::from("from-env"));
        assert_eq!(resolve_out_dir(None, None, &cfg), cfg.output_dir);
    }

    #[test]
    fn pipeline_produces_expected_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = tiny_config(&out);

        cmd_burnin(&cfg, &out).unwrap();
        assert!(out.join("burnin_losses.csv").is_file());
        assert!(out.join("checkpoints/burnin.ckpt").is_file());
        assert!(out.join("config.txt").is_file());
        let manifest = fs::read_to_string(out.join("manifest-burnin.txt")).unwrap();
        assert!(manifest.contains("command = burnin"));
        assert!(manifest.contains(&format!("config_hash = {}", hex(&cfg.hash()))));
        assert!(manifest.contains("artifact = burnin_losses.csv"));
        assert!(manifest.contains("artifact = checkpoints/burnin.ckpt"));

        cmd_train(&cfg, &out, TrainOpts { stop_at: None, from: None, allow_config_mismatch: false })
            .unwrap();
        assert!(out.join("metrics-000001-000008.jsonl").is_file());
        assert!(out.join("winners.csv").is_file());
        assert!(out.join("eval_points.csv").is_file());
        assert!(out.join("checkpoints/iter-000008.ckpt").is_file());
        let records = read_metrics_log(&out.join("metrics-000001-000008.jsonl")).unwrap();
        assert_eq!(records.len(), 16); // 8 iterations x 2 pairs
        let winners = fs::read_to_string(out.join("winners.csv")).unwrap();
        assert_eq!(winners.lines().count(), 3, "header + decisions at 2 and 6:\n{winners}");

        let final_ckpt = load_checkpoint(&out.join("checkpoints/iter-000008.ckpt")).unwrap();
        assert_eq!(final_ckpt.state.iteration, 8);

        cmd_eval(&cfg, &out, &out.join("checkpoints/iter-000008.ckpt"), false).unwrap();
        let report = fs::read_to_string(out.join("eval_report.csv")).unwrap();
        assert_eq!(report.lines().count(), 3); // header + 2 pairs
        assert_eq!(report.lines().filter(|l| l.ends_with("true")).count(), 1);

        cmd_export_plots(&cfg, &out, &out.join("metrics-000001-000008.jsonl")).unwrap();
        for name in ["losses.csv", "losses.svg", "distances.csv", "distances.svg"] {
            assert!(out.join(name).is_file(), "{name} missing");
        }
        let losses = fs::read_to_string(out.join("losses.csv")).unwrap();
        assert_eq!(losses.lines().count(), 9); // header + 8 iterations
        assert!(losses.lines().next().unwrap().contains("l_dpc_pair1"));
    }

    #[test]
    fn train_pause_and_resume_matches_straight_run() {
        let dir = tempfile::tempdir().unwrap();
        let straight = dir.path().join("straight");
        let cfg_a = tiny_config(&straight);
        cmd_burnin(&cfg_a, &straight).unwrap();
        cmd_train(
            &cfg_a,
            &straight,
            TrainOpts { stop_at: None, from: None, allow_config_mismatch: false },
        )
        .unwrap();

        let paused = dir.path().join("paused");
        let cfg_b = tiny_config(&paused);
        cmd_burnin(&cfg_b, &paused).unwrap();
        // pause inside the second stage-1 window, the spot where a naive
        // "shorter run" would insert a winner selection
        cmd_train(
            &cfg_b,
            &paused,
            TrainOpts { stop_at: Some(5), from: None, allow_config_mismatch: false },
        )
        .unwrap();
        cmd_train(
            &cfg_b,
            &paused,
            TrainOpts {
                stop_at: None,
                from: Some(paused.join("checkpoints/iter-000005.ckpt")),
                allow_config_mismatch: false,
            },
        )
        .unwrap();

        // configs differ only in output_dir, which feeds the hash, so the
        // two runs' training must still agree record for record
        let full = fs::read_to_string(straight.join("metrics-000001-000008.jsonl")).unwrap();
        let head = fs::read_to_string(paused.join("metrics-000001-000005.jsonl")).unwrap();
        let tail = fs::read_to_string(paused.join("metrics-000006-000008.jsonl")).unwrap();
        assert_eq!(format!("{head}{tail}"), full);

        let a = load_checkpoint(&straight.join("checkpoints/iter-000008.ckpt")).unwrap();
        let b = load_checkpoint(&paused.join("checkpoints/iter-000008.ckpt")).unwrap();
        for (pa, pb) in a.state.pairs.iter().zip(&b.state.pairs) {
            assert!(pa.teacher.values_bit_equal(&pb.teacher));
            assert!(pa.student.values_bit_equal(&pb.student));
        }
    }

    #[test]
    fn config_mismatch_is_caught_and_overridable() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = tiny_config(&out);
        cmd_burnin(&cfg, &out).unwrap();

        let mut other = cfg.clone();
        other.ctf.beta = 9.0;
        let err = cmd_train(
            &other,
            &out,
            TrainOpts { stop_at: None, from: None, allow_config_mismatch: false },
        )
        .unwrap_err();
        assert!(err.to_string().contains("--allow-config-mismatch"), "{err}");
        cmd_train(
            &other,
            &out,
            TrainOpts { stop_at: None, from: None, allow_config_mismatch: true },
        )
        .unwrap();
    }

    #[test]
    fn train_rejects_bad_stop_points() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = tiny_config(&out);
        cmd_burnin(&cfg, &out).unwrap();
        let err = cmd_train(
            &cfg,
            &out,
            TrainOpts { stop_at: Some(99), from: None, allow_config_mismatch: false },
        )
        .unwrap_err();
        assert!(err.to_string().contains("beyond max_iter"), "{err}");
        let err = cmd_train(
            &cfg,
            &out,
            TrainOpts { stop_at: Some(0), from: None, allow_config_mismatch: false },
        )
        .unwrap_err();
        assert!(err.to_string().contains("nothing to run"), "{err}");
    }

    #[test]
    fn window_ablation_writes_summary_per_variant() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = tiny_config(&out);
        cmd_ablate_window(&cfg, &out, &[1, 2]).unwrap();
        let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 3);
        assert!(summary.starts_with("window_length,"));
        assert!(out.join("window-1/eval_points.csv").is_file());
        assert!(out.join("window-2/eval_points.csv").is_file());
        assert!(out.join("window-2/checkpoints/iter-000008.ckpt").is_file());

        // a window too long for the budget is rejected up front
        assert!(cmd_ablate_window(&cfg, &out, &[8]).is_err());
        assert!(cmd_ablate_window(&cfg, &out, &[]).is_err());
    }

    #[test]
    fn reset_ablation_compares_both_policies() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = tiny_config(&out);
        cmd_ablate_reset(&cfg, &out).unwrap();
        let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 3);
        assert!(summary.contains("\nreset,"));
        assert!(summary.contains("\ncontinue,"));
        assert!(out.join("reset/winners.csv").is_file());
        assert!(out.join("continue/winners.csv").is_file());
    }

    #[test]
    fn consistency_command_writes_picks_rates_and_chart() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = tiny_config(&out);
        cmd_dpc_consistency(&cfg, &out, 2, 2).unwrap();
        let picks = fs::read_to_string(out.join("consistency.csv")).unwrap();
        assert_eq!(picks.lines().count(), 3); // header + 2 windows
        let rates = fs::read_to_string(out.join("rates.csv")).unwrap();
        assert_eq!(rates.lines().count(), 4); // header + 3 selectors
        assert!(out.join("bars.svg").is_file());
    }

    #[test]
    fn export_plots_rejects_corrupt_logs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = tiny_config(&out);
        let log = dir.path().join("bad.jsonl");
        fs::write(&log, "not json\n").unwrap();
        assert!(cmd_export_plots(&cfg, &out, &log).is_err());
        fs::write(&log, "").unwrap();
        assert!(cmd_export_plots(&cfg, &out, &log).is_err());
    }
}
