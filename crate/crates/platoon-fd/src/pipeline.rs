//! The batch pipeline behind each subcommand: read inputs, run the core
//! estimators, write tables and plots.
//!
//! Failure policy: a broken input is reported on stderr and the run
//! continues with the remaining files (`Partial`); errors that make the
//! whole command meaningless (no usable input at all, conflicting inputs)
//! abort. Work across input files runs on one thread per file; results are
//! collected and written in input order, so output is deterministic.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use platoon_fd_core::aggregate::{
    aggregate_by_density, aggregate_by_speed, BinAccumulator, BinAxis, BinnedSeries,
};
use platoon_fd_core::edie::{estimate_series, EstimatorConfig, TrafficState};
use platoon_fd_core::segment::{
    mean_speed_profile, segment_profile, states_by_segment, LabeledState, SegmentLabel,
    Segmentation,
};
use platoon_fd_core::synthetic::{generate_platoon, DriveCycle, HeadwayLaw, NoiseConfig};
use platoon_fd_core::tfd::{calibrate, sensitivity_sweep, CalibrationProblem, TfdParams};
use platoon_fd_core::trajectory::{
    validate_platoon, DriverMode, TrajectoryDataset, ValidationConfig, ValidationIssue,
    ValidationRule,
};

use crate::config::{Command, PipelineConfig};
use crate::ingest::{parse_trajectory_file, write_dataset};
use crate::plot::{render, PlotLayers};
use crate::tables::{
    comment_header, read_binned, read_params, read_states, sniff_kind, write_binned,
    write_labeled_states, write_params, write_plane, write_segments, write_sensitivity,
    write_states, FileKind, ParamsRow, Plane,
};

/// How a command run ended when it did not abort.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// Every input processed without errors.
    Clean,
    /// Some inputs failed; their errors went to stderr, the rest were
    /// processed and written.
    Partial,
}

/// Execute one subcommand under a resolved configuration.
pub fn run(command: Command, cfg: &PipelineConfig) -> Result<RunStatus> {
    let head = comment_header(&cfg.effective_line(command));
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("cannot create output directory {}", cfg.out.display()))?;
    match command {
        Command::Estimate => cmd_estimate(cfg, &head),
        Command::Aggregate => cmd_aggregate(cfg, &head),
        Command::Calibrate => cmd_calibrate(cfg, &head),
        Command::Sensitivity => cmd_sensitivity(cfg, &head),
        Command::Segment => cmd_segment(cfg, &head),
        Command::Plot => cmd_plot(cfg, &head),
        Command::Synth => cmd_synth(cfg),
    }
}

/// Per-file cap on validation warnings echoed to stderr; the rest collapse
/// into one summary line.
const MAX_WARNINGS_SHOWN: usize = 5;

/// Run `work` once per item on its own thread; results come back in input
/// order regardless of completion order.
fn parallel_map<T, R, F>(items: &[T], work: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    std::thread::scope(|scope| {
        let handles: Vec<_> = items.iter().map(|item| scope.spawn(|| work(item))).collect();
        handles.into_iter().map(|h| h.join().expect("pipeline worker panicked")).collect()
    })
}

fn create_out(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot write {}", path.display()))
}

fn require_inputs(cfg: &PipelineConfig) -> Result<()> {
    if cfg.inputs.is_empty() {
        bail!("no inputs: pass --input or list `input =` lines in the config file");
    }
    Ok(())
}

fn issue_text(issue: &ValidationIssue) -> String {
    match &issue.rule {
        ValidationRule::OrderingViolation { vehicle, leader_position, follower_position } => {
            format!(
                "frame {}: vehicle #{vehicle} at {follower_position} m is not behind its \
                 leader at {leader_position} m",
                issue.frame
            )
        }
        ValidationRule::SpeedMismatch { vehicle, recorded, derived } => {
            format!(
                "frame {}: vehicle #{vehicle} records {recorded} m/s but positions imply \
                 {derived:.3} m/s",
                issue.frame
            )
        }
        ValidationRule::SamplingJitter { deviation } => {
            format!("frame {}: sampling jitter of {deviation:.6} s", issue.frame)
        }
    }
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

struct Estimated {
    dataset: TrajectoryDataset,
    states: Vec<TrafficState>,
    skipped: usize,
    warnings: Vec<String>,
}

fn estimate_one(path: &Path, cfg: &PipelineConfig) -> Result<Estimated> {
    let dataset = parse_trajectory_file(path, &cfg.mapping)?;
    let report = validate_platoon(&dataset, &ValidationConfig::default());
    if !report.is_accepted() {
        let shown: Vec<String> = report.errors.iter().take(3).map(issue_text).collect();
        bail!(
            "{} validation error(s), e.g. {}",
            report.errors.len(),
            shown.join("; ")
        );
    }
    let estimator = EstimatorConfig { buffer: cfg.buffer, on_error: cfg.pair_policy };
    let series = estimate_series(&dataset, &estimator)?;
    Ok(Estimated {
        states: series.states,
        skipped: series.skipped.len(),
        warnings: report.warnings.iter().map(issue_text).collect(),
        dataset,
    })
}

fn cmd_estimate(cfg: &PipelineConfig, head: &str) -> Result<RunStatus> {
    require_inputs(cfg)?;
    let outcomes = parallel_map(&cfg.inputs, |path| estimate_one(path, cfg));

    let mut status = RunStatus::Clean;
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();
    for (path, outcome) in cfg.inputs.iter().zip(outcomes) {
        let estimated = match outcome {
            Ok(e) => e,
            Err(e) => {
                eprintln!("error: {}: {e:#}", path.display());
                status = RunStatus::Partial;
                continue;
            }
        };
        let id = estimated.dataset.dataset_id().to_string();
        if !seen_ids.insert(id.clone()) {
            eprintln!(
                "error: {}: dataset id `{id}` already produced by an earlier input",
                path.display()
            );
            status = RunStatus::Partial;
            continue;
        }
        for warning in estimated.warnings.iter().take(MAX_WARNINGS_SHOWN) {
            eprintln!("warning: {}: {warning}", path.display());
        }
        if estimated.warnings.len() > MAX_WARNINGS_SHOWN {
            eprintln!(
                "warning: {}: {} further warning(s) suppressed",
                path.display(),
                estimated.warnings.len() - MAX_WARNINGS_SHOWN
            );
        }
        let out_path = cfg.out.join(format!("{id}.states.csv"));
        write_states(create_out(&out_path)?, head, &estimated.states)?;
        println!(
            "{}: {} states ({} pair(s) skipped) -> {}",
            id,
            estimated.states.len(),
            estimated.skipped,
            out_path.display()
        );
    }
    Ok(status)
}

// ---------------------------------------------------------------------------
// aggregate
// ---------------------------------------------------------------------------

/// Read every input as a states table, pooling rows per driver mode.
/// Unreadable files are reported and skipped (flipping `status`).
fn pooled_states(
    cfg: &PipelineConfig,
    status: &mut RunStatus,
) -> Result<BTreeMap<&'static str, Vec<TrafficState>>> {
    require_inputs(cfg)?;
    let outcomes = parallel_map(&cfg.inputs, |path: &PathBuf| -> Result<Vec<TrafficState>> {
        match sniff_kind(path)? {
            FileKind::States => Ok(read_states(path)?),
            other => bail!("{}: expected a states table, found {other:?}", path.display()),
        }
    });
    let mut pooled: BTreeMap<&'static str, Vec<TrafficState>> = BTreeMap::new();
    for (path, outcome) in cfg.inputs.iter().zip(outcomes) {
        match outcome {
            Ok(states) => {
                for state in states {
                    pooled.entry(state.driver_mode.as_str()).or_default().push(state);
                }
            }
            Err(e) => {
                eprintln!("error: {}: {e:#}", path.display());
                *status = RunStatus::Partial;
            }
        }
    }
    if pooled.is_empty() {
        bail!("no traffic states in any input");
    }
    Ok(pooled)
}

fn write_mode_bins(
    cfg: &PipelineConfig,
    head: &str,
    mode: &str,
    by_density: &BinnedSeries,
    by_speed: &BinnedSeries,
) -> Result<()> {
    let kbins = cfg.out.join(format!("{mode}.kbins.csv"));
    write_binned(create_out(&kbins)?, head, by_density)?;
    let vbins = cfg.out.join(format!("{mode}.vbins.csv"));
    write_binned(create_out(&vbins)?, head, by_speed)?;
    for (plane, series) in [
        (Plane::FlowDensity, by_density),
        (Plane::SpeedDensity, by_density),
        (Plane::SpeedFlow, by_speed),
    ] {
        let path = cfg.out.join(format!("{mode}.{}.csv", plane.stem()));
        write_plane(create_out(&path)?, head, series, plane)?;
    }
    Ok(())
}

fn cmd_aggregate(cfg: &PipelineConfig, head: &str) -> Result<RunStatus> {
    let mut status = RunStatus::Clean;
    let pooled = pooled_states(cfg, &mut status)?;
    for (mode, states) in &pooled {
        let by_density = aggregate_by_density(states, cfg.delta_k)?;
        let by_speed = aggregate_by_speed(states, cfg.delta_v)?;
        write_mode_bins(cfg, head, mode, &by_density, &by_speed)?;
        println!(
            "{mode}: {} states -> {} density bins, {} speed bins",
            states.len(),
            by_density.points.len(),
            by_speed.points.len()
        );
    }
    Ok(status)
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

enum ModeInput {
    States(Vec<TrafficState>),
    Binned(BinnedSeries),
}

fn cmd_calibrate(cfg: &PipelineConfig, head: &str) -> Result<RunStatus> {
    require_inputs(cfg)?;
    let mut status = RunStatus::Clean;
    let mut per_mode: BTreeMap<&'static str, ModeInput> = BTreeMap::new();

    for path in &cfg.inputs {
        let loaded: Result<()> = (|| {
            match sniff_kind(path)? {
                FileKind::States => {
                    for state in read_states(path)? {
                        let slot = per_mode
                            .entry(state.driver_mode.as_str())
                            .or_insert_with(|| ModeInput::States(Vec::new()));
                        match slot {
                            ModeInput::States(pool) => pool.push(state),
                            ModeInput::Binned(_) => bail!(
                                "driver mode `{}` is supplied both binned and as raw states; \
                                 pass one or the other",
                                state.driver_mode.as_str()
                            ),
                        }
                    }
                }
                FileKind::Binned => {
                    let binned = read_binned(path)?;
                    if binned.grid.axis != BinAxis::Density {
                        bail!("calibration needs density-binned input, this file bins on speed");
                    }
                    let mode = binned.driver_mode.as_str();
                    if per_mode.insert(mode, ModeInput::Binned(binned)).is_some() {
                        bail!(
                            "driver mode `{mode}` appears in more than one input; binned tables \
                             cannot be pooled"
                        );
                    }
                }
                FileKind::Params => {
                    bail!("a parameter table cannot be calibration input");
                }
            }
            Ok(())
        })();
        // Input conflicts poison the whole parameter table, not one file.
        loaded.with_context(|| path.display().to_string())?;
    }

    let mut rows: Vec<ParamsRow> = Vec::new();
    for (mode, input) in per_mode {
        let result = (|| -> Result<ParamsRow> {
            let binned = match input {
                ModeInput::Binned(b) => b,
                ModeInput::States(states) => aggregate_by_density(&states, cfg.delta_k)?,
            };
            let delta = binned.grid.delta;
            let problem = CalibrationProblem::new(binned, cfg.bounds, cfg.optimizer)?;
            let fit = calibrate(&problem)?;
            Ok(ParamsRow { driver_mode: mode.parse::<DriverMode>().expect("round trip"), delta, result: fit })
        })();
        match result {
            Ok(row) => {
                let p = &row.result.params;
                println!(
                    "{mode}: v_f={:.2} km/h  k_cr={:.2} veh/km  k_jam={:.2} veh/km  \
                     w={:.2} km/h  capacity={:.1} veh/h  objective={:.5}  converged={}",
                    p.v_f(),
                    p.k_cr(),
                    p.k_jam(),
                    p.w(),
                    p.capacity(),
                    row.result.objective_value,
                    row.result.converged
                );
                rows.push(row);
            }
            Err(e) => {
                eprintln!("error: mode {mode}: {e:#}");
                status = RunStatus::Partial;
            }
        }
    }
    if rows.is_empty() {
        bail!("calibration produced no parameter rows");
    }
    let path = cfg.out.join("tfd_params.csv");
    write_params(create_out(&path)?, head, &rows)?;
    println!("parameters -> {}", path.display());
    Ok(status)
}

// ---------------------------------------------------------------------------
// sensitivity
// ---------------------------------------------------------------------------

fn cmd_sensitivity(cfg: &PipelineConfig, head: &str) -> Result<RunStatus> {
    let mut status = RunStatus::Clean;
    let pooled = pooled_states(cfg, &mut status)?;
    let mut rows = Vec::new();
    for (mode, states) in &pooled {
        let sweep = sensitivity_sweep(states, &cfg.deltas, cfg.bounds, cfg.optimizer);
        for row in &sweep {
            match &row.outcome {
                Ok(fit) => println!(
                    "{mode} delta={}: v_f={:.2} k_cr={:.2} k_jam={:.2} w={:.2} converged={}",
                    row.delta,
                    fit.params.v_f(),
                    fit.params.k_cr(),
                    fit.params.k_jam(),
                    fit.params.w(),
                    fit.converged
                ),
                Err(e) => println!("{mode} delta={}: failed: {e}", row.delta),
            }
        }
        rows.extend(sweep);
    }
    let path = cfg.out.join("sensitivity.csv");
    write_sensitivity(create_out(&path)?, head, &rows)?;
    println!("sweep -> {}", path.display());
    Ok(status)
}

// ---------------------------------------------------------------------------
// segment
// ---------------------------------------------------------------------------

struct Segmented {
    dataset_id: String,
    driver_mode: DriverMode,
    segmentation: Segmentation,
    labeled: Vec<LabeledState>,
    skipped: usize,
}

fn segment_one(path: &Path, cfg: &PipelineConfig) -> Result<Segmented> {
    let dataset = parse_trajectory_file(path, &cfg.mapping)?;
    let profile = mean_speed_profile(&dataset)?;
    let segmentation = segment_profile(&profile, &cfg.segmentation)?;
    let estimator = EstimatorConfig { buffer: cfg.buffer, on_error: cfg.pair_policy };
    let series = estimate_series(&dataset, &estimator)?;

    let labeled = if series.skipped.is_empty() {
        states_by_segment(&series.states, &segmentation.segments)?
    } else {
        // Skipped pairs leave holes: expand the segment labels over every
        // pair index, then keep only the labels of surviving states.
        let mut flat: Vec<SegmentLabel> = Vec::with_capacity(dataset.num_frames() - 1);
        for seg in &segmentation.segments {
            flat.extend(std::iter::repeat(seg.label).take(seg.end - seg.start));
        }
        let dropped: BTreeSet<usize> = series.skipped.iter().map(|p| p.frame).collect();
        let surviving = (0..flat.len()).filter(|i| !dropped.contains(i));
        series
            .states
            .iter()
            .zip(surviving)
            .map(|(state, i)| LabeledState { state: state.clone(), label: flat[i] })
            .collect()
    };

    Ok(Segmented {
        dataset_id: dataset.dataset_id().to_string(),
        driver_mode: dataset.driver_mode(),
        segmentation,
        labeled,
        skipped: series.skipped.len(),
    })
}

fn cmd_segment(cfg: &PipelineConfig, head: &str) -> Result<RunStatus> {
    require_inputs(cfg)?;
    let outcomes = parallel_map(&cfg.inputs, |path| segment_one(path, cfg));

    let mut status = RunStatus::Clean;
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();
    let mut pooled: BTreeMap<(&'static str, &'static str), BinAccumulator> = BTreeMap::new();
    for (path, outcome) in cfg.inputs.iter().zip(outcomes) {
        let seg = match outcome {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {}: {e:#}", path.display());
                status = RunStatus::Partial;
                continue;
            }
        };
        if !seen_ids.insert(seg.dataset_id.clone()) {
            eprintln!(
                "error: {}: dataset id `{}` already produced by an earlier input",
                path.display(),
                seg.dataset_id
            );
            status = RunStatus::Partial;
            continue;
        }
        let seg_path = cfg.out.join(format!("{}.segments.csv", seg.dataset_id));
        write_segments(create_out(&seg_path)?, head, &seg.segmentation)?;
        let labeled_path = cfg.out.join(format!("{}.states_labeled.csv", seg.dataset_id));
        write_labeled_states(create_out(&labeled_path)?, head, &seg.labeled)?;
        for ls in &seg.labeled {
            let key = (seg.driver_mode.as_str(), ls.label.as_str());
            let acc = match pooled.entry(key) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(BinAccumulator::new(cfg.delta_k, BinAxis::Density)?)
                }
            };
            acc.push(&ls.state)?;
        }
        println!(
            "{}: {} segments, {} labeled states ({} pair(s) skipped) -> {}, {}",
            seg.dataset_id,
            seg.segmentation.segments.len(),
            seg.labeled.len(),
            seg.skipped,
            seg_path.display(),
            labeled_path.display()
        );
    }

    for ((mode, label), acc) in pooled {
        let series = acc.finish()?;
        let path = cfg.out.join(format!("{mode}.{label}.qk.csv"));
        write_plane(create_out(&path)?, head, &series, Plane::FlowDensity)?;
    }
    Ok(status)
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

#[derive(Default)]
struct PlotInputs {
    scatter: Vec<TrafficState>,
    by_density: Option<BinnedSeries>,
    by_speed: Option<BinnedSeries>,
    params: Option<TfdParams>,
}

fn cmd_plot(cfg: &PipelineConfig, head: &str) -> Result<RunStatus> {
    require_inputs(cfg)?;
    let mut status = RunStatus::Clean;
    let mut per_mode: BTreeMap<&'static str, PlotInputs> = BTreeMap::new();
    let mut params_supplied = false;

    for path in &cfg.inputs {
        let loaded: Result<()> = (|| {
            match sniff_kind(path)? {
                FileKind::States => {
                    for state in read_states(path)? {
                        per_mode
                            .entry(state.driver_mode.as_str())
                            .or_default()
                            .scatter
                            .push(state);
                    }
                }
                FileKind::Binned => {
                    let binned = read_binned(path)?;
                    let entry = per_mode.entry(binned.driver_mode.as_str()).or_default();
                    let slot = match binned.grid.axis {
                        BinAxis::Density => &mut entry.by_density,
                        BinAxis::Speed => &mut entry.by_speed,
                    };
                    if slot.is_some() {
                        bail!(
                            "driver mode `{}` already has a {}-binned input",
                            binned.driver_mode.as_str(),
                            binned.grid.axis.as_str()
                        );
                    }
                    *slot = Some(binned);
                }
                FileKind::Params => {
                    params_supplied = true;
                    for row in read_params(path)? {
                        let entry = per_mode.entry(row.driver_mode.as_str()).or_default();
                        entry.params.get_or_insert(row.result.params);
                    }
                }
            }
            Ok(())
        })();
        if let Err(e) = loaded {
            eprintln!("error: {}: {e:#}", path.display());
            status = RunStatus::Partial;
        }
    }

    // Fall back to a previous calibration in the output directory.
    if !params_supplied {
        let default_params = cfg.out.join("tfd_params.csv");
        if default_params.exists() {
            for row in read_params(&default_params)? {
                if let Some(entry) = per_mode.get_mut(row.driver_mode.as_str()) {
                    entry.params.get_or_insert(row.result.params);
                }
            }
        }
    }

    if per_mode.is_empty() {
        bail!("nothing to plot: no states or binned input could be read");
    }

    for (mode, mut inputs) in per_mode {
        if inputs.by_density.is_none() && !inputs.scatter.is_empty() {
            inputs.by_density = Some(aggregate_by_density(&inputs.scatter, cfg.delta_k)?);
        }
        if inputs.by_speed.is_none() && !inputs.scatter.is_empty() {
            inputs.by_speed = Some(aggregate_by_speed(&inputs.scatter, cfg.delta_v)?);
        }
        for (plane, binned) in [
            (Plane::FlowDensity, inputs.by_density.as_ref()),
            (Plane::SpeedDensity, inputs.by_density.as_ref()),
            (Plane::SpeedFlow, inputs.by_speed.as_ref()),
        ] {
            let title = match plane {
                Plane::FlowDensity => format!("{mode}: flow vs density"),
                Plane::SpeedDensity => format!("{mode}: speed vs density"),
                Plane::SpeedFlow => format!("{mode}: speed vs flow"),
            };
            let svg = render(&PlotLayers {
                plane,
                title: &title,
                scatter: &inputs.scatter,
                binned,
                params: inputs.params.as_ref(),
                config: head.lines().nth(1).unwrap_or("").trim_start_matches("# config: "),
            });
            let path = cfg.out.join(format!("{mode}.{}.svg", plane.stem()));
            std::fs::write(&path, svg)
                .with_context(|| format!("cannot write {}", path.display()))?;
            println!("{mode}: {} -> {}", plane.stem(), path.display());
        }
    }
    Ok(status)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(cfg: &PipelineConfig) -> Result<RunStatus> {
    let synth = &cfg.synth;
    let law = HeadwayLaw::new(synth.standstill_gap, synth.time_headway)?;
    let cycle = DriveCycle::new(synth.knots.clone())?;
    let noise = (synth.noise_sigma > 0.0)
        .then_some(NoiseConfig { sigma: synth.noise_sigma, seed: cfg.optimizer.seed });
    let dataset = generate_platoon(
        &cycle,
        &law,
        synth.n_vehicles,
        synth.sample_hz,
        &synth.dataset_id,
        synth.driver_mode,
        noise.as_ref(),
    )?;
    let (csv_path, meta_path) = write_dataset(&cfg.out, &dataset, synth.sample_hz)?;
    println!(
        "{}: {} vehicles x {} frames -> {}, {}",
        synth.dataset_id,
        synth.n_vehicles,
        dataset.num_frames(),
        csv_path.display(),
        meta_path.display()
    );
    Ok(RunStatus::Clean)
}
