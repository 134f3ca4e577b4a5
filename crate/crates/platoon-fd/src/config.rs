//! Command line, config file, and their resolution into one effective
//! pipeline configuration. Precedence: built-in defaults, then the config
//! file, then flags.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Parser, Subcommand};
use platoon_fd_core::edie::PairPolicy;
use platoon_fd_core::segment::SegmentationConfig;
use platoon_fd_core::tfd::{OptimizerSettings, ParamBounds};
use platoon_fd_core::trajectory::DriverMode;

use crate::schema::ColumnMapping;

/// Derive fundamental diagrams from platoon vehicle trajectories.
#[derive(Debug, Parser)]
#[command(name = "platoon-fd", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Flat key=value config file; flags override its entries.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Input file; repeat for several datasets.
    #[arg(long, global = true, action = ArgAction::Append, value_name = "FILE")]
    pub input: Vec<PathBuf>,

    /// Trajectory column layout: `long` or `wide`.
    #[arg(long, global = true, value_name = "KIND")]
    pub schema: Option<String>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Bumper extension added to the platoon span [m].
    #[arg(long, global = true, value_name = "METERS")]
    pub buffer: Option<f64>,

    /// Density bin width [veh/km].
    #[arg(long, global = true, value_name = "VEH_KM")]
    pub delta_k: Option<f64>,

    /// Speed bin width [km/h].
    #[arg(long, global = true, value_name = "KM_H")]
    pub delta_v: Option<f64>,

    /// Comma-separated density bin widths for the sensitivity sweep.
    #[arg(long, global = true, value_name = "LIST")]
    pub deltas: Option<String>,

    /// Parameter box `vf_lo:vf_hi,kcr_lo:kcr_hi,kjam_lo:kjam_hi`.
    #[arg(long, global = true, value_name = "BOX")]
    pub bounds: Option<String>,

    /// Minimum speed swing for a turning point [m/s].
    #[arg(long, global = true, value_name = "M_S")]
    pub min_persistence: Option<f64>,

    /// Maximum speed spread inside a stable window [m/s].
    #[arg(long, global = true, value_name = "M_S")]
    pub stable_band: Option<f64>,

    /// Minimum stable window length [s].
    #[arg(long, global = true, value_name = "SECONDS")]
    pub min_stable_duration: Option<f64>,

    /// Seed for every stochastic step (optimizer restarts, synthetic noise).
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
}

/// What to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Turn trajectory files into traffic-state tables.
    Estimate,
    /// Bin state tables into the three fundamental-diagram planes.
    Aggregate,
    /// Fit triangular parameters to states or binned input.
    Calibrate,
    /// Re-fit across a sweep of density bin widths.
    Sensitivity,
    /// Split trajectories into acceleration/stable/deceleration regimes.
    Segment,
    /// Draw SVG fundamental diagrams.
    Plot,
    /// Generate a synthetic platoon from a drive cycle.
    Synth,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Aggregate => "aggregate",
            Command::Calibrate => "calibrate",
            Command::Sensitivity => "sensitivity",
            Command::Segment => "segment",
            Command::Plot => "plot",
            Command::Synth => "synth",
        }
    }
}

/// Synthetic-platoon generation settings.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub dataset_id: String,
    pub driver_mode: DriverMode,
    /// Standstill spacing s0 [m].
    pub standstill_gap: f64,
    /// Time headway T [s].
    pub time_headway: f64,
    pub n_vehicles: usize,
    pub sample_hz: f64,
    /// Drive-cycle knots (t [s], speed [m/s]).
    pub knots: Vec<(f64, f64)>,
    /// Gaussian position noise, 0 disables [m].
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dataset_id: "synthetic".into(),
            driver_mode: DriverMode::Cacc,
            standstill_gap: 8.0,
            time_headway: 1.2,
            n_vehicles: 5,
            sample_hz: 10.0,
            knots: vec![(0.0, 0.0), (10.0, 0.0), (300.0, 35.0), (310.0, 35.0), (600.0, 0.0), (610.0, 0.0)],
            noise_sigma: 0.0,
        }
    }
}

/// Fully resolved settings every command runs under.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    pub schema_kind: String,
    pub mapping: ColumnMapping,
    pub out: PathBuf,
    pub buffer: f64,
    pub pair_policy: PairPolicy,
    pub delta_k: f64,
    pub delta_v: f64,
    pub deltas: Vec<f64>,
    pub bounds: ParamBounds,
    pub optimizer: OptimizerSettings,
    pub segmentation: SegmentationConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            schema_kind: "long".into(),
            mapping: ColumnMapping::default(),
            out: PathBuf::from("out"),
            buffer: 3.0,
            // Field data always holds a few standstill pairs where jitter
            // makes a displacement negative; the batch tool drops those and
            // reports the count, rather than failing the file. `pair_policy
            // = abort` restores the strict behavior.
            pair_policy: PairPolicy::Skip,
            delta_k: 0.3,
            delta_v: 0.3,
            deltas: vec![0.3, 0.6, 1.0, 1.5, 2.0, 3.0, 3.5],
            bounds: ParamBounds::default(),
            optimizer: OptimizerSettings::default(),
            segmentation: SegmentationConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Resolve defaults, then the config file (if any), then explicit flags.
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut columns: [Option<String>; 4] = [None, None, None, None];

        if let Some(path) = &cli.config {
            apply_config_file(&mut cfg, &mut columns, path)?;
        }

        if !cli.input.is_empty() {
            cfg.inputs = cli.input.clone();
        }
        if let Some(kind) = &cli.schema {
            cfg.schema_kind = kind.clone();
        }
        if let Some(out) = &cli.out {
            cfg.out = out.clone();
        }
        if let Some(buffer) = cli.buffer {
            cfg.buffer = buffer;
        }
        if let Some(delta_k) = cli.delta_k {
            cfg.delta_k = delta_k;
        }
        if let Some(delta_v) = cli.delta_v {
            cfg.delta_v = delta_v;
        }
        if let Some(deltas) = &cli.deltas {
            cfg.deltas = parse_list(deltas).context("--deltas")?;
        }
        if let Some(bounds) = &cli.bounds {
            cfg.bounds = parse_bounds(bounds).context("--bounds")?;
        }
        if let Some(p) = cli.min_persistence {
            cfg.segmentation.min_persistence = p;
        }
        if let Some(band) = cli.stable_band {
            cfg.segmentation.stable_band = band;
        }
        if let Some(d) = cli.min_stable_duration {
            cfg.segmentation.min_stable_duration = d;
        }
        if let Some(seed) = cli.seed {
            cfg.optimizer.seed = seed;
        }

        cfg.mapping = build_mapping(&cfg.schema_kind, &columns)?;
        validate(&cfg)?;
        Ok(cfg)
    }

    /// Deterministic one-line rendering of every effective setting, stamped
    /// into output headers so results state how they were produced.
    pub fn effective_line(&self, command: Command) -> String {
        let mut line = String::new();
        let _ = write!(line, "command={}", command.name());
        let inputs: Vec<String> =
            self.inputs.iter().map(|p| p.display().to_string()).collect();
        let _ = write!(line, " input={}", inputs.join(";"));
        let _ = write!(line, " schema={}", self.schema_kind);
        if let ColumnMapping::Long { time, vehicle, position, speed } = &self.mapping {
            let _ = write!(line, " columns={time};{vehicle};{position};{speed}");
        }
        let _ = write!(line, " out={}", self.out.display());
        let _ = write!(line, " buffer={}", self.buffer);
        let policy = match self.pair_policy {
            PairPolicy::Abort => "abort",
            PairPolicy::Skip => "skip",
        };
        let _ = write!(line, " pair_policy={policy}");
        let _ = write!(line, " delta_k={} delta_v={}", self.delta_k, self.delta_v);
        let deltas: Vec<String> = self.deltas.iter().map(f64::to_string).collect();
        let _ = write!(line, " deltas={}", deltas.join(","));
        let b = &self.bounds;
        let _ = write!(
            line,
            " bounds={}:{},{}:{},{}:{}",
            b.lb[0], b.ub[0], b.lb[1], b.ub[1], b.lb[2], b.ub[2]
        );
        let o = &self.optimizer;
        let _ = write!(
            line,
            " max_evaluations={} restarts={} tolerance={:e} seed={}",
            o.max_evaluations, o.restarts, o.tolerance, o.seed
        );
        let s = &self.segmentation;
        let _ = write!(
            line,
            " min_persistence={} stable_band={} min_stable_duration={}",
            s.min_persistence, s.stable_band, s.min_stable_duration
        );
        match s.smooth_window {
            Some(w) => {
                let _ = write!(line, " smooth_window={w}");
            }
            None => line.push_str(" smooth_window=none"),
        }
        let sy = &self.synth;
        let knots: Vec<String> = sy.knots.iter().map(|(t, v)| format!("{t}:{v}")).collect();
        let _ = write!(
            line,
            " synth_id={} synth_mode={} synth_s0={} synth_headway={} synth_vehicles={} \
             synth_hz={} synth_knots={} synth_sigma={}",
            sy.dataset_id,
            sy.driver_mode.as_str(),
            sy.standstill_gap,
            sy.time_headway,
            sy.n_vehicles,
            sy.sample_hz,
            knots.join(","),
            sy.noise_sigma
        );
        line
    }
}

fn build_mapping(kind: &str, columns: &[Option<String>; 4]) -> Result<ColumnMapping> {
    let mut mapping = ColumnMapping::from_kind(kind)?;
    match &mut mapping {
        ColumnMapping::Long { time, vehicle, position, speed } => {
            for (slot, custom) in [time, vehicle, position, speed].into_iter().zip(columns) {
                if let Some(name) = custom {
                    *slot = name.clone();
                }
            }
        }
        ColumnMapping::Wide { time } => {
            if let Some(name) = &columns[0] {
                *time = name.clone();
            }
            if let Some(extra) =
                columns[1..].iter().flatten().next()
            {
                bail!("wide schema only accepts col_time, not `{extra}`");
            }
        }
    }
    Ok(mapping)
}

fn validate(cfg: &PipelineConfig) -> Result<()> {
    for (name, value) in [
        ("buffer", cfg.buffer),
        ("delta_k", cfg.delta_k),
        ("delta_v", cfg.delta_v),
        ("min_persistence", cfg.segmentation.min_persistence),
        ("stable_band", cfg.segmentation.stable_band),
        ("min_stable_duration", cfg.segmentation.min_stable_duration),
        ("synth_s0", cfg.synth.standstill_gap),
        ("synth_headway", cfg.synth.time_headway),
        ("synth_hz", cfg.synth.sample_hz),
    ] {
        if !value.is_finite() || value < 0.0 {
            bail!("{name} must be a finite non-negative number, got {value}");
        }
    }
    if cfg.delta_k <= 0.0 || cfg.delta_v <= 0.0 {
        bail!("bin widths must be positive");
    }
    if cfg.deltas.is_empty() {
        bail!("deltas must name at least one bin width");
    }
    if cfg.synth.noise_sigma < 0.0 || !cfg.synth.noise_sigma.is_finite() {
        bail!("synth_sigma must be finite and non-negative");
    }
    if cfg.synth.n_vehicles < 2 {
        bail!("synth_vehicles must be at least 2");
    }
    Ok(())
}

fn apply_config_file(
    cfg: &mut PipelineConfig,
    columns: &mut [Option<String>; 4],
    path: &Path,
) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected `key = value`, got `{line}`", path.display(), lineno + 1);
        };
        let key = key.trim();
        let value = value.trim();
        // `input` may repeat to list several datasets; everything else is
        // single-valued and a repeat is treated as a typo.
        if key != "input" && !seen.insert(key.to_string()) {
            bail!("{}:{}: duplicate key `{key}`", path.display(), lineno + 1);
        }
        let bad = |what: &str| {
            anyhow::anyhow!("{}:{}: {key}: {what}: `{value}`", path.display(), lineno + 1)
        };
        let num = || value.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad("not a number"));
        match key {
            "input" => cfg.inputs.push(PathBuf::from(value)),
            "schema" => cfg.schema_kind = value.to_string(),
            "out" => cfg.out = PathBuf::from(value),
            "buffer" => cfg.buffer = num()?,
            "pair_policy" => {
                cfg.pair_policy = match value {
                    "abort" => PairPolicy::Abort,
                    "skip" => PairPolicy::Skip,
                    _ => return Err(bad("expected `abort` or `skip`")),
                }
            }
            "delta_k" => cfg.delta_k = num()?,
            "delta_v" => cfg.delta_v = num()?,
            "deltas" => cfg.deltas = parse_list(value).map_err(|e| bad(&e.to_string()))?,
            "bounds" => cfg.bounds = parse_bounds(value).map_err(|e| bad(&e.to_string()))?,
            "max_evaluations" => {
                cfg.optimizer.max_evaluations = value.parse().map_err(|_| bad("not an integer"))?
            }
            "restarts" => {
                cfg.optimizer.restarts = value.parse().map_err(|_| bad("not an integer"))?
            }
            "tolerance" => cfg.optimizer.tolerance = num()?,
            "seed" => cfg.optimizer.seed = value.parse().map_err(|_| bad("not an integer"))?,
            "min_persistence" => cfg.segmentation.min_persistence = num()?,
            "stable_band" => cfg.segmentation.stable_band = num()?,
            "min_stable_duration" => cfg.segmentation.min_stable_duration = num()?,
            "smooth_window" => {
                cfg.segmentation.smooth_window =
                    if value == "none" { None } else { Some(num()?) }
            }
            "col_time" => columns[0] = Some(value.to_string()),
            "col_vehicle" => columns[1] = Some(value.to_string()),
            "col_position" => columns[2] = Some(value.to_string()),
            "col_speed" => columns[3] = Some(value.to_string()),
            "synth_id" => cfg.synth.dataset_id = value.to_string(),
            "synth_mode" => {
                cfg.synth.driver_mode = value.parse().map_err(|_| bad("unknown driver mode"))?
            }
            "synth_s0" => cfg.synth.standstill_gap = num()?,
            "synth_headway" => cfg.synth.time_headway = num()?,
            "synth_vehicles" => {
                cfg.synth.n_vehicles = value.parse().map_err(|_| bad("not an integer"))?
            }
            "synth_hz" => cfg.synth.sample_hz = num()?,
            "synth_knots" => {
                cfg.synth.knots = parse_knots(value).map_err(|e| bad(&e.to_string()))?
            }
            "synth_sigma" => cfg.synth.noise_sigma = num()?,
            _ => bail!("{}:{}: unknown key `{key}`", path.display(), lineno + 1),
        }
    }
    Ok(())
}

/// Parse a comma-separated list of positive numbers.
pub fn parse_list(text: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(|part| {
            let part = part.trim();
            part.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite() && *x > 0.0)
                .with_context(|| format!("`{part}` is not a positive number"))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        bail!("empty list");
    }
    Ok(values)
}

/// Parse `lo:hi,lo:hi,lo:hi` into a parameter box (v_f, k_cr, k_jam order).
pub fn parse_bounds(text: &str) -> Result<ParamBounds> {
    let pairs: Vec<&str> = text.split(',').collect();
    if pairs.len() != 3 {
        bail!("expected three `lo:hi` pairs, got {}", pairs.len());
    }
    let mut lb = [0.0; 3];
    let mut ub = [0.0; 3];
    for (i, pair) in pairs.iter().enumerate() {
        let (lo, hi) =
            pair.split_once(':').with_context(|| format!("`{pair}` is not `lo:hi`"))?;
        lb[i] = lo.trim().parse().with_context(|| format!("`{lo}` is not a number"))?;
        ub[i] = hi.trim().parse().with_context(|| format!("`{hi}` is not a number"))?;
    }
    let bounds = ParamBounds { lb, ub };
    bounds.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(bounds)
}

/// Parse `t:v,t:v,…` drive-cycle knots.
pub fn parse_knots(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(|pair| {
            let pair = pair.trim();
            let (t, v) = pair.split_once(':').with_context(|| format!("`{pair}` is not `t:v`"))?;
            let t: f64 = t.trim().parse().with_context(|| format!("`{t}` is not a number"))?;
            let v: f64 = v.trim().parse().with_context(|| format!("`{v}` is not a number"))?;
            Ok((t, v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare_cli(command: Command) -> Cli {
        Cli {
            command,
            config: None,
            input: vec![],
            schema: None,
            out: None,
            buffer: None,
            delta_k: None,
            delta_v: None,
            deltas: None,
            bounds: None,
            min_persistence: None,
            stable_band: None,
            min_stable_duration: None,
            seed: None,
        }
    }

    #[test]
    fn defaults_stand_without_flags_or_file() {
        let cfg = PipelineConfig::resolve(&bare_cli(Command::Synth)).unwrap();
        assert_eq!(cfg.buffer, 3.0);
        assert_eq!(cfg.delta_k, 0.3);
        assert_eq!(cfg.deltas, vec![0.3, 0.6, 1.0, 1.5, 2.0, 3.0, 3.5]);
        assert_eq!(cfg.out, PathBuf::from("out"));
        assert_eq!(cfg.synth.n_vehicles, 5);
        assert!(matches!(cfg.pair_policy, PairPolicy::Skip));
    }

    #[test]
    fn file_overrides_defaults_and_flags_override_file() {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("platoon-fd-config-{}.conf", std::process::id()));
        std::fs::write(
            &path,
            "# comment\nbuffer = 5\ndelta_k = 1.0\ninput = a.csv\ninput = b.csv\nseed = 7\n",
        )
        .unwrap();
        let mut cli = bare_cli(Command::Estimate);
        cli.config = Some(path.clone());
        cli.buffer = Some(2.0);
        let cfg = PipelineConfig::resolve(&cli).unwrap();
        std::fs::remove_file(&path).unwrap();
        assert_eq!(cfg.buffer, 2.0); // flag beats file
        assert_eq!(cfg.delta_k, 1.0); // file beats default
        assert_eq!(cfg.optimizer.seed, 7);
        assert_eq!(cfg.inputs, vec![PathBuf::from("a.csv"), PathBuf::from("b.csv")]);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("platoon-fd-badcfg-{}.conf", std::process::id()));
        std::fs::write(&path, "bufffer = 5\n").unwrap();
        let mut cli = bare_cli(Command::Estimate);
        cli.config = Some(path.clone());
        let err = PipelineConfig::resolve(&cli).unwrap_err().to_string();
        assert!(err.contains("unknown key"), "{err}");

        std::fs::write(&path, "buffer = 5\nbuffer = 6\n").unwrap();
        let err = PipelineConfig::resolve(&cli).unwrap_err().to_string();
        std::fs::remove_file(&path).unwrap();
        assert!(err.contains("duplicate key"), "{err}");
    }

    #[test]
    fn cli_parses_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "platoon-fd",
            "estimate",
            "--input",
            "a.csv",
            "--input",
            "b.csv",
            "--buffer",
            "2.5",
        ])
        .unwrap();
        assert_eq!(cli.command, Command::Estimate);
        assert_eq!(cli.input.len(), 2);
        assert_eq!(cli.buffer, Some(2.5));
    }

    #[test]
    fn bounds_and_knots_parse_and_reject() {
        let b = parse_bounds("60:160,5:60,60:250").unwrap();
        assert_eq!(b.lb, [60.0, 5.0, 60.0]);
        assert_eq!(b.ub, [160.0, 60.0, 250.0]);
        assert!(parse_bounds("60:160,5:60").is_err());
        assert!(parse_bounds("160:60,5:60,60:250").is_err());

        let knots = parse_knots("0:0,10:0,300:35").unwrap();
        assert_eq!(knots, vec![(0.0, 0.0), (10.0, 0.0), (300.0, 35.0)]);
        assert!(parse_knots("0;0").is_err());

        assert_eq!(parse_list(" 0.3, 0.6 ").unwrap(), vec![0.3, 0.6]);
        assert!(parse_list("0.3,-1").is_err());
    }

    #[test]
    fn effective_line_is_deterministic_and_complete() {
        let cfg = PipelineConfig::resolve(&bare_cli(Command::Calibrate)).unwrap();
        let a = cfg.effective_line(Command::Calibrate);
        let b = cfg.effective_line(Command::Calibrate);
        assert_eq!(a, b);
        for needle in
            ["command=calibrate", "buffer=3", "delta_k=0.3", "bounds=60:160,5:60,60:250", "seed=0"]
        {
            assert!(a.contains(needle), "missing `{needle}` in `{a}`");
        }
    }
}
