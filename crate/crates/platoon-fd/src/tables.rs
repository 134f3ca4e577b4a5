//! CSV tables for every pipeline product: traffic states, binned series,
//! plane projections, calibrated parameters, sensitivity sweeps, and
//! segmentation reports.
//!
//! Every writer prepends a `#`-comment header carrying the tool version and
//! the effective configuration; every reader skips such comments. Numbers
//! are printed in shortest round-trip form, so unconverted quantities
//! survive a write/read cycle bit-equal.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use platoon_fd_core::aggregate::{BinAxis, BinGrid, BinnedPoint, BinnedSeries};
use platoon_fd_core::edie::TrafficState;
use platoon_fd_core::segment::{LabeledState, Segment, SegmentLabel, Segmentation};
use platoon_fd_core::tfd::{CalibrationResult, SensitivityRow, TfdParams};
use platoon_fd_core::trajectory::DriverMode;
use platoon_fd_core::units;
use thiserror::Error;

/// Problems reading or writing a table.
#[derive(Debug, Error)]
pub enum TableError {
    /// File unreadable or unwritable.
    #[error("{}: unreadable", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// CSV-level failure (the source carries the record location).
    #[error("{}: malformed CSV", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    /// The header lacks a required column.
    #[error("{}: missing column `{column}`", path.display())]
    MissingColumn { path: PathBuf, column: String },
    /// A cell does not parse as the expected type.
    #[error("{}:{line}: column `{column}`: cannot parse `{value}`", path.display())]
    InvalidCell { path: PathBuf, line: u64, column: String, value: String },
    /// The file holds no data rows.
    #[error("{}: no data rows", path.display())]
    Empty { path: PathBuf },
    /// Rows contradict each other or a type invariant.
    #[error("{}: {reason}", path.display())]
    Inconsistent { path: PathBuf, reason: String },
    /// The header matches no known table layout.
    #[error("{}: unrecognized table header `{header}`", path.display())]
    UnknownKind { path: PathBuf, header: String },
}

/// Comment block stamped on every output CSV.
pub fn comment_header(config: &str) -> String {
    format!("# platoon-fd {}\n# config: {}\n", env!("CARGO_PKG_VERSION"), config)
}

/// Quote a field if it holds a separator, quote, or line break.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>, TableError> {
    let file = File::open(path).map_err(|source| TableError::Io { path: path.into(), source })?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file))
}

struct Columns {
    path: PathBuf,
    indices: Vec<usize>,
    names: Vec<&'static str>,
}

impl Columns {
    fn resolve(
        path: &Path,
        headers: &csv::StringRecord,
        names: &[&'static str],
    ) -> Result<Self, TableError> {
        let indices = names
            .iter()
            .map(|wanted| {
                headers.iter().position(|h| h == *wanted).ok_or_else(|| {
                    TableError::MissingColumn { path: path.into(), column: wanted.to_string() }
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Columns { path: path.into(), indices, names: names.to_vec() })
    }

    fn text<'r>(&self, record: &'r csv::StringRecord, col: usize) -> &'r str {
        record.get(self.indices[col]).unwrap_or("")
    }

    fn f64(&self, record: &csv::StringRecord, col: usize) -> Result<f64, TableError> {
        let raw = self.text(record, col);
        raw.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| self.bad_cell(record, col))
    }

    fn usize(&self, record: &csv::StringRecord, col: usize) -> Result<usize, TableError> {
        self.text(record, col).parse().map_err(|_| self.bad_cell(record, col))
    }

    fn mode(&self, record: &csv::StringRecord, col: usize) -> Result<DriverMode, TableError> {
        self.text(record, col).parse().map_err(|_| self.bad_cell(record, col))
    }

    fn bad_cell(&self, record: &csv::StringRecord, col: usize) -> TableError {
        TableError::InvalidCell {
            path: self.path.clone(),
            line: record.position().map_or(0, |p| p.line()),
            column: self.names[col].to_string(),
            value: self.text(record, col).to_string(),
        }
    }
}

// ---------------------------------------------------------------------------
// Traffic states
// ---------------------------------------------------------------------------

const STATE_COLUMNS: [&str; 6] =
    ["t_s", "density_veh_km", "flow_veh_h", "speed_km_h", "dataset_id", "driver_mode"];

fn write_state_row<W: Write>(w: &mut W, s: &TrafficState) -> std::io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{}",
        s.t,
        units::density_to_veh_per_km(s.k),
        units::flow_to_veh_per_h(s.q),
        units::speed_to_kmh(s.v),
        csv_field(&s.dataset_id),
        s.driver_mode.as_str(),
    )
}

/// Write traffic states in reporting units, one row per state.
pub fn write_states<W: Write>(
    mut w: W,
    head: &str,
    states: &[TrafficState],
) -> std::io::Result<()> {
    w.write_all(head.as_bytes())?;
    writeln!(w, "{}", STATE_COLUMNS.join(","))?;
    for s in states {
        write_state_row(&mut w, s)?;
    }
    Ok(())
}

/// Read traffic states back into SI units.
pub fn read_states(path: &Path) -> Result<Vec<TrafficState>, TableError> {
    let mut reader = open_reader(path)?;
    let headers =
        reader.headers().map_err(|source| TableError::Csv { path: path.into(), source })?.clone();
    let cols = Columns::resolve(path, &headers, &STATE_COLUMNS)?;
    let mut ids: HashMap<String, Arc<str>> = HashMap::new();
    let mut states = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| TableError::Csv { path: path.into(), source })?;
        let id = cols.text(&record, 4);
        let dataset_id = ids
            .entry(id.to_string())
            .or_insert_with(|| Arc::from(id))
            .clone();
        states.push(TrafficState {
            t: cols.f64(&record, 0)?,
            k: units::density_to_veh_per_m(cols.f64(&record, 1)?),
            q: units::flow_to_veh_per_s(cols.f64(&record, 2)?),
            v: units::speed_to_mps(cols.f64(&record, 3)?),
            dataset_id,
            driver_mode: cols.mode(&record, 5)?,
        });
    }
    if states.is_empty() {
        return Err(TableError::Empty { path: path.into() });
    }
    Ok(states)
}

// ---------------------------------------------------------------------------
// Binned series
// ---------------------------------------------------------------------------

const BINNED_COLUMNS: [&str; 8] = [
    "driver_mode",
    "axis",
    "delta",
    "bin_index",
    "count",
    "k_mean_veh_km",
    "v_mean_km_h",
    "q_mean_veh_h",
];

/// Write a binned series in its canonical layout (already in reporting
/// units, so a write/read cycle is bit-exact).
pub fn write_binned<W: Write>(
    mut w: W,
    head: &str,
    series: &BinnedSeries,
) -> std::io::Result<()> {
    w.write_all(head.as_bytes())?;
    writeln!(w, "{}", BINNED_COLUMNS.join(","))?;
    for p in &series.points {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            series.driver_mode.as_str(),
            series.grid.axis.as_str(),
            series.grid.delta,
            p.bin_index,
            p.count,
            p.k_mean,
            p.v_mean,
            p.q_mean,
        )?;
    }
    Ok(())
}

fn parse_axis(text: &str) -> Option<BinAxis> {
    match text {
        "density" => Some(BinAxis::Density),
        "speed" => Some(BinAxis::Speed),
        _ => None,
    }
}

/// Read a canonical binned series. All rows must agree on mode, axis, and
/// bin width; bin indices must be unique.
pub fn read_binned(path: &Path) -> Result<BinnedSeries, TableError> {
    let mut reader = open_reader(path)?;
    let headers =
        reader.headers().map_err(|source| TableError::Csv { path: path.into(), source })?.clone();
    let cols = Columns::resolve(path, &headers, &BINNED_COLUMNS)?;

    let mut meta: Option<(DriverMode, BinAxis, f64)> = None;
    let mut points: Vec<BinnedPoint> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| TableError::Csv { path: path.into(), source })?;
        let mode = cols.mode(&record, 0)?;
        let axis = parse_axis(cols.text(&record, 1)).ok_or_else(|| cols.bad_cell(&record, 1))?;
        let delta = cols.f64(&record, 2)?;
        match meta {
            None => meta = Some((mode, axis, delta)),
            Some((m, a, d)) => {
                if m != mode || a != axis || d != delta {
                    return Err(TableError::Inconsistent {
                        path: path.into(),
                        reason: "rows disagree on driver_mode/axis/delta".into(),
                    });
                }
            }
        }
        points.push(BinnedPoint {
            bin_index: cols.usize(&record, 3)?,
            count: cols.usize(&record, 4)?,
            k_mean: cols.f64(&record, 5)?,
            v_mean: cols.f64(&record, 6)?,
            q_mean: cols.f64(&record, 7)?,
        });
    }
    let Some((driver_mode, axis, delta)) = meta else {
        return Err(TableError::Empty { path: path.into() });
    };
    points.sort_by_key(|p| p.bin_index);
    if points.windows(2).any(|w| w[0].bin_index == w[1].bin_index) {
        return Err(TableError::Inconsistent {
            path: path.into(),
            reason: "duplicate bin_index".into(),
        });
    }
    let num_bins = points.last().map_or(0, |p| p.bin_index + 1);
    Ok(BinnedSeries { grid: BinGrid { delta, num_bins, axis }, driver_mode, points })
}

// ---------------------------------------------------------------------------
// Plane projections (presentation-only)
// ---------------------------------------------------------------------------

/// The three fundamental-diagram planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    /// Flow over density (q–k).
    FlowDensity,
    /// Speed over density (v–k).
    SpeedDensity,
    /// Speed against flow (v–q).
    SpeedFlow,
}

impl Plane {
    /// File stem: `<mode>.<stem>.csv` / `<mode>.<stem>.svg`.
    pub fn stem(self) -> &'static str {
        match self {
            Plane::FlowDensity => "qk",
            Plane::SpeedDensity => "vk",
            Plane::SpeedFlow => "vq",
        }
    }

    fn columns(self) -> [&'static str; 2] {
        match self {
            Plane::FlowDensity => ["k_veh_km", "q_veh_h"],
            Plane::SpeedDensity => ["k_veh_km", "v_km_h"],
            Plane::SpeedFlow => ["v_km_h", "q_veh_h"],
        }
    }

    fn project(self, p: &BinnedPoint) -> (f64, f64) {
        match self {
            Plane::FlowDensity => (p.k_mean, p.q_mean),
            Plane::SpeedDensity => (p.k_mean, p.v_mean),
            Plane::SpeedFlow => (p.v_mean, p.q_mean),
        }
    }
}

/// Write one plane of a binned series as a lean two-column table.
pub fn write_plane<W: Write>(
    mut w: W,
    head: &str,
    series: &BinnedSeries,
    plane: Plane,
) -> std::io::Result<()> {
    w.write_all(head.as_bytes())?;
    let [x, y] = plane.columns();
    writeln!(w, "{x},{y},count")?;
    for p in &series.points {
        let (px, py) = plane.project(p);
        writeln!(w, "{px},{py},{}", p.count)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Calibrated parameters
// ---------------------------------------------------------------------------

/// One calibrated parameter set and the context it was fitted in.
#[derive(Debug, Clone)]
pub struct ParamsRow {
    pub driver_mode: DriverMode,
    /// Density bin width the fit ran on [veh/km].
    pub delta: f64,
    pub result: CalibrationResult,
}

const PARAMS_COLUMNS: [&str; 10] = [
    "driver_mode",
    "delta_veh_km",
    "v_f_km_h",
    "k_cr_veh_km",
    "k_jam_veh_km",
    "w_km_h",
    "capacity_veh_h",
    "objective",
    "evaluations",
    "converged",
];

fn params_fields(mode: DriverMode, delta: f64, r: &CalibrationResult) -> String {
    let p = &r.params;
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        mode.as_str(),
        delta,
        p.v_f(),
        p.k_cr(),
        p.k_jam(),
        p.w(),
        p.capacity(),
        r.objective_value,
        r.evaluations,
        r.converged,
    )
}

/// Write calibrated triangular parameters, one row per fit.
pub fn write_params<W: Write>(mut w: W, head: &str, rows: &[ParamsRow]) -> std::io::Result<()> {
    w.write_all(head.as_bytes())?;
    writeln!(w, "{}", PARAMS_COLUMNS.join(","))?;
    for row in rows {
        writeln!(w, "{}", params_fields(row.driver_mode, row.delta, &row.result))?;
    }
    Ok(())
}

/// Read calibrated parameters back; wave speed and capacity are recomputed
/// from the defining triple rather than trusted from the file.
pub fn read_params(path: &Path) -> Result<Vec<ParamsRow>, TableError> {
    let mut reader = open_reader(path)?;
    let headers =
        reader.headers().map_err(|source| TableError::Csv { path: path.into(), source })?.clone();
    let cols = Columns::resolve(path, &headers, &PARAMS_COLUMNS)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| TableError::Csv { path: path.into(), source })?;
        let params =
            TfdParams::new(cols.f64(&record, 2)?, cols.f64(&record, 3)?, cols.f64(&record, 4)?)
                .map_err(|e| TableError::Inconsistent {
                    path: path.into(),
                    reason: e.to_string(),
                })?;
        let converged = match cols.text(&record, 9) {
            "true" => true,
            "false" => false,
            _ => return Err(cols.bad_cell(&record, 9)),
        };
        rows.push(ParamsRow {
            driver_mode: cols.mode(&record, 0)?,
            delta: cols.f64(&record, 1)?,
            result: CalibrationResult {
                params,
                objective_value: cols.f64(&record, 7)?,
                evaluations: cols.usize(&record, 8)?,
                converged,
            },
        });
    }
    if rows.is_empty() {
        return Err(TableError::Empty { path: path.into() });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Sensitivity sweep
// ---------------------------------------------------------------------------

/// Write a bin-width sweep. Failed rows keep their δ and driver mode, put
/// the failure in `status`, and leave the numeric cells empty.
pub fn write_sensitivity<W: Write>(
    mut w: W,
    head: &str,
    rows: &[SensitivityRow],
) -> std::io::Result<()> {
    w.write_all(head.as_bytes())?;
    writeln!(w, "{},status", PARAMS_COLUMNS.join(","))?;
    for row in rows {
        let mode = row.driver_mode.map_or("", |m| m.as_str());
        match &row.outcome {
            Ok(result) => {
                let mode = row.driver_mode.expect("successful fit always has a mode");
                writeln!(w, "{},ok", params_fields(mode, row.delta, result))?;
            }
            Err(e) => {
                writeln!(w, "{},{},,,,,,,,,{}", mode, row.delta, csv_field(&e.to_string()))?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Segmentation reports
// ---------------------------------------------------------------------------

/// Write one row per segment with state-index and wall-clock extents.
pub fn write_segments<W: Write>(
    mut w: W,
    head: &str,
    segmentation: &Segmentation,
) -> std::io::Result<()> {
    w.write_all(head.as_bytes())?;
    writeln!(w, "segment,label,start_state,end_state,t_start_s,t_end_s,duration_s")?;
    let profile = &segmentation.profile;
    for (i, seg) in segmentation.segments.iter().enumerate() {
        let Segment { start, end, label } = *seg;
        let t_start = profile.time_at(start);
        let t_end = profile.time_at(end);
        writeln!(
            w,
            "{i},{},{start},{end},{t_start},{t_end},{}",
            label.as_str(),
            t_end - t_start,
        )?;
    }
    Ok(())
}

/// Write traffic states with their segment labels attached.
pub fn write_labeled_states<W: Write>(
    mut w: W,
    head: &str,
    labeled: &[LabeledState],
) -> std::io::Result<()> {
    w.write_all(head.as_bytes())?;
    writeln!(w, "{},label", STATE_COLUMNS.join(","))?;
    for ls in labeled {
        write_state_row_prefix(&mut w, &ls.state)?;
        writeln!(w, ",{}", ls.label.as_str())?;
    }
    Ok(())
}

fn write_state_row_prefix<W: Write>(w: &mut W, s: &TrafficState) -> std::io::Result<()> {
    write!(
        w,
        "{},{},{},{},{},{}",
        s.t,
        units::density_to_veh_per_km(s.k),
        units::flow_to_veh_per_h(s.q),
        units::speed_to_kmh(s.v),
        csv_field(&s.dataset_id),
        s.driver_mode.as_str(),
    )
}

/// Parse a segment label written by this module.
pub fn parse_label(text: &str) -> Option<SegmentLabel> {
    match text {
        "acceleration" => Some(SegmentLabel::Acceleration),
        "deceleration" => Some(SegmentLabel::Deceleration),
        "stable" => Some(SegmentLabel::Stable),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Header sniffing
// ---------------------------------------------------------------------------

/// What a CSV file holds, judged by its header row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    States,
    Binned,
    Params,
}

/// Identify a table by its header so commands can accept either raw states
/// or already-binned input.
pub fn sniff_kind(path: &Path) -> Result<FileKind, TableError> {
    let mut reader = open_reader(path)?;
    let headers =
        reader.headers().map_err(|source| TableError::Csv { path: path.into(), source })?;
    let mut iter = headers.iter();
    let kind = match (iter.next(), iter.next()) {
        (Some("t_s"), _) => Some(FileKind::States),
        (Some("driver_mode"), Some("axis")) => Some(FileKind::Binned),
        (Some("driver_mode"), Some("delta_veh_km")) => Some(FileKind::Params),
        _ => None,
    };
    kind.ok_or_else(|| TableError::UnknownKind {
        path: path.into(),
        header: headers.iter().collect::<Vec<_>>().join(","),
    })
}
