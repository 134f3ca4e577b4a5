//! Trajectory CSV ingestion: rows (long) or whole frames (wide) grouped and
//! validated into a [`TrajectoryDataset`], and the canonical serializer that
//! round-trips datasets bit-equal through the long format.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use platoon_fd_core::trajectory::{PlatoonFrame, TrajectoryDataset, TrajectoryError};
use thiserror::Error;

use crate::schema::{sidecar_path, ColumnMapping, SchemaError, Sidecar};

/// Problems turning a file into a dataset, tagged with where they happened.
#[derive(Debug, Error)]
pub enum IngestError {
    /// File unreadable or unwritable.
    #[error("{}: unreadable", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Sidecar missing or malformed.
    #[error(transparent)]
    Schema(#[from] SchemaError),
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
    /// A cell does not parse as a finite number.
    #[error("{}:{line}: column `{column}`: `{value}` is not a finite number", path.display())]
    InvalidNumber { path: PathBuf, line: u64, column: String, value: String },
    /// A row names a vehicle the sidecar does not list.
    #[error("{}:{line}: vehicle `{vehicle}` is not in the sidecar vehicle_order", path.display())]
    UnknownVehicle { path: PathBuf, line: u64, vehicle: String },
    /// Two rows cover the same vehicle at the same time.
    #[error("{}:{line}: duplicate observation of `{vehicle}` at t={t} s", path.display())]
    DuplicateObservation { path: PathBuf, line: u64, vehicle: String, t: f64 },
    /// A timestamp is missing a vehicle's observation.
    #[error("{}: frame at t={t} s is missing vehicle `{vehicle}`", path.display())]
    RaggedFrame { path: PathBuf, t: f64, vehicle: String },
    /// Frame spacing deviates from the sidecar rate by more than 1 ms.
    #[error("{}: frames at t={left} s and t={right} s are {got} s apart, expected {expected} s", path.display())]
    NonUniformSampling { path: PathBuf, left: f64, right: f64, got: f64, expected: f64 },
    /// The assembled frames violate a dataset invariant.
    #[error("{}: invalid dataset", path.display())]
    Dataset {
        path: PathBuf,
        #[source]
        source: TrajectoryError,
    },
    /// No data rows at all.
    #[error("{}: no observations", path.display())]
    EmptyFile { path: PathBuf },
}

/// Hard tolerance on frame spacing, matching the dataset invariant [s].
const SPACING_TOLERANCE: f64 = 1e-3;

/// Parse the trajectory file at `path`, reading its sidecar from
/// `<path>.meta`.
pub fn parse_trajectory_file(
    path: &Path,
    mapping: &ColumnMapping,
) -> Result<TrajectoryDataset, IngestError> {
    let sidecar = Sidecar::load(&sidecar_path(path))?;
    let file = File::open(path).map_err(|source| IngestError::Io { path: path.into(), source })?;
    parse_trajectory_reader(file, mapping, &sidecar, path)
}

/// One observation pulled out of the CSV.
struct Obs {
    line: u64,
    t: f64,
    vehicle: usize,
    position: f64,
    speed: Option<f64>,
}

/// Parse trajectory CSV content against an already-loaded sidecar. `path` is
/// used only in error messages.
pub fn parse_trajectory_reader<R: Read>(
    reader: R,
    mapping: &ColumnMapping,
    sidecar: &Sidecar,
    path: &Path,
) -> Result<TrajectoryDataset, IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = csv_reader
        .headers()
        .map_err(|source| IngestError::Csv { path: path.into(), source })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| {
        col(name).ok_or_else(|| IngestError::MissingColumn {
            path: path.into(),
            column: name.to_string(),
        })
    };

    let vehicle_index: HashMap<&str, usize> = sidecar
        .vehicle_order
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let n = sidecar.vehicle_order.len();

    let parse_cell = |record: &csv::StringRecord, idx: usize, name: &str| -> Result<f64, IngestError> {
        let raw = record.get(idx).unwrap_or("");
        let line = record.position().map_or(0, |p| p.line());
        let value: f64 = raw.parse().map_err(|_| IngestError::InvalidNumber {
            path: path.into(),
            line,
            column: name.to_string(),
            value: raw.to_string(),
        })?;
        if !value.is_finite() {
            return Err(IngestError::InvalidNumber {
                path: path.into(),
                line,
                column: name.to_string(),
                value: raw.to_string(),
            });
        }
        Ok(value)
    };

    // Flatten both formats to per-(time, vehicle) observations.
    let mut observations: Vec<Obs> = Vec::new();
    match mapping {
        ColumnMapping::Long { time, vehicle, position, speed } => {
            let time_idx = require(time)?;
            let vehicle_idx = require(vehicle)?;
            let position_idx = require(position)?;
            let speed_idx = col(speed);
            for record in csv_reader.records() {
                let record =
                    record.map_err(|source| IngestError::Csv { path: path.into(), source })?;
                let line = record.position().map_or(0, |p| p.line());
                let id = record.get(vehicle_idx).unwrap_or("");
                let Some(&v) = vehicle_index.get(id) else {
                    return Err(IngestError::UnknownVehicle {
                        path: path.into(),
                        line,
                        vehicle: id.to_string(),
                    });
                };
                observations.push(Obs {
                    line,
                    t: parse_cell(&record, time_idx, time)?,
                    vehicle: v,
                    position: parse_cell(&record, position_idx, position)?,
                    speed: match speed_idx {
                        Some(idx) => Some(parse_cell(&record, idx, speed)?),
                        None => None,
                    },
                });
            }
        }
        ColumnMapping::Wide { time } => {
            let time_idx = require(time)?;
            let pos_cols: Vec<(usize, usize)> = sidecar
                .vehicle_order
                .iter()
                .enumerate()
                .map(|(v, id)| Ok((v, require(&format!("pos_{id}"))?)))
                .collect::<Result<_, IngestError>>()?;
            // Speed columns are all-or-nothing: a partial set is malformed.
            let speed_names: Vec<String> =
                sidecar.vehicle_order.iter().map(|id| format!("speed_{id}")).collect();
            let present = speed_names.iter().filter(|name| col(name).is_some()).count();
            let speed_cols: Option<Vec<usize>> = if present == 0 {
                None
            } else {
                Some(
                    speed_names
                        .iter()
                        .map(|name| require(name))
                        .collect::<Result<_, IngestError>>()?,
                )
            };
            for record in csv_reader.records() {
                let record =
                    record.map_err(|source| IngestError::Csv { path: path.into(), source })?;
                let line = record.position().map_or(0, |p| p.line());
                let t = parse_cell(&record, time_idx, time)?;
                for &(v, idx) in &pos_cols {
                    observations.push(Obs {
                        line,
                        t,
                        vehicle: v,
                        position: parse_cell(&record, idx, &headers[idx])?,
                        speed: match &speed_cols {
                            Some(cols) => {
                                Some(parse_cell(&record, cols[v], &headers[cols[v]])?)
                            }
                            None => None,
                        },
                    });
                }
            }
        }
    }

    if observations.is_empty() {
        return Err(IngestError::EmptyFile { path: path.into() });
    }
    let with_speeds = observations[0].speed.is_some();

    // Group into frames by exact timestamp value, then order by time.
    struct FrameBuild {
        t: f64,
        positions: Vec<Option<f64>>,
        speeds: Vec<Option<f64>>,
    }
    let mut frame_of: HashMap<u64, usize> = HashMap::new();
    let mut builds: Vec<FrameBuild> = Vec::new();
    for obs in observations {
        let slot = *frame_of.entry(obs.t.to_bits()).or_insert_with(|| {
            builds.push(FrameBuild {
                t: obs.t,
                positions: vec![None; n],
                speeds: vec![None; n],
            });
            builds.len() - 1
        });
        let build = &mut builds[slot];
        if build.positions[obs.vehicle].is_some() {
            return Err(IngestError::DuplicateObservation {
                path: path.into(),
                line: obs.line,
                vehicle: sidecar.vehicle_order[obs.vehicle].clone(),
                t: obs.t,
            });
        }
        build.positions[obs.vehicle] = Some(obs.position);
        build.speeds[obs.vehicle] = obs.speed;
    }
    builds.sort_by(|a, b| a.t.total_cmp(&b.t));

    let expected_dt = 1.0 / sidecar.sample_hz;
    for pair in builds.windows(2) {
        let got = pair[1].t - pair[0].t;
        if (got - expected_dt).abs() > SPACING_TOLERANCE {
            return Err(IngestError::NonUniformSampling {
                path: path.into(),
                left: pair[0].t,
                right: pair[1].t,
                got,
                expected: expected_dt,
            });
        }
    }

    let mut frames = Vec::with_capacity(builds.len());
    for build in builds {
        let mut positions = Vec::with_capacity(n);
        let mut speeds = Vec::with_capacity(n);
        for (v, slot) in build.positions.iter().enumerate() {
            let Some(x) = slot else {
                return Err(IngestError::RaggedFrame {
                    path: path.into(),
                    t: build.t,
                    vehicle: sidecar.vehicle_order[v].clone(),
                });
            };
            positions.push(*x);
            if with_speeds {
                let Some(s) = build.speeds[v] else {
                    return Err(IngestError::RaggedFrame {
                        path: path.into(),
                        t: build.t,
                        vehicle: sidecar.vehicle_order[v].clone(),
                    });
                };
                speeds.push(s);
            }
        }
        frames.push(if with_speeds {
            PlatoonFrame::with_speeds(build.t, positions, speeds)
        } else {
            PlatoonFrame::new(build.t, positions)
        });
    }

    TrajectoryDataset::new(
        &sidecar.dataset_id,
        sidecar.driver_mode,
        sidecar.vehicle_order.clone(),
        expected_dt,
        frames,
    )
    .map_err(|source| IngestError::Dataset { path: path.into(), source })
}

/// Write a dataset in the canonical long format. Floats print in shortest
/// round-trip form, so re-parsing reproduces them bit-equal.
pub fn write_trajectory_csv<W: Write>(
    mut w: W,
    ds: &TrajectoryDataset,
) -> std::io::Result<()> {
    let with_speeds = ds.frames().iter().all(|f| f.speeds.is_some());
    if with_speeds {
        writeln!(w, "time_s,vehicle_id,position_m,speed_mps")?;
    } else {
        writeln!(w, "time_s,vehicle_id,position_m")?;
    }
    for frame in ds.frames() {
        for (v, id) in ds.vehicle_ids().iter().enumerate() {
            if with_speeds {
                let speeds = frame.speeds.as_ref().expect("checked above");
                writeln!(w, "{},{},{},{}", frame.t, id, frame.positions[v], speeds[v])?;
            } else {
                writeln!(w, "{},{},{}", frame.t, id, frame.positions[v])?;
            }
        }
    }
    Ok(())
}

/// Write `<dir>/<dataset_id>.csv` plus its `.meta` sidecar; returns both
/// paths. `sample_hz` is recorded as given so the sidecar round-trips the
/// exact acquisition rate rather than a reciprocal of the interval.
pub fn write_dataset(
    dir: &Path,
    ds: &TrajectoryDataset,
    sample_hz: f64,
) -> Result<(PathBuf, PathBuf), IngestError> {
    let csv_path = dir.join(format!("{}.csv", ds.dataset_id()));
    let file =
        File::create(&csv_path).map_err(|source| IngestError::Io { path: csv_path.clone(), source })?;
    write_trajectory_csv(BufWriter::new(file), ds)
        .map_err(|source| IngestError::Io { path: csv_path.clone(), source })?;

    let sidecar = Sidecar {
        dataset_id: ds.dataset_id().to_string(),
        driver_mode: ds.driver_mode(),
        vehicle_order: ds.vehicle_ids().to_vec(),
        sample_hz,
    };
    let meta_path = sidecar_path(&csv_path);
    std::fs::write(&meta_path, sidecar.to_text())
        .map_err(|source| IngestError::Io { path: meta_path.clone(), source })?;
    Ok((csv_path, meta_path))
}
