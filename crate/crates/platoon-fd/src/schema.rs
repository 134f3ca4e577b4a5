//! Input schemas: how trajectory CSV columns map onto the canonical
//! (time, vehicle, position[, speed]) observation, and the sidecar metadata
//! file that names a dataset.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use platoon_fd_core::trajectory::DriverMode;
use thiserror::Error;

/// Canonical long-format column names.
pub const COL_TIME: &str = "time_s";
pub const COL_VEHICLE: &str = "vehicle_id";
pub const COL_POSITION: &str = "position_m";
pub const COL_SPEED: &str = "speed_mps";

/// How rows of a trajectory CSV map onto observations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnMapping {
    /// One row per (time, vehicle): a time column, a vehicle-id column, a
    /// position column, and optionally a speed column. Speeds are read when
    /// the named column exists and ignored otherwise.
    Long {
        /// Time column name [s].
        time: String,
        /// Vehicle-id column name.
        vehicle: String,
        /// Position column name [m].
        position: String,
        /// Speed column name [m/s]; read only if present in the header.
        speed: String,
    },
    /// One row per time: a time column plus one `pos_<id>` column per
    /// vehicle of the sidecar's `vehicle_order`, and optionally a matching
    /// full set of `speed_<id>` columns.
    Wide {
        /// Time column name [s].
        time: String,
    },
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping::Long {
            time: COL_TIME.into(),
            vehicle: COL_VEHICLE.into(),
            position: COL_POSITION.into(),
            speed: COL_SPEED.into(),
        }
    }
}

impl ColumnMapping {
    /// Mapping for a schema kind named on the command line.
    pub fn from_kind(kind: &str) -> Result<Self, SchemaError> {
        match kind {
            "long" => Ok(ColumnMapping::default()),
            "wide" => Ok(ColumnMapping::Wide { time: COL_TIME.into() }),
            other => Err(SchemaError::UnknownKind(other.to_string())),
        }
    }
}

/// Sidecar metadata accompanying a trajectory file at `<path>.meta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sidecar {
    /// Dataset identifier, used to name outputs.
    pub dataset_id: String,
    /// Driver mode of the whole platoon.
    pub driver_mode: DriverMode,
    /// Vehicle ids, leader first.
    pub vehicle_order: Vec<String>,
    /// Acquisition rate [Hz].
    pub sample_hz: f64,
}

/// Problems with a sidecar or schema selection.
#[derive(Debug, Error)]
pub enum SchemaError {
    /// Sidecar file unreadable.
    #[error("{}: cannot read sidecar", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A line is not `key = value`.
    #[error("{}:{line}: expected `key = value`, got `{text}`", path.display())]
    Malformed { path: PathBuf, line: usize, text: String },
    /// A required key is absent.
    #[error("{}: missing required key `{key}`", path.display())]
    MissingKey { path: PathBuf, key: &'static str },
    /// A key appears twice.
    #[error("{}:{line}: duplicate key `{key}`", path.display())]
    DuplicateKey { path: PathBuf, line: usize, key: String },
    /// A key this format does not define.
    #[error("{}:{line}: unknown key `{key}`", path.display())]
    UnknownKey { path: PathBuf, line: usize, key: String },
    /// driver_mode is not one of the closed set.
    #[error("{}: unknown driver mode `{value}` (expected human, acc_min, acc_med, acc_max or cacc)", path.display())]
    UnknownDriverMode { path: PathBuf, value: String },
    /// A value fails to parse or is out of range.
    #[error("{}: invalid value for `{key}`: `{value}`", path.display())]
    InvalidValue { path: PathBuf, key: &'static str, value: String },
    /// Schema kind other than `long`/`wide`.
    #[error("unknown schema `{0}` (expected `long` or `wide`)")]
    UnknownKind(String),
}

/// Path of the sidecar belonging to a data file: the data path plus `.meta`.
pub fn sidecar_path(data_path: &Path) -> PathBuf {
    let mut os = data_path.as_os_str().to_owned();
    os.push(".meta");
    PathBuf::from(os)
}

impl Sidecar {
    /// Load and parse a sidecar file.
    pub fn load(path: &Path) -> Result<Sidecar, SchemaError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SchemaError::Io { path: path.to_path_buf(), source })?;
        Sidecar::parse(&text, path)
    }

    /// Parse sidecar text; `path` is only for error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Sidecar, SchemaError> {
        let mut dataset_id: Option<String> = None;
        let mut driver_mode: Option<String> = None;
        let mut vehicle_order: Option<String> = None;
        let mut sample_hz: Option<String> = None;

        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(SchemaError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    text: line.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim().to_string();
            let slot = match key {
                "dataset_id" => &mut dataset_id,
                "driver_mode" => &mut driver_mode,
                "vehicle_order" => &mut vehicle_order,
                "sample_hz" => &mut sample_hz,
                _ => {
                    return Err(SchemaError::UnknownKey {
                        path: path.to_path_buf(),
                        line: i + 1,
                        key: key.to_string(),
                    });
                }
            };
            if slot.is_some() {
                return Err(SchemaError::DuplicateKey {
                    path: path.to_path_buf(),
                    line: i + 1,
                    key: key.to_string(),
                });
            }
            *slot = Some(value);
        }

        let need = |opt: Option<String>, key: &'static str| {
            opt.ok_or(SchemaError::MissingKey { path: path.to_path_buf(), key })
        };
        let dataset_id = need(dataset_id, "dataset_id")?;
        let mode_text = need(driver_mode, "driver_mode")?;
        let order_text = need(vehicle_order, "vehicle_order")?;
        let hz_text = need(sample_hz, "sample_hz")?;

        let driver_mode = DriverMode::from_str(&mode_text).map_err(|_| {
            SchemaError::UnknownDriverMode { path: path.to_path_buf(), value: mode_text }
        })?;
        let vehicle_order: Vec<String> = order_text
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if vehicle_order.is_empty() {
            return Err(SchemaError::InvalidValue {
                path: path.to_path_buf(),
                key: "vehicle_order",
                value: order_text,
            });
        }
        let sample_hz: f64 = hz_text.parse().map_err(|_| SchemaError::InvalidValue {
            path: path.to_path_buf(),
            key: "sample_hz",
            value: hz_text.clone(),
        })?;
        if !sample_hz.is_finite() || sample_hz <= 0.0 {
            return Err(SchemaError::InvalidValue {
                path: path.to_path_buf(),
                key: "sample_hz",
                value: hz_text,
            });
        }

        Ok(Sidecar { dataset_id, driver_mode, vehicle_order, sample_hz })
    }

    /// Serialize back to sidecar text (round-trips through [`Sidecar::parse`]).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset_id = {}", self.dataset_id);
        let _ = writeln!(out, "driver_mode = {}", self.driver_mode.as_str());
        let _ = writeln!(out, "vehicle_order = {}", self.vehicle_order.join(","));
        let _ = writeln!(out, "sample_hz = {}", self.sample_hz);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_sidecar() {
        let text = "# campaign notes\ndataset_id = run1\ndriver_mode = ACC_MIN\nvehicle_order = a, b ,c\nsample_hz = 10\n";
        let sc = Sidecar::parse(text, Path::new("x.csv.meta")).unwrap();
        assert_eq!(sc.dataset_id, "run1");
        assert_eq!(sc.driver_mode, DriverMode::AccMin);
        assert_eq!(sc.vehicle_order, vec!["a", "b", "c"]);
        assert_eq!(sc.sample_hz, 10.0);
    }

    #[test]
    fn round_trips_through_text() {
        let sc = Sidecar {
            dataset_id: "syn".into(),
            driver_mode: DriverMode::Cacc,
            vehicle_order: vec!["v1".into(), "v2".into()],
            sample_hz: 10.0,
        };
        let back = Sidecar::parse(&sc.to_text(), Path::new("m")).unwrap();
        assert_eq!(back, sc);
    }

    #[test]
    fn rejects_missing_and_bad_keys() {
        let err = Sidecar::parse("dataset_id = x\n", Path::new("m")).unwrap_err();
        assert!(matches!(err, SchemaError::MissingKey { key: "driver_mode", .. }));

        let err =
            Sidecar::parse("dataset_id=x\ndriver_mode=warp\nvehicle_order=a\nsample_hz=10", Path::new("m"))
                .unwrap_err();
        assert!(matches!(err, SchemaError::UnknownDriverMode { .. }));

        let err = Sidecar::parse("pilot = y\n", Path::new("m")).unwrap_err();
        assert!(matches!(err, SchemaError::UnknownKey { .. }));
    }

    #[test]
    fn sidecar_path_appends_meta() {
        assert_eq!(sidecar_path(Path::new("/d/run.csv")), PathBuf::from("/d/run.csv.meta"));
    }
}
