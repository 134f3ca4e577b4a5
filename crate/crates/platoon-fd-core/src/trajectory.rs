//! Canonical in-memory representation of a platoon trajectory recording:
//! an ordered list of vehicles (leader first) observed at a constant sampling
//! interval, plus the driver-mode metadata that downstream aggregation keys on.
//!
//! Construction enforces the *structural* invariants (uniform sampling,
//! complete frames, finite values, strictly increasing time). The *physical*
//! plausibility checks — platoon ordering, recorded-speed consistency — are
//! report-producing instead ([`validate_platoon`]), so that a suspicious file
//! can still be loaded and inspected.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

/// Hard limit on frame-spacing deviation from the nominal sample interval [s].
/// Beyond this the recording is treated as non-uniformly sampled and rejected.
pub const SAMPLING_TOLERANCE: f64 = 1e-3;

/// Spacing jitter below [`SAMPLING_TOLERANCE`] but above this threshold [s] is
/// accepted at construction and surfaced as a validation warning.
pub const SAMPLING_JITTER_WARNING: f64 = 1e-6;

/// Homogeneous platoon control category of one recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DriverMode {
    /// Human driving, no automation.
    Human,
    /// Adaptive cruise control, minimum headway setting.
    AccMin,
    /// Adaptive cruise control, medium headway setting.
    AccMed,
    /// Adaptive cruise control, maximum headway setting.
    AccMax,
    /// Cooperative (communicating) adaptive cruise control.
    Cacc,
}

impl DriverMode {
    /// All modes, in declaration order.
    pub const ALL: [DriverMode; 5] = [
        DriverMode::Human,
        DriverMode::AccMin,
        DriverMode::AccMed,
        DriverMode::AccMax,
        DriverMode::Cacc,
    ];

    /// Canonical lower-case identifier used in files and reports.
    pub fn as_str(self) -> &'static str {
        match self {
            DriverMode::Human => "human",
            DriverMode::AccMin => "acc_min",
            DriverMode::AccMed => "acc_med",
            DriverMode::AccMax => "acc_max",
            DriverMode::Cacc => "cacc",
        }
    }
}

impl fmt::Display for DriverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Error for a driver-mode string outside the closed set.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown driver mode `{0}`; expected one of human, acc_min, acc_med, acc_max, cacc")]
pub struct UnknownDriverMode(pub String);

impl FromStr for DriverMode {
    type Err = UnknownDriverMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_lowercase();
        match lower.as_str() {
            "human" => Ok(DriverMode::Human),
            "acc_min" => Ok(DriverMode::AccMin),
            "acc_med" => Ok(DriverMode::AccMed),
            "acc_max" => Ok(DriverMode::AccMax),
            "cacc" => Ok(DriverMode::Cacc),
            _ => Err(UnknownDriverMode(s.to_string())),
        }
    }
}

/// One synchronized observation of every vehicle in the platoon.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonFrame {
    /// Observation time [s].
    pub t: f64,
    /// Path coordinate of each vehicle's antenna [m], leader first.
    pub positions: Vec<f64>,
    /// Recorded speeds [m/s], same order as `positions`; optional because the
    /// estimator needs only positions.
    pub speeds: Option<Vec<f64>>,
}

impl PlatoonFrame {
    /// Frame without recorded speeds.
    pub fn new(t: f64, positions: Vec<f64>) -> Self {
        PlatoonFrame { t, positions, speeds: None }
    }

    /// Frame with recorded speeds.
    pub fn with_speeds(t: f64, positions: Vec<f64>, speeds: Vec<f64>) -> Self {
        PlatoonFrame { t, positions, speeds: Some(speeds) }
    }
}

/// Structural defects that make a recording unusable.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    /// No frames at all.
    #[error("dataset contains no frames")]
    Empty,
    /// No vehicles listed.
    #[error("dataset lists no vehicles")]
    NoVehicles,
    /// The same vehicle id appears twice in the ordering.
    #[error("vehicle id `{id}` listed more than once")]
    DuplicateVehicle {
        /// Offending id.
        id: String,
    },
    /// Sample interval is not a positive finite number.
    #[error("sample interval must be positive and finite, got {0} s")]
    BadSampleInterval(f64),
    /// A frame does not carry one value per vehicle.
    #[error("frame {frame}: expected {expected} values per vehicle, got {got}")]
    RaggedFrame {
        /// Index of the offending frame.
        frame: usize,
        /// Vehicle count of the dataset.
        expected: usize,
        /// Values actually present.
        got: usize,
    },
    /// Frame times do not strictly increase.
    #[error("frame {frame}: time {t} s does not advance past {prev} s")]
    NonMonotonicTime {
        /// Index of the offending frame.
        frame: usize,
        /// Its timestamp [s].
        t: f64,
        /// Previous frame's timestamp [s].
        prev: f64,
    },
    /// Frame spacing deviates from the sample interval beyond
    /// [`SAMPLING_TOLERANCE`].
    #[error(
        "frame {frame}: spacing {actual} s deviates from sample interval {expected} s \
         beyond {SAMPLING_TOLERANCE} s"
    )]
    NonUniformSampling {
        /// Index of the offending frame.
        frame: usize,
        /// Nominal spacing [s].
        expected: f64,
        /// Observed spacing [s].
        actual: f64,
    },
    /// A time, position, or speed is NaN or infinite.
    #[error("frame {frame}: non-finite time, position, or speed")]
    NonFinite {
        /// Index of the offending frame.
        frame: usize,
    },
    /// An operation needs more frames than the dataset holds.
    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames {
        /// Minimum frame count for the operation.
        needed: usize,
        /// Frames actually present.
        got: usize,
    },
}

/// Time-aligned positions (and optional speeds) of an ordered N-vehicle
/// platoon, sampled at a constant interval.
///
/// Guarantees after construction:
/// - at least one frame and one vehicle; ids unique;
/// - every frame carries one position (and one speed, when speeds are
///   present) per vehicle;
/// - frame times strictly increase and consecutive spacing matches the
///   sample interval within [`SAMPLING_TOLERANCE`];
/// - all numeric values are finite.
///
/// Platoon ordering (leader strictly furthest along the path) is *not* a
/// construction requirement; see [`validate_platoon`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    dataset_id: Arc<str>,
    driver_mode: DriverMode,
    sample_interval: f64,
    vehicle_ids: Vec<String>,
    frames: Vec<PlatoonFrame>,
}

impl TrajectoryDataset {
    /// Validate and assemble a dataset.
    ///
    /// `sample_interval` is the nominal frame spacing [s] (from the
    /// acquisition rate); every observed spacing must match it within
    /// [`SAMPLING_TOLERANCE`].
    pub fn new(
        dataset_id: &str,
        driver_mode: DriverMode,
        vehicle_ids: Vec<String>,
        sample_interval: f64,
        frames: Vec<PlatoonFrame>,
    ) -> Result<Self, TrajectoryError> {
        if vehicle_ids.is_empty() {
            return Err(TrajectoryError::NoVehicles);
        }
        for (i, id) in vehicle_ids.iter().enumerate() {
            if vehicle_ids[..i].contains(id) {
                return Err(TrajectoryError::DuplicateVehicle { id: id.clone() });
            }
        }
        if !sample_interval.is_finite() || sample_interval <= 0.0 {
            return Err(TrajectoryError::BadSampleInterval(sample_interval));
        }
        if frames.is_empty() {
            return Err(TrajectoryError::Empty);
        }

        let n = vehicle_ids.len();
        for (i, frame) in frames.iter().enumerate() {
            if frame.positions.len() != n {
                return Err(TrajectoryError::RaggedFrame {
                    frame: i,
                    expected: n,
                    got: frame.positions.len(),
                });
            }
            if let Some(speeds) = &frame.speeds {
                if speeds.len() != n {
                    return Err(TrajectoryError::RaggedFrame {
                        frame: i,
                        expected: n,
                        got: speeds.len(),
                    });
                }
                if speeds.iter().any(|s| !s.is_finite()) {
                    return Err(TrajectoryError::NonFinite { frame: i });
                }
            }
            if !frame.t.is_finite() || frame.positions.iter().any(|x| !x.is_finite()) {
                return Err(TrajectoryError::NonFinite { frame: i });
            }
            if i > 0 {
                let prev = frames[i - 1].t;
                if frame.t <= prev {
                    return Err(TrajectoryError::NonMonotonicTime { frame: i, t: frame.t, prev });
                }
                let spacing = frame.t - prev;
                if crate::math::abs(spacing - sample_interval) > SAMPLING_TOLERANCE {
                    return Err(TrajectoryError::NonUniformSampling {
                        frame: i,
                        expected: sample_interval,
                        actual: spacing,
                    });
                }
            }
        }

        Ok(TrajectoryDataset {
            dataset_id: Arc::from(dataset_id),
            driver_mode,
            sample_interval,
            vehicle_ids,
            frames,
        })
    }

    /// Identifier of the recording campaign / run.
    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    /// Shared handle to the identifier, for cheap per-state tagging.
    pub fn dataset_id_shared(&self) -> Arc<str> {
        Arc::clone(&self.dataset_id)
    }

    /// Driver mode of the whole recording.
    pub fn driver_mode(&self) -> DriverMode {
        self.driver_mode
    }

    /// Nominal frame spacing δt [s].
    pub fn sample_interval(&self) -> f64 {
        self.sample_interval
    }

    /// Vehicle ids, leader first.
    pub fn vehicle_ids(&self) -> &[String] {
        &self.vehicle_ids
    }

    /// Number of vehicles N.
    pub fn num_vehicles(&self) -> usize {
        self.vehicle_ids.len()
    }

    /// All frames in time order.
    pub fn frames(&self) -> &[PlatoonFrame] {
        &self.frames
    }

    /// Number of frames.
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Iterator over consecutive frame pairs `(frame_t, frame_{t+δt})`;
    /// yields exactly `num_frames() - 1` pairs in time order.
    pub fn frame_pairs(
        &self,
    ) -> Result<impl Iterator<Item = (&PlatoonFrame, &PlatoonFrame)>, TrajectoryError> {
        if self.frames.len() < 2 {
            return Err(TrajectoryError::TooFewFrames { needed: 2, got: self.frames.len() });
        }
        Ok(self.frames.windows(2).map(|w| (&w[0], &w[1])))
    }
}

/// Tolerances for [`validate_platoon`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationConfig {
    /// Allowed gap between recorded speed and the finite-difference speed
    /// derived from positions [m/s].
    pub speed_tolerance: f64,
    /// Frame-spacing jitter above this threshold [s] is reported as a
    /// warning (spacing beyond [`SAMPLING_TOLERANCE`] never reaches
    /// validation — construction already rejects it).
    pub sampling_jitter: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { speed_tolerance: 0.5, sampling_jitter: SAMPLING_JITTER_WARNING }
    }
}

/// One rule violation found by [`validate_platoon`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    /// Frame the issue was observed in.
    pub frame: usize,
    /// Which rule was violated, with its evidence.
    pub rule: ValidationRule,
}

/// The rule behind a [`ValidationIssue`].
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationRule {
    /// A vehicle is not strictly behind its predecessor.
    OrderingViolation {
        /// Index (into the vehicle ordering) of the vehicle at fault.
        vehicle: usize,
        /// Predecessor's position [m].
        leader_position: f64,
        /// Offending vehicle's position [m].
        follower_position: f64,
    },
    /// Recorded speed disagrees with the finite-difference speed.
    SpeedMismatch {
        /// Vehicle index.
        vehicle: usize,
        /// Speed in the file [m/s].
        recorded: f64,
        /// Speed derived from positions [m/s].
        derived: f64,
    },
    /// Frame spacing deviates from the nominal interval (within the hard
    /// acceptance tolerance, above the jitter threshold).
    SamplingJitter {
        /// |spacing − δt| [s].
        deviation: f64,
    },
}

/// Outcome of [`validate_platoon`]: the dataset is accepted iff `errors` is
/// empty; `warnings` flag suspicious but tolerable data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    /// Violations of invariants downstream estimators rely on.
    pub errors: Vec<ValidationIssue>,
    /// Suspicious observations that do not block processing.
    pub warnings: Vec<ValidationIssue>,
}

impl ValidationReport {
    /// True when no errors were found.
    pub fn is_accepted(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Check platoon ordering and speed/position consistency.
///
/// Errors: every frame+vehicle where a vehicle is at or ahead of its
/// predecessor (the leader must be strictly furthest along the path).
/// Warnings: every frame+vehicle where the recorded speed deviates from the
/// position-derived finite-difference speed by more than
/// `cfg.speed_tolerance` (central differences inside, one-sided at the
/// ends), and every frame whose spacing jitter exceeds `cfg.sampling_jitter`.
pub fn validate_platoon(ds: &TrajectoryDataset, cfg: &ValidationConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    let frames = ds.frames();
    let dt = ds.sample_interval();

    for (fi, frame) in frames.iter().enumerate() {
        for v in 1..frame.positions.len() {
            let ahead = frame.positions[v - 1];
            let behind = frame.positions[v];
            if behind >= ahead {
                report.errors.push(ValidationIssue {
                    frame: fi,
                    rule: ValidationRule::OrderingViolation {
                        vehicle: v,
                        leader_position: ahead,
                        follower_position: behind,
                    },
                });
            }
        }

        if fi > 0 {
            let deviation = crate::math::abs(frame.t - frames[fi - 1].t - dt);
            if deviation > cfg.sampling_jitter {
                report.warnings.push(ValidationIssue {
                    frame: fi,
                    rule: ValidationRule::SamplingJitter { deviation },
                });
            }
        }

        let Some(speeds) = &frame.speeds else { continue };
        if frames.len() < 2 {
            continue;
        }
        for (v, &recorded) in speeds.iter().enumerate() {
            let derived = if fi == 0 {
                (frames[1].positions[v] - frames[0].positions[v]) / (frames[1].t - frames[0].t)
            } else if fi == frames.len() - 1 {
                (frame.positions[v] - frames[fi - 1].positions[v]) / (frame.t - frames[fi - 1].t)
            } else {
                (frames[fi + 1].positions[v] - frames[fi - 1].positions[v])
                    / (frames[fi + 1].t - frames[fi - 1].t)
            };
            if crate::math::abs(recorded - derived) > cfg.speed_tolerance {
                report.warnings.push(ValidationIssue {
                    frame: fi,
                    rule: ValidationRule::SpeedMismatch { vehicle: v, recorded, derived },
                });
            }
        }
    }

    report
}
