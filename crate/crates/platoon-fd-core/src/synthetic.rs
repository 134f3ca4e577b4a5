//! Synthetic platoons with a fundamental diagram known in closed form.
//!
//! The generator drives a leader along a piecewise-linear speed cycle and
//! places each follower a constant-time-headway spacing behind its
//! predecessor, quasi-statically: at every instant the chain satisfies
//! `x_i = x_1 − (i−1)·s(V(t))` with `s(v) = s0 + T·v`, and every vehicle
//! records the cycle speed. Such a chain's flow–density relation is the
//! congested branch of a triangular FD exactly, so the whole estimation →
//! aggregation → calibration pipeline can be checked end to end against
//! algebra instead of against itself.
//!
//! Two closed forms are provided: [`analytic_fd`], the infinite-chain
//! diagram of the headway law itself (`k_jam = 1/s0`, `w = s0/T`), and
//! [`windowed_fd`], what a trapezoid estimator measuring a *finite*
//! platoon of N vehicles with a length buffer actually converges to — the
//! N−1 gaps plus the buffer replace N full spacings, which shifts jam
//! density and wave speed while leaving free-flow speed untouched. The two
//! agree in the large-N, zero-buffer limit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tfd::TfdParams;
use crate::trajectory::{DriverMode, PlatoonFrame, TrajectoryDataset, TrajectoryError};
use crate::units;

/// Generator failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SyntheticError {
    /// A law or derived-quantity parameter is out of range.
    #[error("{name} must be positive and finite, got {value}")]
    InvalidLaw {
        /// Which parameter.
        name: &'static str,
        /// Its value.
        value: f64,
    },
    /// A drive cycle needs at least two knots.
    #[error("drive cycle needs at least 2 knots, got {got}")]
    CycleTooShort {
        /// Knots supplied.
        got: usize,
    },
    /// Knot times must be strictly increasing.
    #[error("drive-cycle knot {index} is not after its predecessor")]
    UnorderedKnots {
        /// Offending knot index.
        index: usize,
    },
    /// A knot time or speed is non-finite, or a speed is negative.
    #[error("drive-cycle knot {index} has a non-finite time or invalid speed")]
    BadKnot {
        /// Offending knot index.
        index: usize,
    },
    /// The sampling rate must be positive and finite.
    #[error("sample rate must be positive and finite, got {0} Hz")]
    BadSampleRate(f64),
    /// A platoon needs a leader and at least one follower.
    #[error("need at least 2 vehicles, got {got}")]
    TooFewVehicles {
        /// Vehicles requested.
        got: usize,
    },
    /// Noise amplitude must be non-negative and finite.
    #[error("noise sigma must be non-negative and finite, got {value}")]
    BadNoise {
        /// The sigma supplied.
        value: f64,
    },
    /// The generated frames failed dataset validation (a generator bug if
    /// it ever fires).
    #[error(transparent)]
    Dataset(#[from] TrajectoryError),
}

/// Constant-time-headway car-following law: spacing `s(v) = s0 + T·v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadwayLaw {
    standstill_gap: f64,
    time_headway: f64,
}

impl HeadwayLaw {
    /// Validate `s0 > 0` [m] and `T > 0` [s].
    pub fn new(standstill_gap: f64, time_headway: f64) -> Result<Self, SyntheticError> {
        if !standstill_gap.is_finite() || standstill_gap <= 0.0 {
            return Err(SyntheticError::InvalidLaw {
                name: "standstill_gap",
                value: standstill_gap,
            });
        }
        if !time_headway.is_finite() || time_headway <= 0.0 {
            return Err(SyntheticError::InvalidLaw {
                name: "time_headway",
                value: time_headway,
            });
        }
        Ok(HeadwayLaw { standstill_gap, time_headway })
    }

    /// Standstill gap s0 [m].
    pub fn standstill_gap(&self) -> f64 {
        self.standstill_gap
    }

    /// Time headway T [s].
    pub fn time_headway(&self) -> f64 {
        self.time_headway
    }

    /// Spacing at speed `v` [m/s] → [m].
    pub fn spacing(&self, v: f64) -> f64 {
        self.standstill_gap + self.time_headway * v
    }

    /// Chain density at speed `v` [m/s] → [veh/m]; `1/s0` (jam) at rest.
    pub fn density_at(&self, v: f64) -> f64 {
        1.0 / self.spacing(v)
    }
}

/// Piecewise-linear speed-vs-time profile for the platoon leader.
///
/// Speeds interpolate linearly between knots and clamp to the end knots
/// outside the cycle; distance is the exact integral (piecewise quadratic).
#[derive(Debug, Clone, PartialEq)]
pub struct DriveCycle {
    knots: Vec<(f64, f64)>,
    cum_dist: Vec<f64>,
}

impl DriveCycle {
    /// Validate knots `(t, v)`: ≥ 2, strictly increasing times, finite
    /// non-negative speeds.
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, SyntheticError> {
        if knots.len() < 2 {
            return Err(SyntheticError::CycleTooShort { got: knots.len() });
        }
        for (index, &(t, v)) in knots.iter().enumerate() {
            if !t.is_finite() || !v.is_finite() || v < 0.0 {
                return Err(SyntheticError::BadKnot { index });
            }
            if index > 0 && t <= knots[index - 1].0 {
                return Err(SyntheticError::UnorderedKnots { index });
            }
        }
        let mut cum_dist = vec![0.0; knots.len()];
        for i in 1..knots.len() {
            let (t0, v0) = knots[i - 1];
            let (t1, v1) = knots[i];
            cum_dist[i] = cum_dist[i - 1] + 0.5 * (v0 + v1) * (t1 - t0);
        }
        Ok(DriveCycle { knots, cum_dist })
    }

    /// The validated knots.
    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Time of the first knot [s].
    pub fn start_time(&self) -> f64 {
        self.knots[0].0
    }

    /// Time of the last knot [s].
    pub fn end_time(&self) -> f64 {
        self.knots[self.knots.len() - 1].0
    }

    /// Cycle length [s].
    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Highest knot speed [m/s] — the cycle's free-flow ceiling.
    pub fn max_speed(&self) -> f64 {
        self.knots.iter().map(|&(_, v)| v).fold(0.0, f64::max)
    }

    /// Speed at time `t` [s], clamped to the end knots outside the cycle.
    pub fn speed_at(&self, t: f64) -> f64 {
        let knots = &self.knots;
        if t <= knots[0].0 {
            return knots[0].1;
        }
        let last = knots.len() - 1;
        if t >= knots[last].0 {
            return knots[last].1;
        }
        let i = knots.partition_point(|k| k.0 <= t) - 1;
        let (t0, v0) = knots[i];
        let (t1, v1) = knots[i + 1];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Distance traveled since the first knot [m]: the exact integral of
    /// the interpolated speed (constant-speed continuation past the end).
    pub fn distance_from_start(&self, t: f64) -> f64 {
        let knots = &self.knots;
        if t <= knots[0].0 {
            return 0.0;
        }
        let last = knots.len() - 1;
        if t >= knots[last].0 {
            return self.cum_dist[last] + knots[last].1 * (t - knots[last].0);
        }
        let i = knots.partition_point(|k| k.0 <= t) - 1;
        let (t0, v0) = knots[i];
        let (t1, v1) = knots[i + 1];
        let a = (v1 - v0) / (t1 - t0);
        let tau = t - t0;
        self.cum_dist[i] + v0 * tau + 0.5 * a * tau * tau
    }
}

/// Position-noise settings: zero-mean Gaussian jitter, applied to recorded
/// positions only (speeds stay clean), reproducible from the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Standard deviation of the position jitter [m].
    pub sigma: f64,
    /// RNG seed.
    pub seed: u64,
}

/// Generate the quasi-static chain dataset for a leader driving `cycle`.
///
/// Frames sample the cycle at `sample_hz`; every vehicle records the cycle
/// speed, the leader starts at x = 0 and integrates the cycle, and each
/// follower sits exactly one law-spacing behind its predecessor. Vehicles
/// are named `v1..vN`, leader first.
pub fn generate_platoon(
    cycle: &DriveCycle,
    law: &HeadwayLaw,
    n_vehicles: usize,
    sample_hz: f64,
    dataset_id: &str,
    driver_mode: DriverMode,
    noise: Option<&NoiseConfig>,
) -> Result<TrajectoryDataset, SyntheticError> {
    if n_vehicles < 2 {
        return Err(SyntheticError::TooFewVehicles { got: n_vehicles });
    }
    if !sample_hz.is_finite() || sample_hz <= 0.0 {
        return Err(SyntheticError::BadSampleRate(sample_hz));
    }
    let dt = 1.0 / sample_hz;
    let n_frames = (cycle.duration() / dt + 1e-9) as usize + 1;

    let mut jitter = match noise {
        None => None,
        Some(cfg) => {
            if !cfg.sigma.is_finite() || cfg.sigma < 0.0 {
                return Err(SyntheticError::BadNoise { value: cfg.sigma });
            }
            let normal = Normal::new(0.0, cfg.sigma)
                .map_err(|_| SyntheticError::BadNoise { value: cfg.sigma })?;
            Some((ChaCha8Rng::seed_from_u64(cfg.seed), normal))
        }
    };

    let t_start = cycle.start_time();
    let mut frames = Vec::with_capacity(n_frames);
    for j in 0..n_frames {
        let t = t_start + j as f64 * dt;
        let v = cycle.speed_at(t);
        let lead = cycle.distance_from_start(t);
        let spacing = law.spacing(v);
        let mut positions: Vec<f64> =
            (0..n_vehicles).map(|i| lead - i as f64 * spacing).collect();
        if let Some((rng, normal)) = jitter.as_mut() {
            for p in positions.iter_mut() {
                *p += normal.sample(rng);
            }
        }
        frames.push(PlatoonFrame::with_speeds(t, positions, vec![v; n_vehicles]));
    }

    let ids = (1..=n_vehicles).map(|i| format!("v{i}")).collect();
    Ok(TrajectoryDataset::new(dataset_id, driver_mode, ids, dt, frames)?)
}

/// The infinite-chain triangular FD of a headway law.
///
/// A chain obeying `s(v) = s0 + T·v` up to a free-flow speed `v_f` [m/s]
/// has `k_jam = 1/s0`, congested wave speed `w = s0/T`, and its apex where
/// the congested line meets `q = v_f·k`: `k_cr = 1/(s0 + T·v_f)`. Returned
/// in reporting units (km/h, veh/km).
pub fn analytic_fd(law: &HeadwayLaw, v_f_mps: f64) -> Result<TfdParams, SyntheticError> {
    if !v_f_mps.is_finite() || v_f_mps <= 0.0 {
        return Err(SyntheticError::InvalidLaw { name: "v_f", value: v_f_mps });
    }
    let v_f = units::speed_to_kmh(v_f_mps);
    let k_cr = units::density_to_veh_per_km(law.density_at(v_f_mps));
    let k_jam = units::density_to_veh_per_km(law.density_at(0.0));
    TfdParams::new(v_f, k_cr, k_jam)
        .map_err(|_| SyntheticError::InvalidLaw { name: "v_f", value: v_f_mps })
}

/// The triangular FD a trapezoid estimator measures on a *finite* platoon.
///
/// With N vehicles and a length buffer b, the platoon extent at common
/// speed v is the N−1 gaps plus the buffer, so the measured density is
/// `N / ((N−1)·s(v) + b)` — the chain law with effective coefficients
/// `s0' = ((N−1)·s0 + b)/N` and `T' = (N−1)·T/N`. Jam density and wave
/// speed shift accordingly (`k_jam' = 1/s0'`, `w' = s0'/T'`) while the
/// free-flow speed is untouched; as N → ∞ with b = 0 this collapses onto
/// [`analytic_fd`].
pub fn windowed_fd(
    law: &HeadwayLaw,
    v_f_mps: f64,
    n_vehicles: usize,
    buffer: f64,
) -> Result<TfdParams, SyntheticError> {
    if n_vehicles < 2 {
        return Err(SyntheticError::TooFewVehicles { got: n_vehicles });
    }
    if !buffer.is_finite() || buffer < 0.0 {
        return Err(SyntheticError::InvalidLaw { name: "buffer", value: buffer });
    }
    if !v_f_mps.is_finite() || v_f_mps <= 0.0 {
        return Err(SyntheticError::InvalidLaw { name: "v_f", value: v_f_mps });
    }
    let n = n_vehicles as f64;
    let s0_eff = ((n - 1.0) * law.standstill_gap + buffer) / n;
    let t_eff = (n - 1.0) * law.time_headway / n;
    let effective = HeadwayLaw::new(s0_eff, t_eff)?;
    analytic_fd(&effective, v_f_mps)
}
