//! Instantaneous traffic states from consecutive platoon observations.
//!
//! Between two frames δt apart, the platoon spans a scalene trapezoid in
//! space–time: parallel vertical sides of height l_p(t) and l_p(t+δt) (the
//! *effective platoon length* — leader-to-last-follower distance plus a small
//! buffer), connected by the moving front and rear boundaries. Over that
//! region the generalized definitions collapse to closed forms:
//!
//! - area     |A| = (l_p(t) + l_p(t+δt)) / 2 · δt
//! - density  k   = N δt / |A| = 2N / (l_p(t) + l_p(t+δt))
//! - flow     q   = Σᵢ δxᵢ / |A|
//! - speed    v   = Σᵢ δxᵢ / (N δt)
//!
//! with N the number of platoon vehicles (leader included) and δxᵢ each
//! vehicle's displacement over the pair. The identity q = k·v holds by
//! construction.
//!
//! [`edie_generic`] evaluates the same definitions over an arbitrary convex
//! space–time polygon by exact segment clipping. It is the reference
//! implementation the trapezoid shortcut is tested against, and is also
//! useful for ad-hoc region studies.

use alloc::sync::Arc;
use alloc::vec::Vec;

use thiserror::Error;

use crate::trajectory::{DriverMode, PlatoonFrame, TrajectoryDataset, TrajectoryError};

/// One instantaneous (density, flow, speed) triple in SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficState {
    /// Time of the leading frame of the pair that produced this state [s].
    pub t: f64,
    /// Density [veh/m]; strictly positive.
    pub k: f64,
    /// Flow [veh/s]; non-negative, q = k·v.
    pub q: f64,
    /// Space-mean speed [m/s]; non-negative.
    pub v: f64,
    /// Recording the state came from.
    pub dataset_id: Arc<str>,
    /// Driver mode of that recording.
    pub driver_mode: DriverMode,
}

/// Recording identity stamped onto every emitted [`TrafficState`].
#[derive(Debug, Clone)]
pub struct StateOrigin {
    /// Recording identifier.
    pub dataset_id: Arc<str>,
    /// Driver mode of the recording.
    pub driver_mode: DriverMode,
}

impl StateOrigin {
    /// Origin taken from a dataset.
    pub fn of(ds: &TrajectoryDataset) -> Self {
        StateOrigin { dataset_id: ds.dataset_id_shared(), driver_mode: ds.driver_mode() }
    }

    /// Origin from raw parts.
    pub fn new(dataset_id: &str, driver_mode: DriverMode) -> Self {
        StateOrigin { dataset_id: Arc::from(dataset_id), driver_mode }
    }
}

/// What to do when one frame pair in a series fails to produce a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairPolicy {
    /// Stop at the first failing pair and return its error.
    #[default]
    Abort,
    /// Drop failing pairs, record them, and keep going.
    Skip,
}

/// Settings of the trapezoid estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// Buffer added to the leader-to-last-follower span [m]; roughly one
    /// vehicle length, so the region covers bodies rather than antennas.
    pub buffer: f64,
    /// Per-pair failure policy for [`estimate_series`].
    pub on_error: PairPolicy,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { buffer: 3.0, on_error: PairPolicy::Abort }
    }
}

/// Failures of the state estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    /// Effective platoon length came out non-positive.
    #[error("effective platoon length {length} m is not positive")]
    DegeneratePlatoon {
        /// The offending length [m].
        length: f64,
    },
    /// A quantity that must be strictly positive is not.
    #[error("{name} must be positive and finite, got {value}")]
    NonPositiveInput {
        /// Which input.
        name: &'static str,
        /// Its value.
        value: f64,
    },
    /// Buffer must be finite and non-negative.
    #[error("buffer must be finite and non-negative, got {value} m")]
    InvalidBuffer {
        /// The offending buffer [m].
        value: f64,
    },
    /// A vehicle moved backward between the two frames — corrupt data.
    #[error("vehicle {vehicle} moved backward by {dx} m between frames")]
    BackwardMotion {
        /// Vehicle index (0 = leader).
        vehicle: usize,
        /// Its (negative) displacement [m].
        dx: f64,
    },
    /// The two frames carry different vehicle counts.
    #[error("frame pair carries {left} vs {right} vehicles")]
    MismatchedFrames {
        /// Vehicles in the first frame.
        left: usize,
        /// Vehicles in the second frame.
        right: usize,
    },
    /// A platoon needs at least two vehicles.
    #[error("a platoon needs at least two vehicles, got {got}")]
    TooFewVehicles {
        /// Vehicles present.
        got: usize,
    },
    /// A polygon must be convex, finite, and of positive area.
    #[error("region polygon must be convex with positive area")]
    BadPolygon,
    /// The region intersects no trajectory at all.
    #[error("region does not intersect any trajectory")]
    EmptyRegion,
    /// The region touches trajectories only over zero total time, so the
    /// space-mean speed is undefined.
    #[error("region intersects trajectories over zero total time")]
    ZeroTime,
}

/// Effective platoon length of one frame: (leader position − last follower
/// position) + buffer. Assumes the frame satisfies the platoon ordering
/// invariant; validation is a separate concern.
pub fn effective_length(frame: &PlatoonFrame, cfg: &EstimatorConfig) -> Result<f64, EstimatorError> {
    if !cfg.buffer.is_finite() || cfg.buffer < 0.0 {
        return Err(EstimatorError::InvalidBuffer { value: cfg.buffer });
    }
    let (Some(first), Some(last)) = (frame.positions.first(), frame.positions.last()) else {
        return Err(EstimatorError::TooFewVehicles { got: 0 });
    };
    let length = (first - last) + cfg.buffer;
    if length <= 0.0 {
        return Err(EstimatorError::DegeneratePlatoon { length });
    }
    Ok(length)
}

/// The space–time region between two consecutive observations: a scalene
/// trapezoid with parallel sides l_p(t), l_p(t+δt) and width δt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeRegion {
    /// Effective platoon length at the first frame [m].
    pub lp_t: f64,
    /// Effective platoon length at the second frame [m].
    pub lp_next: f64,
    /// Time between the frames [s].
    pub dt: f64,
    area: f64,
}

impl SpaceTimeRegion {
    /// Build the region, requiring all three extents strictly positive.
    pub fn new(lp_t: f64, lp_next: f64, dt: f64) -> Result<Self, EstimatorError> {
        for (name, value) in [("lp_t", lp_t), ("lp_next", lp_next), ("dt", dt)] {
            if !value.is_finite() || value <= 0.0 {
                return Err(EstimatorError::NonPositiveInput { name, value });
            }
        }
        Ok(SpaceTimeRegion { lp_t, lp_next, dt, area: (lp_t + lp_next) / 2.0 * dt })
    }

    /// Trapezoid area |A| [m·s].
    pub fn area(&self) -> f64 {
        self.area
    }
}

/// Trapezoid area for lengths `lp_t`, `lp_next` [m] over `dt` [s].
pub fn region_area(lp_t: f64, lp_next: f64, dt: f64) -> Result<f64, EstimatorError> {
    SpaceTimeRegion::new(lp_t, lp_next, dt).map(|r| r.area())
}

/// Traffic state of one consecutive frame pair via the moving-trapezoid
/// closed forms (see module docs). Requires N ≥ 2 vehicles and forward
/// motion of every vehicle.
pub fn instantaneous_state(
    frame_t: &PlatoonFrame,
    frame_next: &PlatoonFrame,
    cfg: &EstimatorConfig,
    origin: &StateOrigin,
) -> Result<TrafficState, EstimatorError> {
    let n = frame_t.positions.len();
    if frame_next.positions.len() != n {
        return Err(EstimatorError::MismatchedFrames {
            left: n,
            right: frame_next.positions.len(),
        });
    }
    if n < 2 {
        return Err(EstimatorError::TooFewVehicles { got: n });
    }
    let dt = frame_next.t - frame_t.t;

    let lp_t = effective_length(frame_t, cfg)?;
    let lp_next = effective_length(frame_next, cfg)?;
    let region = SpaceTimeRegion::new(lp_t, lp_next, dt)?;

    let mut sum_dx = 0.0;
    for (vehicle, (x0, x1)) in frame_t.positions.iter().zip(&frame_next.positions).enumerate() {
        let dx = x1 - x0;
        if dx < 0.0 {
            return Err(EstimatorError::BackwardMotion { vehicle, dx });
        }
        sum_dx += dx;
    }

    let n_f = n as f64;
    let k = 2.0 * n_f / (lp_t + lp_next);
    let q = sum_dx / region.area();
    let v = sum_dx / (n_f * dt);

    Ok(TrafficState {
        t: frame_t.t,
        k,
        q,
        v,
        dataset_id: Arc::clone(&origin.dataset_id),
        driver_mode: origin.driver_mode,
    })
}

/// A frame pair that failed, with the index of its leading frame.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("frame pair {frame}: {error}")]
pub struct PairFailure {
    /// Index of the pair's leading frame.
    pub frame: usize,
    /// What went wrong.
    pub error: EstimatorError,
}

/// Failure of [`estimate_series`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    /// The dataset cannot produce any pair.
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    /// A frame pair failed under [`PairPolicy::Abort`].
    #[error(transparent)]
    Pair(#[from] PairFailure),
}

/// A full series of states plus the pairs that were skipped (non-empty only
/// under [`PairPolicy::Skip`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesEstimate {
    /// One state per surviving frame pair, in time order.
    pub states: Vec<TrafficState>,
    /// Pairs dropped by the skip policy.
    pub skipped: Vec<PairFailure>,
}

/// Estimate one [`TrafficState`] per consecutive frame pair of the dataset.
///
/// With `cfg.on_error == PairPolicy::Abort` the first failing pair aborts the
/// series; with `PairPolicy::Skip` failing pairs are recorded in
/// [`SeriesEstimate::skipped`] and the remaining states returned. Either way
/// a fully clean dataset yields exactly `num_frames() − 1` states.
pub fn estimate_series(
    ds: &TrajectoryDataset,
    cfg: &EstimatorConfig,
) -> Result<SeriesEstimate, SeriesError> {
    let origin = StateOrigin::of(ds);
    let pairs = ds.frame_pairs()?;
    let mut states = Vec::with_capacity(ds.num_frames() - 1);
    let mut skipped = Vec::new();

    for (i, (a, b)) in pairs.enumerate() {
        match instantaneous_state(a, b, cfg, &origin) {
            Ok(state) => states.push(state),
            Err(error) => {
                let failure = PairFailure { frame: i, error };
                match cfg.on_error {
                    PairPolicy::Abort => return Err(failure.into()),
                    PairPolicy::Skip => skipped.push(failure),
                }
            }
        }
    }

    Ok(SeriesEstimate { states, skipped })
}

/// Convex polygon in the (t, x) plane, vertices counter-clockwise.
///
/// Built either from explicit vertices ([`SpaceTimePolygon::new`], which
/// checks convexity and normalizes orientation) or as the trapezoid a frame
/// pair spans ([`SpaceTimePolygon::trapezoid`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimePolygon {
    /// (t [s], x [m]) vertices, counter-clockwise, no repeated closing vertex.
    verts: Vec<(f64, f64)>,
    area: f64,
}

impl SpaceTimePolygon {
    /// Validate a vertex list: at least 3 finite vertices, convex turn
    /// direction throughout (collinear runs allowed), positive area.
    /// Clockwise input is reversed to counter-clockwise.
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self, EstimatorError> {
        let mut verts = vertices;
        if verts.len() < 3 || verts.iter().any(|(t, x)| !t.is_finite() || !x.is_finite()) {
            return Err(EstimatorError::BadPolygon);
        }
        let signed = shoelace(&verts);
        if signed == 0.0 || !signed.is_finite() {
            return Err(EstimatorError::BadPolygon);
        }
        if signed < 0.0 {
            verts.reverse();
        }
        let area = crate::math::abs(signed);

        // Convexity: every turn must be left (≥ 0) once counter-clockwise.
        let n = verts.len();
        for i in 0..n {
            let a = verts[i];
            let b = verts[(i + 1) % n];
            let c = verts[(i + 2) % n];
            let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
            if cross < 0.0 {
                return Err(EstimatorError::BadPolygon);
            }
        }

        Ok(SpaceTimePolygon { verts, area })
    }

    /// The trapezoid [`instantaneous_state`] implicitly integrates over:
    /// time span [t, t+δt], vertical extent from (last follower − buffer/2)
    /// to (leader + buffer/2) at each end, edges linear in between. Its area
    /// equals `region_area` of the pair, and every vehicle stays inside for
    /// the full δt.
    pub fn trapezoid(
        frame_t: &PlatoonFrame,
        frame_next: &PlatoonFrame,
        cfg: &EstimatorConfig,
    ) -> Result<Self, EstimatorError> {
        if !cfg.buffer.is_finite() || cfg.buffer < 0.0 {
            return Err(EstimatorError::InvalidBuffer { value: cfg.buffer });
        }
        let n = frame_t.positions.len();
        if frame_next.positions.len() != n {
            return Err(EstimatorError::MismatchedFrames {
                left: n,
                right: frame_next.positions.len(),
            });
        }
        if n == 0 {
            return Err(EstimatorError::TooFewVehicles { got: 0 });
        }
        let half = cfg.buffer / 2.0;
        let (t0, t1) = (frame_t.t, frame_next.t);
        let top0 = frame_t.positions[0] + half;
        let bot0 = frame_t.positions[n - 1] - half;
        let top1 = frame_next.positions[0] + half;
        let bot1 = frame_next.positions[n - 1] - half;
        SpaceTimePolygon::new(alloc::vec![(t0, bot0), (t1, bot1), (t1, top1), (t0, top0)])
    }

    /// Polygon area |A| [m·s].
    pub fn area(&self) -> f64 {
        self.area
    }

    /// Vertices, counter-clockwise.
    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.verts
    }
}

/// Twice the signed area (shoelace); positive for counter-clockwise rings.
fn shoelace(verts: &[(f64, f64)]) -> f64 {
    let n = verts.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (t0, x0) = verts[i];
        let (t1, x1) = verts[(i + 1) % n];
        acc += t0 * x1 - t1 * x0;
    }
    acc / 2.0
}

/// Clip the parameter interval of the segment `p0 → p1` against the polygon
/// (Cyrus–Beck on closed half-planes). Returns the surviving `[s0, s1] ⊆
/// [0, 1]`, or None when the segment misses the polygon entirely.
fn clip_segment(poly: &SpaceTimePolygon, p0: (f64, f64), p1: (f64, f64)) -> Option<(f64, f64)> {
    let mut s_lo = 0.0f64;
    let mut s_hi = 1.0f64;
    let n = poly.verts.len();
    let d = (p1.0 - p0.0, p1.1 - p0.1);

    for i in 0..n {
        let a = poly.verts[i];
        let b = poly.verts[(i + 1) % n];
        // Inward normal of a counter-clockwise edge.
        let normal = (-(b.1 - a.1), b.0 - a.0);
        let offset = normal.0 * (p0.0 - a.0) + normal.1 * (p0.1 - a.1);
        let slope = normal.0 * d.0 + normal.1 * d.1;

        if slope == 0.0 {
            // Parallel to the edge: fully inside or fully outside it.
            if offset < 0.0 {
                return None;
            }
        } else {
            let s = -offset / slope;
            if slope > 0.0 {
                // Entering the half-plane.
                if s > s_lo {
                    s_lo = s;
                }
            } else {
                // Leaving the half-plane.
                if s < s_hi {
                    s_hi = s;
                }
            }
            if s_lo > s_hi {
                return None;
            }
        }
    }
    Some((s_lo, s_hi))
}

/// Generalized-definition state over an arbitrary convex region:
/// k = Σᵢ tᵢ / |A|, q = Σᵢ xᵢ / |A|, v = q / k, with tᵢ and xᵢ each
/// vehicle's time spent and distance traveled inside the region, from exact
/// clipping of the piecewise-linear trajectories.
pub fn edie_generic(
    region: &SpaceTimePolygon,
    ds: &TrajectoryDataset,
) -> Result<TrafficState, EstimatorError> {
    let frames = ds.frames();
    let mut total_time = 0.0f64;
    let mut total_dist = 0.0f64;
    let mut touched = false;

    for vehicle in 0..ds.num_vehicles() {
        for pair in frames.windows(2) {
            let p0 = (pair[0].t, pair[0].positions[vehicle]);
            let p1 = (pair[1].t, pair[1].positions[vehicle]);
            if let Some((s0, s1)) = clip_segment(region, p0, p1) {
                touched = true;
                let span = s1 - s0;
                total_time += span * (p1.0 - p0.0);
                total_dist += span * (p1.1 - p0.1);
            }
        }
    }

    if !touched {
        return Err(EstimatorError::EmptyRegion);
    }
    if total_time <= 0.0 {
        return Err(EstimatorError::ZeroTime);
    }

    let k = total_time / region.area();
    let q = total_dist / region.area();
    let v = q / k;

    // Representative timestamp: mean vertex time of the region.
    let t_mid = region.verts.iter().map(|(t, _)| t).sum::<f64>() / region.verts.len() as f64;

    Ok(TrafficState {
        t: t_mid,
        k,
        q,
        v,
        dataset_id: ds.dataset_id_shared(),
        driver_mode: ds.driver_mode(),
    })
}
