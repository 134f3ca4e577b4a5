//! Triangular fundamental diagram: evaluation, calibration, sensitivity.
//!
//! The triangular FD is a two-branch flow–density relation
//!
//! ```text
//! Q(k) = v_f · k                 for 0 ≤ k ≤ k_cr   (free flow)
//! Q(k) = w · (k_jam − k)         for k_cr ≤ k ≤ k_jam (congested)
//! ```
//!
//! with the congested wave speed pinned by apex continuity:
//! `w = v_f · k_cr / (k_jam − k_cr)`. All parameters live in reporting
//! units (km/h, veh/km); a parameter set is only constructible through
//! [`TfdParams::new`], so `w` always satisfies the identity exactly.
//!
//! Calibration fits `(v_f, k_cr, k_jam)` to a density-binned series by
//! minimizing the sum of two normalized RMSE terms — one on flows, one on
//! speeds — with a bounded Nelder–Mead simplex restarted from a
//! deterministic grid. Ties along under-determined directions (data that
//! never leaves the congested branch leaves `v_f` free above the apex
//! speed) are broken toward the lexicographically smallest parameters via
//! a bisection polish, so equal-quality fits resolve deterministically.

use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::aggregate::{self, AggregationError, BinAxis, BinnedSeries};
use crate::edie::TrafficState;
use crate::math::{abs, sqrt};
use crate::optim::{nelder_mead, NmOptions, NmOutcome};
use crate::trajectory::DriverMode;

/// Absolute slack when comparing two calibration objective values for a tie.
const TIE_ABS: f64 = 1e-8;
/// Relative slack (scaled by the better objective) for the same comparison.
const TIE_REL: f64 = 1e-6;

/// Calibration and FD-evaluation failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    /// Density lies outside the diagram's domain `[0, k_jam]`.
    #[error("density {k} veh/km outside the diagram domain [0, {k_jam}]")]
    OutOfDomain {
        /// Offending density [veh/km].
        k: f64,
        /// Domain upper edge [veh/km].
        k_jam: f64,
    },
    /// Apex and jam densities must satisfy `0 < k_cr < k_jam`.
    #[error("degenerate geometry: k_cr {k_cr} must lie strictly below k_jam {k_jam}")]
    DegenerateGeometry {
        /// Candidate critical density [veh/km].
        k_cr: f64,
        /// Candidate jam density [veh/km].
        k_jam: f64,
    },
    /// A parameter is non-finite or non-positive.
    #[error("{name} must be positive and finite, got {value}")]
    InvalidParameter {
        /// Which parameter.
        name: &'static str,
        /// Its value.
        value: f64,
    },
    /// Every binned flow (or speed) is zero, so the normalized objective
    /// is undefined.
    #[error("binned flows or speeds are all zero; normalized objective undefined")]
    ZeroMeanNormalizer,
    /// The objective needs a density-binned series.
    #[error("calibration needs a density-binned series, got a speed-binned one")]
    WrongAxis,
    /// The binned series has no points.
    #[error("binned series has no points")]
    EmptyBinned,
    /// Bounds must be finite, positive, and ordered `lb < ub` per component.
    #[error("bounds must be finite, positive, and lb < ub componentwise")]
    InvalidBounds,
    /// The box admits no geometry with `k_cr < k_jam`.
    #[error("infeasible bounds: k_cr lower bound {k_cr_lb} is not below k_jam upper bound {k_jam_ub}")]
    Infeasible {
        /// Lower bound on k_cr [veh/km].
        k_cr_lb: f64,
        /// Upper bound on k_jam [veh/km].
        k_jam_ub: f64,
    },
}

/// A calibrated (or candidate) triangular FD.
///
/// Constructible only through [`TfdParams::new`], which pins the wave speed
/// to the apex-continuity identity, so `w()` is always exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TfdParams {
    v_f: f64,
    k_cr: f64,
    k_jam: f64,
    w: f64,
}

impl TfdParams {
    /// Validate `(v_f, k_cr, k_jam)` and derive the wave speed.
    pub fn new(v_f: f64, k_cr: f64, k_jam: f64) -> Result<Self, CalibrationError> {
        for (name, value) in [("v_f", v_f), ("k_cr", k_cr), ("k_jam", k_jam)] {
            if !value.is_finite() || value <= 0.0 {
                return Err(CalibrationError::InvalidParameter { name, value });
            }
        }
        if k_cr >= k_jam {
            return Err(CalibrationError::DegenerateGeometry { k_cr, k_jam });
        }
        let w = v_f * k_cr / (k_jam - k_cr);
        Ok(TfdParams { v_f, k_cr, k_jam, w })
    }

    /// Free-flow speed [km/h].
    pub fn v_f(&self) -> f64 {
        self.v_f
    }

    /// Critical (apex) density [veh/km].
    pub fn k_cr(&self) -> f64 {
        self.k_cr
    }

    /// Jam density [veh/km].
    pub fn k_jam(&self) -> f64 {
        self.k_jam
    }

    /// Congested wave speed [km/h], `v_f·k_cr/(k_jam−k_cr)` exactly.
    pub fn w(&self) -> f64 {
        self.w
    }

    /// Capacity: the apex flow `v_f·k_cr` [veh/h].
    pub fn capacity(&self) -> f64 {
        self.v_f * self.k_cr
    }

    /// Flow at density `k` [veh/km]; see [`tfd_flow`].
    pub fn flow_at(&self, k: f64) -> Result<f64, CalibrationError> {
        tfd_flow(self, k)
    }

    /// Space-mean speed at density `k`: `Q(k)/k`, continued as `v_f` at 0.
    pub fn speed_at(&self, k: f64) -> Result<f64, CalibrationError> {
        let q = tfd_flow(self, k)?;
        Ok(if k == 0.0 { self.v_f } else { q / k })
    }
}

/// Triangular flow at density `k` [veh/km] → [veh/h].
///
/// Densities outside `[0, k_jam]` are out of the diagram's domain.
pub fn tfd_flow(params: &TfdParams, k: f64) -> Result<f64, CalibrationError> {
    if !k.is_finite() || k < 0.0 || k > params.k_jam {
        return Err(CalibrationError::OutOfDomain { k, k_jam: params.k_jam });
    }
    Ok(if k <= params.k_cr { params.v_f * k } else { params.w * (params.k_jam - k) })
}

/// Congested wave speed from raw parameters: `v_f·k_cr/(k_jam−k_cr)`.
pub fn wave_speed(v_f: f64, k_cr: f64, k_jam: f64) -> Result<f64, CalibrationError> {
    Ok(TfdParams::new(v_f, k_cr, k_jam)?.w)
}

/// Triangular flow as both branches' lower envelope:
/// `min(v_f·k, w·(k_jam−k))`. Identical to the piecewise form on
/// `[0, k_jam]`; beyond `k_jam` it continues the congested line into
/// negative flows, which penalizes candidates whose jam density undershoots
/// the data instead of rejecting them.
fn envelope_flow(v_f: f64, k_cr: f64, k_jam: f64, k: f64) -> f64 {
    let w = v_f * k_cr / (k_jam - k_cr);
    (v_f * k).min(w * (k_jam - k))
}

/// Goodness-of-fit of a candidate triangle against a density-binned series:
/// flow RMSE over the binned points normalized by the mean binned flow,
/// plus speed RMSE normalized by the mean binned speed. Zero iff the
/// triangle passes through every binned point; dimensionless.
pub fn objective(
    v_f: f64,
    k_cr: f64,
    k_jam: f64,
    binned: &BinnedSeries,
) -> Result<f64, CalibrationError> {
    for (name, value) in [("v_f", v_f), ("k_cr", k_cr), ("k_jam", k_jam)] {
        if !value.is_finite() || value <= 0.0 {
            return Err(CalibrationError::InvalidParameter { name, value });
        }
    }
    if k_cr >= k_jam {
        return Err(CalibrationError::DegenerateGeometry { k_cr, k_jam });
    }
    let (mean_q, mean_v) = objective_normalizers(binned)?;

    let m = binned.points.len() as f64;
    let mut sq_q = 0.0;
    let mut sq_v = 0.0;
    for p in &binned.points {
        if p.k_mean <= 0.0 {
            return Err(CalibrationError::OutOfDomain { k: p.k_mean, k_jam });
        }
        let q_model = envelope_flow(v_f, k_cr, k_jam, p.k_mean);
        let v_model = q_model / p.k_mean;
        sq_q += (p.q_mean - q_model) * (p.q_mean - q_model);
        sq_v += (p.v_mean - v_model) * (p.v_mean - v_model);
    }
    Ok(sqrt(sq_q / m) / mean_q + sqrt(sq_v / m) / mean_v)
}

/// Mean binned flow and speed; errors that make the objective undefined.
fn objective_normalizers(binned: &BinnedSeries) -> Result<(f64, f64), CalibrationError> {
    if binned.grid.axis != BinAxis::Density {
        return Err(CalibrationError::WrongAxis);
    }
    if binned.points.is_empty() {
        return Err(CalibrationError::EmptyBinned);
    }
    let m = binned.points.len() as f64;
    let mean_q = binned.points.iter().map(|p| p.q_mean).sum::<f64>() / m;
    let mean_v = binned.points.iter().map(|p| p.v_mean).sum::<f64>() / m;
    if mean_q <= 0.0 || mean_v <= 0.0 {
        return Err(CalibrationError::ZeroMeanNormalizer);
    }
    Ok((mean_q, mean_v))
}

/// Componentwise search box over `(v_f, k_cr, k_jam)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    /// Lower corner `(v_f, k_cr, k_jam)` in (km/h, veh/km, veh/km).
    pub lb: [f64; 3],
    /// Upper corner, same order and units.
    pub ub: [f64; 3],
}

impl Default for ParamBounds {
    /// Wide box covering passenger-car motorway traffic.
    fn default() -> Self {
        ParamBounds { lb: [60.0, 5.0, 60.0], ub: [160.0, 60.0, 250.0] }
    }
}

impl ParamBounds {
    /// Check finiteness, positivity, and componentwise `lb < ub`.
    pub fn validate(&self) -> Result<(), CalibrationError> {
        for i in 0..3 {
            let (lo, hi) = (self.lb[i], self.ub[i]);
            if !lo.is_finite() || !hi.is_finite() || lo <= 0.0 || lo >= hi {
                return Err(CalibrationError::InvalidBounds);
            }
        }
        Ok(())
    }
}

/// Search effort and determinism knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    /// Total objective-evaluation budget across restarts and polish.
    pub max_evaluations: usize,
    /// Number of restart points (a 3×3×3 grid, topped up randomly).
    pub restarts: usize,
    /// Seed for any randomly drawn extra restarts.
    pub seed: u64,
    /// Simplex objective-spread stopping tolerance.
    pub tolerance: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings { max_evaluations: 100_000, restarts: 27, seed: 0, tolerance: 1e-10 }
    }
}

/// A validated calibration instance: the data, the box, the effort.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProblem {
    binned: BinnedSeries,
    bounds: ParamBounds,
    settings: OptimizerSettings,
}

impl CalibrationProblem {
    /// Validate the pieces: density axis, non-empty, positive bin densities,
    /// well-formed bounds.
    pub fn new(
        binned: BinnedSeries,
        bounds: ParamBounds,
        settings: OptimizerSettings,
    ) -> Result<Self, CalibrationError> {
        bounds.validate()?;
        if binned.grid.axis != BinAxis::Density {
            return Err(CalibrationError::WrongAxis);
        }
        if binned.points.is_empty() {
            return Err(CalibrationError::EmptyBinned);
        }
        if let Some(p) = binned.points.iter().find(|p| p.k_mean <= 0.0) {
            return Err(CalibrationError::OutOfDomain { k: p.k_mean, k_jam: f64::INFINITY });
        }
        Ok(CalibrationProblem { binned, bounds, settings })
    }

    /// The series being fitted.
    pub fn binned(&self) -> &BinnedSeries {
        &self.binned
    }

    /// The search box.
    pub fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    /// The effort settings.
    pub fn settings(&self) -> &OptimizerSettings {
        &self.settings
    }
}

/// Outcome of a calibration run.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// Best parameters found (inside the box).
    pub params: TfdParams,
    /// Objective at `params` (dimensionless, ≥ 0).
    pub objective_value: f64,
    /// Objective evaluations spent.
    pub evaluations: usize,
    /// True when the simplex met its tolerances rather than running out of
    /// budget.
    pub converged: bool,
}

/// True when `a` precedes `b` in lexicographic `(v_f, k_cr, k_jam)` order.
fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for i in 0..a.len().min(b.len()) {
        if a[i] < b[i] {
            return true;
        }
        if a[i] > b[i] {
            return false;
        }
    }
    false
}

/// Penalized objective for the simplex: huge and sloped outside the
/// feasible wedge `k_cr < k_jam`, the real objective inside.
fn penalized(x: &[f64], binned: &BinnedSeries) -> f64 {
    if x[1] >= x[2] {
        return 1e9 + 1e6 * (x[1] - x[2]);
    }
    objective(x[0], x[1], x[2], binned).unwrap_or(f64::INFINITY)
}

/// Fit a triangular FD to the problem's binned series.
///
/// Deterministic: a fixed 3×3×3 fraction grid seeds the restarts (plus
/// seeded random extras when `restarts` exceeds the grid), and equal-quality
/// optima — equal within a tight tie window — resolve to the
/// lexicographically smallest `(v_f, k_cr, k_jam)`. A final bisection
/// lowers `v_f` as far as refitting `(k_cr, k_jam)` can hold the objective
/// inside the tie window, which collapses the one-parameter family of
/// perfect fits that purely congested data admits onto its apex; on data
/// that pins all three parameters it is a no-op.
pub fn calibrate(problem: &CalibrationProblem) -> Result<CalibrationResult, CalibrationError> {
    let bounds = &problem.bounds;
    let settings = &problem.settings;
    let binned = &problem.binned;

    if bounds.lb[1] >= bounds.ub[2] {
        return Err(CalibrationError::Infeasible {
            k_cr_lb: bounds.lb[1],
            k_jam_ub: bounds.ub[2],
        });
    }
    objective_normalizers(binned)?;

    let lb = bounds.lb;
    let ub = bounds.ub;
    let span = [ub[0] - lb[0], ub[1] - lb[1], ub[2] - lb[2]];

    // Deterministic restart points: 3×3×3 quartile grid, infeasible corners
    // dropped, randomly topped up past 27 if asked.
    let fracs = [0.25, 0.5, 0.75];
    let mut starts: Vec<[f64; 3]> = Vec::new();
    for &a in &fracs {
        for &b in &fracs {
            for &c in &fracs {
                let x = [lb[0] + a * span[0], lb[1] + b * span[1], lb[2] + c * span[2]];
                if x[1] < x[2] {
                    starts.push(x);
                }
            }
        }
    }
    let want = settings.restarts.max(1);
    starts.truncate(want);
    if starts.len() < want {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let mut tries = 0usize;
        while starts.len() < want && tries < 10_000 {
            tries += 1;
            let x = [
                lb[0] + rng.random_range(0.0..1.0) * span[0],
                lb[1] + rng.random_range(0.0..1.0) * span[1],
                lb[2] + rng.random_range(0.0..1.0) * span[2],
            ];
            if x[1] < x[2] {
                starts.push(x);
            }
        }
    }
    if starts.is_empty() {
        // lb[1] < ub[2] guarantees this wedge corner is feasible.
        starts.push([lb[0] + 0.5 * span[0], lb[1], ub[2]]);
    }

    let explore_cap = settings.max_evaluations.saturating_mul(3) / 4;
    let per_start = (explore_cap / starts.len()).max(60);
    let mut spent = 0usize;

    let nm_opts = |budget: usize| NmOptions {
        max_evals: budget,
        x_tol: 1e-8,
        f_tol: settings.tolerance,
    };

    let mut best: Option<NmOutcome> = None;
    for x0 in &starts {
        if spent >= explore_cap && best.is_some() {
            break;
        }
        let budget = per_start.min(explore_cap.saturating_sub(spent)).max(10);
        let out =
            nelder_mead(|x| penalized(x, binned), x0, &lb, &ub, &nm_opts(budget));
        spent += out.evals;
        best = Some(match best {
            None => out,
            Some(cur) => {
                let floor = cur.f.min(out.f);
                let tie = abs(cur.f - out.f) <= TIE_ABS + TIE_REL * abs(floor);
                if (tie && lex_less(&out.x, &cur.x)) || (!tie && out.f < cur.f) {
                    out
                } else {
                    cur
                }
            }
        });
    }
    let best = best.expect("at least one restart ran");

    // Lexicographic polish on v_f: bisect downward while a 2-D refit of
    // (k_cr, k_jam) keeps the objective inside the tie window.
    let window = best.f + TIE_ABS + TIE_REL * abs(best.f);
    let lb2 = [lb[1], lb[2]];
    let ub2 = [ub[1], ub[2]];
    let mut final_x = [best.x[0], best.x[1], best.x[2]];
    let mut final_f = best.f;
    let budget_cap = settings.max_evaluations;

    // 2-D refit of (k_cr, k_jam) at fixed v_f; Some iff it lands inside the
    // tie window. `incumbent` is the best full parameter vector so far; one
    // start transplants its congested line, which is the unique zero at the
    // new v_f whenever the data lie entirely on that line.
    let refit = |v_f: f64, incumbent: [f64; 3], spent: &mut usize| -> Option<([f64; 2], f64)> {
        let mut starts2: Vec<[f64; 2]> = Vec::new();
        let w_inc = incumbent[0] * incumbent[1] / (incumbent[2] - incumbent[1]);
        let warm_hi = ub2[0].min(incumbent[2] - 1e-9);
        if warm_hi >= lb2[0] {
            let k_cr_warm = (w_inc * incumbent[2] / (v_f + w_inc)).clamp(lb2[0], warm_hi);
            starts2.push([k_cr_warm, incumbent[2]]);
        }
        for cand in [
            [incumbent[1], incumbent[2]],
            [lb2[0] + 0.25 * (ub2[0] - lb2[0]), lb2[1] + 0.75 * (ub2[1] - lb2[1])],
            [lb2[0] + 0.5 * (ub2[0] - lb2[0]), lb2[1] + 0.5 * (ub2[1] - lb2[1])],
        ] {
            if cand[0] < cand[1]
                && cand[0] >= lb2[0]
                && cand[0] <= ub2[0]
                && cand[1] >= lb2[1]
                && cand[1] <= ub2[1]
            {
                starts2.push(cand);
            }
        }
        let mut found: Option<([f64; 2], f64)> = None;
        for y0 in &starts2 {
            if *spent >= budget_cap {
                break;
            }
            let budget = 800.min(budget_cap - *spent).max(10);
            let out = nelder_mead(
                |y| penalized(&[v_f, y[0], y[1]], binned),
                y0,
                &lb2,
                &ub2,
                &nm_opts(budget),
            );
            *spent += out.evals;
            let better = found.as_ref().map_or(true, |(_, f)| out.f < *f);
            if better {
                found = Some(([out.x[0], out.x[1]], out.f));
            }
            if found.as_ref().is_some_and(|(_, f)| *f <= window) {
                break; // good enough; keep the budget for later bisection steps
            }
        }
        found.filter(|(_, f)| *f <= window)
    };

    if final_x[0] > lb[0] && spent < budget_cap {
        if let Some((y, f)) = refit(lb[0], final_x, &mut spent) {
            final_x = [lb[0], y[0], y[1]];
            final_f = f;
        } else {
            let mut lo = lb[0]; // rejected floor
            let mut hi = final_x[0]; // accepted incumbent
            for _ in 0..60 {
                if hi - lo <= 1e-9 * span[0] || spent >= budget_cap {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                match refit(mid, final_x, &mut spent) {
                    Some((y, f)) => {
                        final_x = [mid, y[0], y[1]];
                        final_f = f;
                        hi = mid;
                    }
                    None => lo = mid,
                }
            }
        }
    }

    let params = TfdParams::new(final_x[0], final_x[1], final_x[2])?;
    Ok(CalibrationResult {
        params,
        objective_value: final_f,
        evaluations: spent,
        converged: best.converged,
    })
}

/// One row of a bin-width sensitivity sweep.
#[derive(Debug, Clone)]
pub struct SensitivityRow {
    /// Bin width δ this row was calibrated at [veh/km].
    pub delta: f64,
    /// Driver mode of the underlying states, when aggregation got far
    /// enough to know it.
    pub driver_mode: Option<DriverMode>,
    /// Calibration outcome at this δ.
    pub outcome: Result<CalibrationResult, SweepError>,
}

/// Why a sweep row failed.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    /// Binning the states failed.
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    /// Calibration on the binned series failed.
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

/// Calibrate once per bin width and report every row.
///
/// Each δ re-bins the raw states (binned data is never re-binned) and runs
/// the same bounded calibration. Rows with fewer than three occupied bins
/// cannot pin three parameters; they still report the fitted numbers but
/// are forced `converged = false`.
pub fn sensitivity_sweep(
    states: &[TrafficState],
    deltas: &[f64],
    bounds: ParamBounds,
    settings: OptimizerSettings,
) -> Vec<SensitivityRow> {
    deltas
        .iter()
        .map(|&delta| {
            let fallback_mode = states.first().map(|s| s.driver_mode);
            match aggregate::aggregate_by_density(states, delta) {
                Err(e) => SensitivityRow {
                    delta,
                    driver_mode: fallback_mode,
                    outcome: Err(SweepError::Aggregation(e)),
                },
                Ok(binned) => {
                    let driver_mode = Some(binned.driver_mode);
                    let underdetermined = binned.points.len() < 3;
                    let outcome = CalibrationProblem::new(binned, bounds, settings)
                        .and_then(|problem| calibrate(&problem))
                        .map(|mut result| {
                            if underdetermined {
                                result.converged = false;
                            }
                            result
                        })
                        .map_err(SweepError::Calibration);
                    SensitivityRow { delta, driver_mode, outcome }
                }
            }
        })
        .collect()
}
