//! Bin-averaging of scattered instantaneous states onto single FD curves.
//!
//! States are grouped on one axis — density (for the q–k and v–k planes) or
//! speed (for the v–q plane) — into half-open bins `(i·δ, (i+1)·δ]`, and each
//! non-empty bin reports the arithmetic means of k, v, q over its members
//! plus the member count. Flow means are real means of member flows, never
//! k̄·v̄ (averaging does not commute with multiplication).
//!
//! Aggregation always re-reads raw states: re-binning already binned data
//! with a coarser grid would silently drop the member weights. It is also
//! strictly per driver mode — pooling modes is an error, not a fallback.
//!
//! Bin widths and binned values are in reporting units (veh/km, km/h,
//! veh/h); the SI → reporting conversion happens here, on entry.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use thiserror::Error;

use crate::edie::TrafficState;
use crate::trajectory::DriverMode;
use crate::units;

/// Which quantity spans the bin axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinAxis {
    /// Bin on density [veh/km] — the q–k / v–k backbone.
    Density,
    /// Bin on speed [km/h] — the v–q backbone.
    Speed,
}

impl BinAxis {
    /// Lower-case identifier used in file headers.
    pub fn as_str(self) -> &'static str {
        match self {
            BinAxis::Density => "density",
            BinAxis::Speed => "speed",
        }
    }
}

/// The discretization a binned series lives on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinGrid {
    /// Bin width δ, in veh/km (density axis) or km/h (speed axis).
    pub delta: f64,
    /// Number of bins spanned, i.e. highest occupied index + 1.
    pub num_bins: usize,
    /// Binning axis.
    pub axis: BinAxis,
}

/// Aggregation failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    /// Bin values and widths must be positive finite numbers.
    #[error("bin value must be positive and finite, got {value}")]
    NonPositiveValue {
        /// The offending value.
        value: f64,
    },
    /// No states to aggregate.
    #[error("no states to aggregate")]
    EmptyInput,
    /// States from different driver modes may not be pooled.
    #[error("states mix driver modes {first} and {second}")]
    MixedDriverModes {
        /// Mode seen first.
        first: DriverMode,
        /// Conflicting mode.
        second: DriverMode,
    },
    /// Accumulators on different grids cannot merge.
    #[error("accumulators use different grids (δ {left_delta} {left_axis} vs δ {right_delta} {right_axis})")]
    GridMismatch {
        /// δ of the left accumulator.
        left_delta: f64,
        /// Axis of the left accumulator.
        left_axis: &'static str,
        /// δ of the right accumulator.
        right_delta: f64,
        /// Axis of the right accumulator.
        right_axis: &'static str,
    },
}

/// Index of the half-open interval `(i·δ, (i+1)·δ]` containing `value`.
///
/// By convention an exact 0 lands in bin 0, so zero-speed (standstill)
/// states remain representable; negative or non-finite values are data
/// corruption and rejected, as is a non-positive `delta`.
pub fn bin_index(value: f64, delta: f64) -> Result<usize, AggregationError> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(AggregationError::NonPositiveValue { value: delta });
    }
    if !value.is_finite() || value < 0.0 {
        return Err(AggregationError::NonPositiveValue { value });
    }
    if value == 0.0 {
        return Ok(0);
    }
    // value ∈ (i·δ, (i+1)·δ] ⇔ i = ⌈value/δ⌉ − 1
    let ratio = crate::math::ceil(value / delta);
    Ok(if ratio <= 1.0 { 0 } else { (ratio - 1.0) as usize })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BinSums {
    k: f64,
    v: f64,
    q: f64,
    count: usize,
}

/// Streaming per-bin accumulator: the unit of (potential) parallelism.
/// Shard states arbitrarily, accumulate independently, [`merge`], then
/// [`finish`]. Merging equals single-pass accumulation up to floating-point
/// reassociation of the per-bin sums.
///
/// [`merge`]: BinAccumulator::merge
/// [`finish`]: BinAccumulator::finish
#[derive(Debug, Clone, PartialEq)]
pub struct BinAccumulator {
    delta: f64,
    axis: BinAxis,
    driver_mode: Option<DriverMode>,
    bins: BTreeMap<usize, BinSums>,
    total: usize,
}

impl BinAccumulator {
    /// Empty accumulator on the grid (δ in reporting units of the axis).
    pub fn new(delta: f64, axis: BinAxis) -> Result<Self, AggregationError> {
        if !delta.is_finite() || delta <= 0.0 {
            return Err(AggregationError::NonPositiveValue { value: delta });
        }
        Ok(BinAccumulator { delta, axis, driver_mode: None, bins: BTreeMap::new(), total: 0 })
    }

    /// Fold one state in. The first state pins the driver mode; any later
    /// deviation is an error.
    pub fn push(&mut self, state: &TrafficState) -> Result<(), AggregationError> {
        match self.driver_mode {
            None => self.driver_mode = Some(state.driver_mode),
            Some(mode) if mode != state.driver_mode => {
                return Err(AggregationError::MixedDriverModes {
                    first: mode,
                    second: state.driver_mode,
                });
            }
            Some(_) => {}
        }

        let k = units::density_to_veh_per_km(state.k);
        let v = units::speed_to_kmh(state.v);
        let q = units::flow_to_veh_per_h(state.q);
        let axis_value = match self.axis {
            BinAxis::Density => k,
            BinAxis::Speed => v,
        };
        let index = bin_index(axis_value, self.delta)?;

        let sums = self.bins.entry(index).or_default();
        sums.k += k;
        sums.v += v;
        sums.q += q;
        sums.count += 1;
        self.total += 1;
        Ok(())
    }

    /// Combine two shards: per-bin sums and counts add. Associative and
    /// commutative (exactly so for counts, up to fp reassociation for sums).
    pub fn merge(mut self, other: BinAccumulator) -> Result<BinAccumulator, AggregationError> {
        if self.delta != other.delta || self.axis != other.axis {
            return Err(AggregationError::GridMismatch {
                left_delta: self.delta,
                left_axis: self.axis.as_str(),
                right_delta: other.delta,
                right_axis: other.axis.as_str(),
            });
        }
        match (self.driver_mode, other.driver_mode) {
            (Some(a), Some(b)) if a != b => {
                return Err(AggregationError::MixedDriverModes { first: a, second: b });
            }
            (None, Some(b)) => self.driver_mode = Some(b),
            _ => {}
        }
        for (index, sums) in other.bins {
            let own = self.bins.entry(index).or_default();
            own.k += sums.k;
            own.v += sums.v;
            own.q += sums.q;
            own.count += sums.count;
        }
        self.total += other.total;
        Ok(self)
    }

    /// Number of states folded in so far.
    pub fn len(&self) -> usize {
        self.total
    }

    /// True when nothing has been folded in.
    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Close the accumulator into a [`BinnedSeries`]; empty input is an error.
    pub fn finish(self) -> Result<BinnedSeries, AggregationError> {
        let Some(driver_mode) = self.driver_mode else {
            return Err(AggregationError::EmptyInput);
        };
        let points: Vec<BinnedPoint> = self
            .bins
            .iter()
            .map(|(&bin_index, sums)| {
                let n = sums.count as f64;
                BinnedPoint {
                    bin_index,
                    k_mean: sums.k / n,
                    v_mean: sums.v / n,
                    q_mean: sums.q / n,
                    count: sums.count,
                }
            })
            .collect();
        let num_bins = points.last().map_or(0, |p| p.bin_index + 1);
        Ok(BinnedSeries {
            grid: BinGrid { delta: self.delta, num_bins, axis: self.axis },
            driver_mode,
            points,
        })
    }
}

/// One non-empty bin: arithmetic means over its members plus the count.
/// Units: veh/km, km/h, veh/h.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinnedPoint {
    /// Bin index i on the grid axis.
    pub bin_index: usize,
    /// Mean density of members [veh/km].
    pub k_mean: f64,
    /// Mean speed of members [km/h].
    pub v_mean: f64,
    /// Mean flow of members [veh/h] — a true mean, never k̄·v̄.
    pub q_mean: f64,
    /// Member count Tᵢ ≥ 1.
    pub count: usize,
}

/// Bin-averaged FD backbone: only non-empty bins, ascending by index, all
/// from one driver mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSeries {
    /// Grid the series lives on.
    pub grid: BinGrid,
    /// Driver mode all member states share.
    pub driver_mode: DriverMode,
    /// Non-empty bins, ascending by `bin_index`.
    pub points: Vec<BinnedPoint>,
}

impl BinnedSeries {
    /// Total member count across bins.
    pub fn total_count(&self) -> usize {
        self.points.iter().map(|p| p.count).sum()
    }
}

/// Bin states on density with width `delta_k` [veh/km].
pub fn aggregate_by_density(
    states: &[TrafficState],
    delta_k: f64,
) -> Result<BinnedSeries, AggregationError> {
    aggregate(states, delta_k, BinAxis::Density)
}

/// Bin states on speed with width `delta_v` [km/h].
pub fn aggregate_by_speed(
    states: &[TrafficState],
    delta_v: f64,
) -> Result<BinnedSeries, AggregationError> {
    aggregate(states, delta_v, BinAxis::Speed)
}

fn aggregate(
    states: &[TrafficState],
    delta: f64,
    axis: BinAxis,
) -> Result<BinnedSeries, AggregationError> {
    if states.is_empty() {
        return Err(AggregationError::EmptyInput);
    }
    let mut acc = BinAccumulator::new(delta, axis)?;
    for state in states {
        acc.push(state)?;
    }
    acc.finish()
}
