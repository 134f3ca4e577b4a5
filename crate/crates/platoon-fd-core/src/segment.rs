//! Acceleration / deceleration / stable segmentation of the platoon-mean
//! speed profile.
//!
//! The profile's topology is reduced with a persistence filter: every local
//! minimum is paired with the separating local maximum whose merge kills it
//! (classic sublevel-set union-find sweep; the global minimum survives with
//! infinite persistence), and pairs shallower than a threshold are dropped.
//! What remains is a strictly alternating min/max skeleton robust to noise.
//!
//! Between consecutive surviving extrema the profile is labeled
//! accelerating (min → max) or decelerating (max → min); the stretches
//! before the first and after the last extremum label by the extremum they
//! approach or leave. Independently, every maximal window whose speed range
//! stays within a band for long enough is marked stable, and stable marks
//! override the base labels. Segments are reported over *state* indices
//! (frame pairs): a profile of n samples yields segments partitioning
//! `[0, n−1)`, so segment i covers the state between samples i and i+1.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::edie::TrafficState;
use crate::trajectory::TrajectoryDataset;

/// Segmentation failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentationError {
    /// A profile (or the dataset behind it) needs at least two samples.
    #[error("need at least 2 samples to segment, got {got}")]
    TooFewFrames {
        /// Samples available.
        got: usize,
    },
    /// The sample interval must be positive and finite.
    #[error("sample interval must be positive and finite, got {0}")]
    NonPositiveInterval(f64),
    /// The profile start time must be finite.
    #[error("profile start time must be finite, got {0}")]
    NonFiniteStart(f64),
    /// A speed sample is NaN or infinite.
    #[error("speed at sample {index} is not finite")]
    NonFiniteSpeed {
        /// Offending sample index.
        index: usize,
    },
    /// A configuration knob is out of range.
    #[error("{name} must be non-negative and finite, got {value}")]
    InvalidConfig {
        /// Which knob.
        name: &'static str,
        /// Its value.
        value: f64,
    },
    /// Classification needs at least one extremum.
    #[error("no extrema to classify against")]
    NoExtrema,
    /// Extrema must be strictly ordered by index and lie inside the profile.
    #[error("extremum index {index} invalid for a profile of {len} samples")]
    ExtremumOutOfRange {
        /// Offending index.
        index: usize,
        /// Profile length.
        len: usize,
    },
    /// Adjacent extrema of the same kind cannot be labeled.
    #[error("extrema at samples {left} and {right} do not alternate")]
    NonAlternatingExtrema {
        /// Earlier extremum index.
        left: usize,
        /// Later extremum index.
        right: usize,
    },
    /// No segments supplied.
    #[error("no segments to label against")]
    NoSegments,
    /// States and segments disagree on how many states exist.
    #[error("segments cover {expected} states but {got} were supplied")]
    IndexMismatch {
        /// States the segments cover.
        expected: usize,
        /// States supplied.
        got: usize,
    },
}

/// Uniformly sampled platoon-mean speed profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfile {
    t0: f64,
    dt: f64,
    speeds: Vec<f64>,
}

impl SpeedProfile {
    /// Validate and wrap a profile: positive finite `dt`, ≥ 2 finite samples.
    pub fn new(t0: f64, dt: f64, speeds: Vec<f64>) -> Result<Self, SegmentationError> {
        if !t0.is_finite() {
            return Err(SegmentationError::NonFiniteStart(t0));
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(SegmentationError::NonPositiveInterval(dt));
        }
        if speeds.len() < 2 {
            return Err(SegmentationError::TooFewFrames { got: speeds.len() });
        }
        if let Some(index) = speeds.iter().position(|s| !s.is_finite()) {
            return Err(SegmentationError::NonFiniteSpeed { index });
        }
        Ok(SpeedProfile { t0, dt, speeds })
    }

    /// Time of the first sample [s].
    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Sample interval [s].
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The speed samples [m/s].
    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    /// Profiles are never empty (≥ 2 samples), so this is always false.
    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    /// Time of sample `i` [s].
    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }
}

/// Vehicle-mean speed per frame: the mean of recorded speeds when every
/// frame carries them, otherwise finite differences of the mean position
/// (central in the interior, one-sided at the ends).
pub fn mean_speed_profile(dataset: &TrajectoryDataset) -> Result<SpeedProfile, SegmentationError> {
    let frames = dataset.frames();
    if frames.len() < 2 {
        return Err(SegmentationError::TooFewFrames { got: frames.len() });
    }
    let n_veh = dataset.num_vehicles() as f64;
    let dt = dataset.sample_interval();

    let all_recorded = frames.iter().all(|f| f.speeds.is_some());
    let speeds: Vec<f64> = if all_recorded {
        frames
            .iter()
            .map(|f| f.speeds.as_ref().expect("checked").iter().sum::<f64>() / n_veh)
            .collect()
    } else {
        let mean_x: Vec<f64> =
            frames.iter().map(|f| f.positions.iter().sum::<f64>() / n_veh).collect();
        let n = mean_x.len();
        (0..n)
            .map(|i| {
                if i == 0 {
                    (mean_x[1] - mean_x[0]) / dt
                } else if i == n - 1 {
                    (mean_x[n - 1] - mean_x[n - 2]) / dt
                } else {
                    (mean_x[i + 1] - mean_x[i - 1]) / (2.0 * dt)
                }
            })
            .collect()
    };
    SpeedProfile::new(frames[0].t, dt, speeds)
}

/// Centered moving-average smoothing with the given window length [s].
///
/// The half-width rounds to whole samples; windows are clipped at the
/// profile ends. A window shorter than one sample interval is a no-op.
pub fn smooth_profile(
    profile: &SpeedProfile,
    window_s: f64,
) -> Result<SpeedProfile, SegmentationError> {
    if !window_s.is_finite() || window_s <= 0.0 {
        return Err(SegmentationError::InvalidConfig {
            name: "smooth_window",
            value: window_s,
        });
    }
    let half = crate::math::round(window_s / (2.0 * profile.dt)) as usize;
    if half == 0 {
        return Ok(profile.clone());
    }
    let n = profile.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, s) in profile.speeds.iter().enumerate() {
        prefix[i + 1] = prefix[i] + s;
    }
    let speeds = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect();
    SpeedProfile::new(profile.t0, profile.dt, speeds)
}

/// Is an extremum a valley or a peak?
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremumKind {
    /// Local minimum of the profile.
    Minimum,
    /// Local maximum of the profile.
    Maximum,
}

/// A surviving extremum of the persistence filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremum {
    /// Sample index in the profile.
    pub index: usize,
    /// Valley or peak.
    pub kind: ExtremumKind,
    /// Topological persistence [m/s]; the global minimum reports +∞.
    pub persistence: f64,
}

struct Dsu {
    parent: Vec<usize>,
    birth_value: Vec<f64>,
    birth_index: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
            birth_value: vec![0.0; n],
            birth_index: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]]; // path halving
            i = self.parent[i];
        }
        i
    }
}

/// Minima and maxima of the profile that survive persistence filtering,
/// sorted by sample index and strictly alternating in kind.
///
/// Sublevel-set sweep: samples activate in ascending (value, index) order;
/// when a sample bridges two active components the younger one (higher
/// birth value, later index on ties) dies there, pairing its minimum with
/// the bridging sample as a maximum at persistence `bridge − birth`. Pairs
/// below `min_persistence` are dropped; the global minimum always survives.
pub fn persistence_extrema(
    profile: &SpeedProfile,
    min_persistence: f64,
) -> Result<Vec<Extremum>, SegmentationError> {
    if !min_persistence.is_finite() || min_persistence < 0.0 {
        return Err(SegmentationError::InvalidConfig {
            name: "min_persistence",
            value: min_persistence,
        });
    }
    let v = &profile.speeds;
    let n = v.len();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        v[a].partial_cmp(&v[b]).expect("profile speeds are finite").then(a.cmp(&b))
    });

    let mut dsu = Dsu::new(n);
    let mut active = vec![false; n];
    // (min_index, max_index, persistence) per killed component
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();

    for &i in &order {
        active[i] = true;
        dsu.birth_value[i] = v[i];
        dsu.birth_index[i] = i;
        let left = i > 0 && active[i - 1];
        let right = i + 1 < n && active[i + 1];
        match (left, right) {
            (false, false) => {} // new component born at i
            (true, false) => {
                let r = dsu.find(i - 1);
                dsu.parent[i] = r;
            }
            (false, true) => {
                let r = dsu.find(i + 1);
                dsu.parent[i] = r;
            }
            (true, true) => {
                let rl = dsu.find(i - 1);
                let rr = dsu.find(i + 1);
                let older_is_left = dsu.birth_value[rl] < dsu.birth_value[rr]
                    || (dsu.birth_value[rl] == dsu.birth_value[rr]
                        && dsu.birth_index[rl] < dsu.birth_index[rr]);
                let (survivor, dying) = if older_is_left { (rl, rr) } else { (rr, rl) };
                pairs.push((dsu.birth_index[dying], i, v[i] - dsu.birth_value[dying]));
                dsu.parent[dying] = survivor;
                dsu.parent[i] = survivor;
            }
        }
    }

    let global_root = dsu.find(order[0]);
    let mut extrema = vec![Extremum {
        index: dsu.birth_index[global_root],
        kind: ExtremumKind::Minimum,
        persistence: f64::INFINITY,
    }];
    for (min_index, max_index, persistence) in pairs {
        if persistence >= min_persistence {
            extrema.push(Extremum { index: min_index, kind: ExtremumKind::Minimum, persistence });
            extrema.push(Extremum { index: max_index, kind: ExtremumKind::Maximum, persistence });
        }
    }
    extrema.sort_by_key(|e| e.index);
    debug_assert!(extrema
        .windows(2)
        .all(|w| w[0].index < w[1].index && w[0].kind != w[1].kind));
    Ok(extrema)
}

/// Driving regime of a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentLabel {
    /// Speed rising toward a peak.
    Acceleration,
    /// Speed falling toward a valley.
    Deceleration,
    /// Speed confined to a narrow band for a sustained stretch.
    Stable,
}

impl SegmentLabel {
    /// Lower-case identifier used in file output.
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentLabel::Acceleration => "acceleration",
            SegmentLabel::Deceleration => "deceleration",
            SegmentLabel::Stable => "stable",
        }
    }
}

/// A contiguous run of equally labeled states: state indices `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    /// First state index covered.
    pub start: usize,
    /// One past the last state index covered.
    pub end: usize,
    /// Regime of every state in the run.
    pub label: SegmentLabel,
}

/// Segmentation knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationConfig {
    /// Persistence threshold for extrema [m/s].
    pub min_persistence: f64,
    /// Speed range a stable window may span [m/s].
    pub stable_band: f64,
    /// Minimum stable-window duration [s].
    pub min_stable_duration: f64,
    /// Optional centered moving-average window [s] applied before analysis.
    pub smooth_window: Option<f64>,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            min_persistence: 1.0,
            stable_band: 0.5,
            min_stable_duration: 10.0,
            smooth_window: None,
        }
    }
}

impl SegmentationConfig {
    /// Check every knob is finite and in range.
    pub fn validate(&self) -> Result<(), SegmentationError> {
        for (name, value) in [
            ("min_persistence", self.min_persistence),
            ("stable_band", self.stable_band),
            ("min_stable_duration", self.min_stable_duration),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(SegmentationError::InvalidConfig { name, value });
            }
        }
        if let Some(w) = self.smooth_window {
            if !w.is_finite() || w <= 0.0 {
                return Err(SegmentationError::InvalidConfig {
                    name: "smooth_window",
                    value: w,
                });
            }
        }
        Ok(())
    }
}

/// Label every state (frame pair) of the profile.
///
/// Base labels come from the inter-extremum trend; then every maximal
/// window with speed range ≤ `stable_band` lasting ≥ `min_stable_duration`
/// overrides its states to stable, and equal-label runs merge. The result
/// partitions `[0, len−1)` — one label per state.
pub fn classify_segments(
    profile: &SpeedProfile,
    extrema: &[Extremum],
    config: &SegmentationConfig,
) -> Result<Vec<Segment>, SegmentationError> {
    config.validate()?;
    if extrema.is_empty() {
        return Err(SegmentationError::NoExtrema);
    }
    let n = profile.len();
    for e in extrema {
        if e.index >= n {
            return Err(SegmentationError::ExtremumOutOfRange { index: e.index, len: n });
        }
    }
    for w in extrema.windows(2) {
        if w[1].index <= w[0].index {
            return Err(SegmentationError::ExtremumOutOfRange { index: w[1].index, len: n });
        }
        if w[1].kind == w[0].kind {
            return Err(SegmentationError::NonAlternatingExtrema {
                left: w[0].index,
                right: w[1].index,
            });
        }
    }

    let n_states = n - 1;
    let mut labels: Vec<SegmentLabel> = Vec::with_capacity(n_states);

    let lead = match extrema[0].kind {
        ExtremumKind::Minimum => SegmentLabel::Deceleration,
        ExtremumKind::Maximum => SegmentLabel::Acceleration,
    };
    labels.resize(extrema[0].index.min(n_states), lead);
    for w in extrema.windows(2) {
        let label = match w[0].kind {
            ExtremumKind::Minimum => SegmentLabel::Acceleration,
            ExtremumKind::Maximum => SegmentLabel::Deceleration,
        };
        labels.resize(w[1].index.min(n_states), label);
    }
    let trail = match extrema.last().expect("non-empty").kind {
        ExtremumKind::Minimum => SegmentLabel::Acceleration,
        ExtremumKind::Maximum => SegmentLabel::Deceleration,
    };
    labels.resize(n_states, trail);

    // Stable windows over the whole profile: for each left edge the
    // farthest right edge keeping the range within the band (monotone
    // two-pointer with min/max deques), emitted only when inclusion-maximal
    // and long enough. A window over samples [l, r] covers states [l, r).
    let v = &profile.speeds;
    let band = config.stable_band;
    let min_dur = config.min_stable_duration;
    let mut stable = vec![false; n_states];
    let mut maxdq: VecDeque<usize> = VecDeque::new();
    let mut mindq: VecDeque<usize> = VecDeque::new();
    let mut r = 0usize; // exclusive frontier of the current window [l, r)
    let mut prev_r = 0usize;
    for l in 0..n {
        debug_assert!(r >= l);
        while r < n {
            let cand_max = maxdq.front().map_or(f64::NEG_INFINITY, |&j| v[j]).max(v[r]);
            let cand_min = mindq.front().map_or(f64::INFINITY, |&j| v[j]).min(v[r]);
            if cand_max - cand_min > band {
                break;
            }
            while maxdq.back().is_some_and(|&j| v[j] <= v[r]) {
                maxdq.pop_back();
            }
            maxdq.push_back(r);
            while mindq.back().is_some_and(|&j| v[j] >= v[r]) {
                mindq.pop_back();
            }
            mindq.push_back(r);
            r += 1;
        }
        let maximal = l == 0 || r > prev_r;
        if maximal && (r - 1 - l) as f64 * profile.dt >= min_dur {
            for s in stable.iter_mut().take(r - 1).skip(l) {
                *s = true;
            }
        }
        prev_r = r;
        if maxdq.front() == Some(&l) {
            maxdq.pop_front();
        }
        if mindq.front() == Some(&l) {
            mindq.pop_front();
        }
    }
    for (label, is_stable) in labels.iter_mut().zip(&stable) {
        if *is_stable {
            *label = SegmentLabel::Stable;
        }
    }

    let mut segments = Vec::new();
    let mut start = 0usize;
    for i in 1..=n_states {
        if i == n_states || labels[i] != labels[i - 1] {
            segments.push(Segment { start, end: i, label: labels[start] });
            start = i;
        }
    }
    Ok(segments)
}

/// A profile fully analyzed: what was segmented and how.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// The analyzed profile (smoothed when smoothing was configured).
    pub profile: SpeedProfile,
    /// Surviving extrema.
    pub extrema: Vec<Extremum>,
    /// Final state segmentation.
    pub segments: Vec<Segment>,
}

/// One-call pipeline: optional smoothing, persistence extrema, labeling.
pub fn segment_profile(
    profile: &SpeedProfile,
    config: &SegmentationConfig,
) -> Result<Segmentation, SegmentationError> {
    config.validate()?;
    let analyzed = match config.smooth_window {
        Some(w) => smooth_profile(profile, w)?,
        None => profile.clone(),
    };
    let extrema = persistence_extrema(&analyzed, config.min_persistence)?;
    let segments = classify_segments(&analyzed, &extrema, config)?;
    Ok(Segmentation { profile: analyzed, extrema, segments })
}

/// A traffic state tagged with the regime it was measured under.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledState {
    /// The state.
    pub state: TrafficState,
    /// Regime of the frame pair that produced it.
    pub label: SegmentLabel,
}

/// Attach segment labels to the state series the same dataset produced.
///
/// The i-th state comes from frame pair (i, i+1), so it takes the label of
/// state index i. The segments must cover exactly as many states as given.
pub fn states_by_segment(
    states: &[TrafficState],
    segments: &[Segment],
) -> Result<Vec<LabeledState>, SegmentationError> {
    if segments.is_empty() {
        return Err(SegmentationError::NoSegments);
    }
    let expected = segments.last().expect("non-empty").end - segments[0].start;
    if states.len() != expected {
        return Err(SegmentationError::IndexMismatch { expected, got: states.len() });
    }
    let mut labeled = Vec::with_capacity(states.len());
    let offset = segments[0].start;
    for segment in segments {
        for i in segment.start..segment.end {
            labeled.push(LabeledState {
                state: states[i - offset].clone(),
                label: segment.label,
            });
        }
    }
    Ok(labeled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::sync::Arc;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn profile(speeds: &[f64]) -> SpeedProfile {
        SpeedProfile::new(0.0, 0.1, speeds.to_vec()).unwrap()
    }

    fn kinds(extrema: &[Extremum]) -> Vec<(usize, ExtremumKind)> {
        extrema.iter().map(|e| (e.index, e.kind)).collect()
    }

    #[test]
    fn shallow_dip_is_filtered_by_persistence() {
        let p = profile(&[0.0, 10.0, 8.0, 9.0, 0.0]);
        // τ=3 keeps only the big hill; the 8→9 wiggle has persistence 1.
        let strict = persistence_extrema(&p, 3.0).unwrap();
        assert_eq!(
            kinds(&strict),
            vec![
                (0, ExtremumKind::Minimum),
                (1, ExtremumKind::Maximum),
                (4, ExtremumKind::Minimum)
            ]
        );
        assert_eq!(strict[1].persistence, 10.0);
        assert!(strict[0].persistence.is_infinite());

        // τ=0.5 keeps the wiggle too, still alternating.
        let loose = persistence_extrema(&p, 0.5).unwrap();
        assert_eq!(
            kinds(&loose),
            vec![
                (0, ExtremumKind::Minimum),
                (1, ExtremumKind::Maximum),
                (2, ExtremumKind::Minimum),
                (3, ExtremumKind::Maximum),
                (4, ExtremumKind::Minimum)
            ]
        );
        assert_eq!(loose[2].persistence, 1.0);
    }

    #[test]
    fn single_hill_pairs_peak_with_younger_valley() {
        let p = profile(&[0.0, 10.0, 0.0]);
        let extrema = persistence_extrema(&p, 1.0).unwrap();
        assert_eq!(
            kinds(&extrema),
            vec![
                (0, ExtremumKind::Minimum),
                (1, ExtremumKind::Maximum),
                (2, ExtremumKind::Minimum)
            ]
        );
        assert_eq!(extrema[1].persistence, 10.0);
        assert_eq!(extrema[2].persistence, 10.0);
    }

    #[test]
    fn monotone_ramp_keeps_only_the_global_minimum() {
        let speeds: Vec<f64> = (0..100).map(|i| i as f64 * 0.3).collect();
        let extrema = persistence_extrema(&profile(&speeds), 1.0).unwrap();
        assert_eq!(kinds(&extrema), vec![(0, ExtremumKind::Minimum)]);
    }

    #[test]
    fn plateau_peak_lands_on_its_right_edge() {
        let p = profile(&[0.0, 5.0, 5.0, 0.0]);
        let extrema = persistence_extrema(&p, 1.0).unwrap();
        assert_eq!(
            kinds(&extrema),
            vec![
                (0, ExtremumKind::Minimum),
                (2, ExtremumKind::Maximum),
                (3, ExtremumKind::Minimum)
            ]
        );
    }

    #[test]
    fn random_profiles_stay_alternating_with_one_infinite_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.random_range(2..120);
            let speeds: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..30.0)).collect();
            let tau = rng.random_range(0.0..5.0);
            let extrema = persistence_extrema(&profile(&speeds), tau).unwrap();
            assert!(!extrema.is_empty());
            assert_eq!(
                extrema.iter().filter(|e| e.persistence.is_infinite()).count(),
                1
            );
            for w in extrema.windows(2) {
                assert!(w[0].index < w[1].index);
                assert_ne!(w[0].kind, w[1].kind);
            }
            // Finite persistences all clear the threshold.
            assert!(extrema
                .iter()
                .filter(|e| e.persistence.is_finite())
                .all(|e| e.persistence >= tau));
        }
    }

    #[test]
    fn pure_ramp_is_one_acceleration_segment() {
        let speeds: Vec<f64> = (0..200).map(|i| i as f64 * 0.2).collect();
        let p = profile(&speeds);
        let extrema = persistence_extrema(&p, 1.0).unwrap();
        let segments = classify_segments(&p, &extrema, &SegmentationConfig::default()).unwrap();
        assert_eq!(segments.len(), 1);
        assert_eq!(segments[0], Segment {
            start: 0,
            end: 199,
            label: SegmentLabel::Acceleration
        });
    }

    #[test]
    fn constant_profile_is_one_stable_segment() {
        let speeds = vec![15.0; 300]; // 30 s at 10 Hz
        let p = profile(&speeds);
        let segmentation = segment_profile(&p, &SegmentationConfig::default()).unwrap();
        assert_eq!(segmentation.segments.len(), 1);
        assert_eq!(segmentation.segments[0].label, SegmentLabel::Stable);
        assert_eq!(segmentation.segments[0].start, 0);
        assert_eq!(segmentation.segments[0].end, 299);
    }

    #[test]
    fn trapezoid_profile_yields_accel_stable_decel() {
        // 0→10 m/s over 5 s, hold 8 s, back to 0 over 5 s, at 10 Hz.
        let dt = 0.1;
        let mut speeds = Vec::new();
        for i in 0..=50 {
            speeds.push(i as f64 * 0.2);
        }
        speeds.resize(speeds.len() + 79, 10.0);
        for i in 1..=50 {
            speeds.push(10.0 - i as f64 * 0.2);
        }
        let p = SpeedProfile::new(0.0, dt, speeds).unwrap();
        let config = SegmentationConfig {
            min_stable_duration: 5.0,
            ..SegmentationConfig::default()
        };
        let segmentation = segment_profile(&p, &config).unwrap();
        let labels: Vec<SegmentLabel> =
            segmentation.segments.iter().map(|s| s.label).collect();
        assert_eq!(
            labels,
            vec![
                SegmentLabel::Acceleration,
                SegmentLabel::Stable,
                SegmentLabel::Deceleration
            ]
        );
        // The stable window may creep into the ramps while the range stays
        // within the band: at 2 m/s² and 0.5 m/s that is ≤ 3 samples.
        let stable = &segmentation.segments[1];
        assert!((stable.start as i64 - 50).unsigned_abs() <= 3);
        assert!((stable.end as i64 - 129).unsigned_abs() <= 3);
        // Segments partition the state range.
        assert_eq!(segmentation.segments[0].start, 0);
        assert_eq!(segmentation.segments.last().unwrap().end, p.len() - 1);
        for w in segmentation.segments.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn v_shape_splits_into_decel_then_accel() {
        let mut speeds = Vec::new();
        for i in (0..=60).rev() {
            speeds.push(i as f64 * 0.3);
        }
        for i in 1..=60 {
            speeds.push(i as f64 * 0.3);
        }
        let p = profile(&speeds);
        let extrema = persistence_extrema(&p, 1.0).unwrap();
        let segments = classify_segments(&p, &extrema, &SegmentationConfig::default()).unwrap();
        let labels: Vec<SegmentLabel> = segments.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![SegmentLabel::Deceleration, SegmentLabel::Acceleration]);
        assert_eq!(segments[0].end, 60);
    }

    #[test]
    fn labels_attach_to_states_one_to_one() {
        let speeds = vec![15.0; 300];
        let p = profile(&speeds);
        let segmentation = segment_profile(&p, &SegmentationConfig::default()).unwrap();
        let states: Vec<TrafficState> = (0..299)
            .map(|i| TrafficState {
                t: i as f64 * 0.1,
                k: 0.02,
                q: 0.3,
                v: 15.0,
                dataset_id: Arc::from("seg"),
                driver_mode: crate::trajectory::DriverMode::Human,
            })
            .collect();
        let labeled = states_by_segment(&states, &segmentation.segments).unwrap();
        assert_eq!(labeled.len(), states.len());
        assert!(labeled.iter().all(|l| l.label == SegmentLabel::Stable));

        let short = &states[..100];
        assert!(matches!(
            states_by_segment(short, &segmentation.segments),
            Err(SegmentationError::IndexMismatch { expected: 299, got: 100 })
        ));
    }

    #[test]
    fn smoothing_flattens_sample_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let speeds: Vec<f64> =
            (0..400).map(|i| 10.0 + (i / 100) as f64 + rng.random_range(-0.3..0.3)).collect();
        let p = profile(&speeds);
        let smoothed = smooth_profile(&p, 1.0).unwrap();
        let rough = persistence_extrema(&p, 0.01).unwrap().len();
        let smooth = persistence_extrema(&smoothed, 0.01).unwrap().len();
        assert!(smooth < rough, "smoothing should remove extrema: {smooth} vs {rough}");
        assert_eq!(smoothed.len(), p.len());
    }

    #[test]
    fn mean_profile_prefers_recorded_speeds() {
        use crate::trajectory::{DriverMode, PlatoonFrame, TrajectoryDataset};
        let frames: Vec<PlatoonFrame> = (0..5)
            .map(|i| {
                let t = i as f64 * 0.1;
                PlatoonFrame::with_speeds(
                    t,
                    vec![100.0 + i as f64, 50.0 + i as f64],
                    vec![10.0, 12.0],
                )
            })
            .collect();
        let ds = TrajectoryDataset::new(
            "m",
            DriverMode::Human,
            vec!["a".into(), "b".into()],
            0.1,
            frames,
        )
        .unwrap();
        let p = mean_speed_profile(&ds).unwrap();
        assert!(p.speeds().iter().all(|&s| s == 11.0));

        // Without recorded speeds the mean position differentiates to the
        // true 10 m/s (positions advance 1 m per 0.1 s frame).
        let frames: Vec<PlatoonFrame> = (0..5)
            .map(|i| PlatoonFrame::new(i as f64 * 0.1, vec![100.0 + i as f64, 50.0 + i as f64]))
            .collect();
        let ds = TrajectoryDataset::new(
            "m2",
            DriverMode::Human,
            vec!["a".into(), "b".into()],
            0.1,
            frames,
        )
        .unwrap();
        let p = mean_speed_profile(&ds).unwrap();
        for &s in p.speeds() {
            assert!(crate::math::abs(s - 10.0) < 1e-9);
        }
    }

    #[test]
    fn config_knobs_are_validated() {
        let p = profile(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            persistence_extrema(&p, -1.0),
            Err(SegmentationError::InvalidConfig { name: "min_persistence", .. })
        ));
        let bad = SegmentationConfig { stable_band: f64::NAN, ..SegmentationConfig::default() };
        assert!(bad.validate().is_err());
        assert!(matches!(
            SpeedProfile::new(0.0, 0.0, vec![1.0, 2.0]),
            Err(SegmentationError::NonPositiveInterval(_))
        ));
        assert!(matches!(
            SpeedProfile::new(0.0, 0.1, vec![1.0]),
            Err(SegmentationError::TooFewFrames { got: 1 })
        ));
    }
}
