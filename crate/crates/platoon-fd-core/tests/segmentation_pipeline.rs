//! Regime segmentation on synthetic cycles: boundary placement on a simple
//! accelerate–hold–decelerate run, and the acceleration/stable/deceleration
//! split of binned flow on a staircase cycle.

use std::collections::BTreeMap;

use platoon_fd_core::aggregate::{BinAccumulator, BinAxis};
use platoon_fd_core::edie::{estimate_series, EstimatorConfig};
use platoon_fd_core::segment::{
    mean_speed_profile, segment_profile, states_by_segment, SegmentLabel, SegmentationConfig,
};
use platoon_fd_core::synthetic::{generate_platoon, DriveCycle, HeadwayLaw};
use platoon_fd_core::trajectory::DriverMode;

fn law() -> HeadwayLaw {
    HeadwayLaw::new(8.0, 1.2).unwrap()
}

/// Ramp up, hold, ramp down. The hold spans samples 80..=480; the stable
/// band (±0.5 m/s around it) admits exactly two ramp samples on each side.
#[test]
fn trapezoid_cycle_boundaries_within_two_samples() {
    let cycle =
        DriveCycle::new(vec![(0.0, 5.0), (8.0, 25.0), (48.0, 25.0), (56.0, 5.0)]).unwrap();
    let ds = generate_platoon(&cycle, &law(), 5, 10.0, "trapezoid", DriverMode::Human, None)
        .unwrap();
    let profile = mean_speed_profile(&ds).unwrap();
    let seg = segment_profile(&profile, &SegmentationConfig::default()).unwrap();

    let labels: Vec<SegmentLabel> = seg.segments.iter().map(|s| s.label).collect();
    assert_eq!(
        labels,
        vec![SegmentLabel::Acceleration, SegmentLabel::Stable, SegmentLabel::Deceleration]
    );

    let stable = &seg.segments[1];
    assert!((stable.start as i64 - 80).abs() <= 2, "stable start {}", stable.start);
    assert!((stable.end as i64 - 480).abs() <= 2, "stable end {}", stable.end);

    // Segments partition the full run of frame pairs.
    assert_eq!(seg.segments[0].start, 0);
    assert_eq!(seg.segments[2].end, profile.len() - 1);
}

/// Leader cycle holding at each level of `levels` for `hold` seconds, joined
/// by constant-`accel` ramps. A hold passed through in one direction drifts
/// `2·drift` m/s with travel so its states spread across neighbouring
/// density bins; turning-point holds sit flat.
fn holds_and_ramps(levels: &[f64], hold: f64, accel: f64, drift: f64) -> Vec<(f64, f64)> {
    let mut knots: Vec<(f64, f64)> = Vec::new();
    let mut t = 0.0;
    for (i, &level) in levels.iter().enumerate() {
        let dir_in = if i == 0 { 0.0 } else { (level - levels[i - 1]).signum() };
        let dir_out =
            if i + 1 == levels.len() { 0.0 } else { (levels[i + 1] - level).signum() };
        let arrive = if dir_in != 0.0 { level - drift * dir_in } else { level - drift * dir_out };
        let depart = if dir_in != 0.0 && dir_in == dir_out {
            level + drift * dir_in
        } else {
            arrive
        };
        knots.push((t, arrive));
        t += hold;
        knots.push((t, depart));
        if dir_out != 0.0 {
            let target = levels[i + 1] - drift * dir_out;
            t += (target - depart).abs() / accel;
        }
    }
    knots
}

/// A staircase with long full-range ramps and short level-to-level ramps.
/// Every mid-range hold level is also crossed mid-ramp, so its density bins
/// collect states from all three regimes; within such a bin the stable flow
/// must sit strictly between the accelerating and decelerating flows,
/// because speed lags the equilibrium during acceleration and leads it
/// during deceleration.
#[test]
fn staircase_states_split_by_regime() {
    let mut levels: Vec<f64> = Vec::new();
    for _ in 0..2 {
        levels.extend_from_slice(&[4.0, 20.0, 4.0, 8.0, 12.0, 16.0, 20.0, 16.0, 12.0, 8.0]);
    }
    levels.push(4.0);
    let knots = holds_and_ramps(&levels, 20.0, 0.6, 0.2);
    let cycle = DriveCycle::new(knots).unwrap();
    let ds = generate_platoon(&cycle, &law(), 5, 10.0, "staircase", DriverMode::AccMax, None)
        .unwrap();

    // Gentle enough that every vehicle always moves forward: the whole
    // series estimates cleanly.
    let est = estimate_series(&ds, &EstimatorConfig::default()).unwrap();
    let profile = mean_speed_profile(&ds).unwrap();
    assert_eq!(est.states.len(), profile.len() - 1);

    let seg = segment_profile(&profile, &SegmentationConfig::default()).unwrap();
    let stable_count =
        seg.segments.iter().filter(|s| s.label == SegmentLabel::Stable).count();
    assert!(stable_count >= 20, "found {stable_count} stable segments, one per hold expected");

    let labeled = states_by_segment(&est.states, &seg.segments).unwrap();
    assert_eq!(labeled.len(), est.states.len());

    let mut accel = BinAccumulator::new(0.3, BinAxis::Density).unwrap();
    let mut decel = BinAccumulator::new(0.3, BinAxis::Density).unwrap();
    let mut stable = BinAccumulator::new(0.3, BinAxis::Density).unwrap();
    for ls in &labeled {
        match ls.label {
            SegmentLabel::Acceleration => accel.push(&ls.state).unwrap(),
            SegmentLabel::Deceleration => decel.push(&ls.state).unwrap(),
            SegmentLabel::Stable => stable.push(&ls.state).unwrap(),
        }
    }
    let q_of = |acc: BinAccumulator| -> BTreeMap<usize, f64> {
        acc.finish()
            .unwrap()
            .points
            .iter()
            .map(|p| (p.bin_index, p.q_mean))
            .collect()
    };
    let (qa, qd, qs) = (q_of(accel), q_of(decel), q_of(stable));

    let mut strictly_between = 0usize;
    for (idx, q_stable) in &qs {
        if let (Some(q_acc), Some(q_dec)) = (qa.get(idx), qd.get(idx)) {
            let (lo, hi) = (q_acc.min(*q_dec), q_acc.max(*q_dec));
            if *q_stable > lo && *q_stable < hi {
                strictly_between += 1;
            }
        }
    }
    assert!(
        strictly_between >= 10,
        "only {strictly_between} shared bins order the three regimes"
    );
}
