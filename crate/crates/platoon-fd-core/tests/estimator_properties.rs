//! Cross-checks of the closed-form pair estimator against the generic
//! region integral, plus invariances the closed forms must satisfy.

use platoon_fd_core::edie::{
    edie_generic, estimate_series, instantaneous_state, EstimatorConfig, PairPolicy,
    SpaceTimePolygon, StateOrigin, TrafficState,
};
use platoon_fd_core::trajectory::{DriverMode, PlatoonFrame, TrajectoryDataset};
use proptest::prelude::*;

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-300);
    (a - b).abs() / denom
}

fn ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("v{i}")).collect()
}

/// One random frame pair: ordered platoon at both ends, every vehicle moving
/// forward, plus a buffer for the estimator.
#[derive(Debug, Clone)]
struct PairCase {
    t0: f64,
    dt: f64,
    pos0: Vec<f64>,
    pos1: Vec<f64>,
    buffer: f64,
}

fn pair_case() -> impl Strategy<Value = PairCase> {
    (2usize..=8)
        .prop_flat_map(|n| {
            (
                -50.0f64..50.0,
                0.05f64..2.0,
                -200.0f64..200.0,
                prop::collection::vec(0.5f64..30.0, n - 1),
                prop::collection::vec(0.5f64..30.0, n - 1),
                0.0f64..40.0,
                0.5f64..6.0,
            )
        })
        .prop_map(|(t0, dt, lead0, gaps0, gaps1, lead_extra, buffer)| {
            let mut pos0 = vec![lead0];
            for g in &gaps0 {
                pos0.push(pos0.last().unwrap() - g);
            }
            // Push the leader far enough that every follower still moves
            // forward no matter how the gaps reshuffle between frames.
            let mut needed = 0.0f64;
            let (mut c0, mut c1) = (0.0, 0.0);
            for (g0, g1) in gaps0.iter().zip(&gaps1) {
                c0 += g0;
                c1 += g1;
                needed = needed.max(c1 - c0);
            }
            let mut pos1 = vec![lead0 + needed + lead_extra];
            for g in &gaps1 {
                pos1.push(pos1.last().unwrap() - g);
            }
            PairCase { t0, dt, pos0, pos1, buffer }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// The trapezoid closed forms must agree with the generalized-definition
    /// integral over the very region they implicitly integrate.
    #[test]
    fn pair_closed_form_matches_region_integral(case in pair_case()) {
        let f0 = PlatoonFrame::new(case.t0, case.pos0.clone());
        let f1 = PlatoonFrame::new(case.t0 + case.dt, case.pos1.clone());
        let cfg = EstimatorConfig { buffer: case.buffer, on_error: PairPolicy::Abort };
        let origin = StateOrigin::new("pair", DriverMode::Human);
        let fast = instantaneous_state(&f0, &f1, &cfg, &origin).unwrap();

        let n = case.pos0.len();
        let dt = f1.t - f0.t;
        let ds = TrajectoryDataset::new(
            "pair",
            DriverMode::Human,
            ids(n),
            dt,
            vec![f0.clone(), f1.clone()],
        )
        .unwrap();
        let region = SpaceTimePolygon::trapezoid(&f0, &f1, &cfg).unwrap();
        let slow = edie_generic(&region, &ds).unwrap();

        prop_assert!(rel_err(fast.k, slow.k) <= 1e-9, "k: {} vs {}", fast.k, slow.k);
        prop_assert!(rel_err(fast.q, slow.q) <= 1e-9, "q: {} vs {}", fast.q, slow.q);
        prop_assert!(rel_err(fast.v, slow.v) <= 1e-9, "v: {} vs {}", fast.v, slow.v);
        // The three quantities are tied together by definition.
        prop_assert!(rel_err(fast.q, fast.k * fast.v) <= 1e-12);
    }
}

/// A steady platoon measured at 10 Hz and at 100 Hz must report the same
/// state: the closed forms carry no sample-rate dependence.
#[test]
fn constant_flow_invariant_to_sample_rate() {
    let states_at = |hz: f64| -> Vec<TrafficState> {
        let dt = 1.0 / hz;
        let n_frames = (10.0 * hz) as usize + 1;
        let frames: Vec<PlatoonFrame> = (0..n_frames)
            .map(|j| {
                let t = j as f64 * dt;
                let lead = 20.0 * t;
                PlatoonFrame::new(t, (0..5).map(|i| lead - 25.0 * i as f64).collect())
            })
            .collect();
        let ds =
            TrajectoryDataset::new("cruise", DriverMode::AccMed, ids(5), dt, frames).unwrap();
        estimate_series(&ds, &EstimatorConfig::default()).unwrap().states
    };

    let coarse = states_at(10.0);
    let fine = states_at(100.0);
    assert_eq!(coarse.len(), 100);
    assert_eq!(fine.len(), 1000);

    // Span 4 gaps of 25 m plus the 3 m buffer: k = 2N / (2·103).
    let k_expect = 5.0 / 103.0;
    for s in coarse.iter().chain(&fine) {
        assert!(rel_err(s.k, k_expect) <= 1e-12);
        assert!(rel_err(s.v, 20.0) <= 1e-12);
        assert!(rel_err(s.q, k_expect * 20.0) <= 1e-12);
    }
}

/// Growing the buffer widens the region: density and flow dilute, while the
/// mean vehicle speed (a region-free quantity) stays bit-identical.
#[test]
fn buffer_widens_region_and_dilutes_density() {
    let f0 = PlatoonFrame::new(0.0, vec![120.0, 95.0, 71.0, 44.0, 20.0]);
    let f1 = PlatoonFrame::new(0.5, vec![131.0, 106.0, 81.5, 54.0, 30.5]);
    let origin = StateOrigin::new("buffered", DriverMode::Human);

    let mut prev: Option<TrafficState> = None;
    for buffer in [0.0, 1.0, 3.0, 10.0] {
        let cfg = EstimatorConfig { buffer, on_error: PairPolicy::Abort };
        let s = instantaneous_state(&f0, &f1, &cfg, &origin).unwrap();
        if let Some(p) = &prev {
            assert!(s.k < p.k, "density must shrink as the buffer grows");
            assert!(s.q < p.q, "flow must shrink as the buffer grows");
            assert_eq!(s.v, p.v, "speed must not depend on the buffer");
        }
        prev = Some(s);
    }
}
