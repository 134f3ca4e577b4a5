//! End-to-end checks of the `platoon-fd` binary: the full pipeline chain,
//! serialization round trips, determinism, exit codes, and failure
//! semantics with mixed good/bad inputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use platoon_fd::ingest::{parse_trajectory_file, write_dataset, write_trajectory_csv};
use platoon_fd::schema::ColumnMapping;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_platoon-fd"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_status(output: &Output, expected: i32, what: &str) {
    let code = output.status.code().expect("no signal");
    assert_eq!(
        code,
        expected,
        "{what}: expected exit {expected}, got {code}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// A gentle cycle that never stops: accelerations stay mild enough that
/// every follower keeps moving forward, so no pairs are skipped.
const GENTLE_KNOTS: &str = "0:5,30:25,90:25,120:5,150:5";

fn synth_gentle(dir: &Path, id: &str) -> PathBuf {
    let config = dir.join(format!("{id}.conf"));
    std::fs::write(
        &config,
        format!(
            "synth_id = {id}\nsynth_knots = {GENTLE_KNOTS}\nout = {}\n",
            dir.display()
        ),
    )
    .unwrap();
    let out = run(&["synth", "--config", config.to_str().unwrap()]);
    assert_status(&out, 0, "synth");
    dir.join(format!("{id}.csv"))
}

#[test]
fn full_chain_produces_consistent_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = dir.to_str().unwrap();
    let traj = synth_gentle(dir, "chain");
    let traj = traj.to_str().unwrap();

    let est = run(&["estimate", "--input", traj, "--out", out]);
    assert_status(&est, 0, "estimate");
    let stdout = String::from_utf8_lossy(&est.stdout);
    assert!(stdout.contains("(0 pair(s) skipped)"), "gentle cycle skipped pairs: {stdout}");

    // 150 s at 10 Hz → 1501 frames → 1500 states.
    let states_path = dir.join("chain.states.csv");
    let states_text = std::fs::read_to_string(&states_path).unwrap();
    let data_rows =
        states_text.lines().filter(|l| !l.starts_with('#')).count() - 1; // minus header
    assert_eq!(data_rows, 1500);
    assert!(states_text.starts_with("# platoon-fd "), "missing version header");
    assert!(states_text.lines().nth(1).unwrap().starts_with("# config: command=estimate"));

    let states = states_path.to_str().unwrap();
    assert_status(&run(&["aggregate", "--input", states, "--out", out]), 0, "aggregate");
    for artifact in
        ["cacc.kbins.csv", "cacc.vbins.csv", "cacc.qk.csv", "cacc.vk.csv", "cacc.vq.csv"]
    {
        assert!(dir.join(artifact).exists(), "missing {artifact}");
    }

    assert_status(&run(&["calibrate", "--input", states, "--out", out]), 0, "calibrate");
    let params = std::fs::read_to_string(dir.join("tfd_params.csv")).unwrap();
    let row = params.lines().find(|l| l.starts_with("cacc,")).expect("cacc parameter row");
    // v_f should sit near the 25 m/s = 90 km/h cruise cap.
    let v_f: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert!((80.0..100.0).contains(&v_f), "v_f {v_f} far from the 90 km/h cruise speed");

    assert_status(&run(&["segment", "--input", traj, "--out", out]), 0, "segment");
    let segments = std::fs::read_to_string(dir.join("chain.segments.csv")).unwrap();
    let labels: Vec<&str> = segments
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("segment,"))
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert!(labels.len() >= 3, "expected at least accel/stable/decel, got {labels:?}");
    assert!(labels.contains(&"acceleration") && labels.contains(&"deceleration"));
    assert!(labels.contains(&"stable"));
    assert!(dir.join("chain.states_labeled.csv").exists());
    assert!(dir.join("cacc.stable.qk.csv").exists());

    assert_status(&run(&["plot", "--input", states, "--out", out]), 0, "plot");
    for plane in ["qk", "vk", "vq"] {
        let svg = std::fs::read_to_string(dir.join(format!("cacc.{plane}.svg"))).unwrap();
        assert!(svg.contains("<svg "), "{plane}: not an SVG");
        assert!(svg.contains("<circle class=\"pt\""), "{plane}: no scatter");
        assert!(svg.contains("<polyline class=\"bin\""), "{plane}: no binned curve");
        // tfd_params.csv sits in the output directory, so the fitted
        // overlay must be drawn.
        assert!(svg.contains("<polyline class=\"tfd-free\""), "{plane}: no fitted overlay");
    }
}

#[test]
fn trajectory_serialization_round_trips_bit_equal() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // Noisy positions exercise full-precision float printing.
    let config = dir.join("noisy.conf");
    std::fs::write(
        &config,
        format!(
            "synth_id = noisy\nsynth_knots = {GENTLE_KNOTS}\nsynth_sigma = 0.05\nseed = 9\nout = {}\n",
            dir.display()
        ),
    )
    .unwrap();
    assert_status(&run(&["synth", "--config", config.to_str().unwrap()]), 0, "synth");

    let mapping = ColumnMapping::default();
    let first = parse_trajectory_file(&dir.join("noisy.csv"), &mapping).unwrap();

    let mut rewritten = Vec::new();
    write_trajectory_csv(&mut rewritten, &first).unwrap();
    let rewritten_path = dir.join("rewritten.csv");
    std::fs::write(&rewritten_path, &rewritten).unwrap();
    std::fs::copy(dir.join("noisy.csv.meta"), dir.join("rewritten.csv.meta")).unwrap();
    let second = parse_trajectory_file(&rewritten_path, &mapping).unwrap();

    assert_eq!(first.num_frames(), second.num_frames());
    assert_eq!(first.vehicle_ids(), second.vehicle_ids());
    for (a, b) in first.frames().iter().zip(second.frames()) {
        assert_eq!(a.t.to_bits(), b.t.to_bits(), "time not bit-equal");
        for (x, y) in a.positions.iter().zip(&b.positions) {
            assert_eq!(x.to_bits(), y.to_bits(), "position not bit-equal");
        }
        match (&a.speeds, &b.speeds) {
            (Some(sa), Some(sb)) => {
                for (x, y) in sa.iter().zip(sb) {
                    assert_eq!(x.to_bits(), y.to_bits(), "speed not bit-equal");
                }
            }
            (None, None) => {}
            _ => panic!("speed presence changed through round trip"),
        }
    }

    // write_dataset emits the same canonical layout plus a sidecar.
    let copy_dir = dir.join("copy");
    std::fs::create_dir(&copy_dir).unwrap();
    let (csv_path, meta_path) = write_dataset(&copy_dir, &first, 10.0).unwrap();
    assert_eq!(std::fs::read(&csv_path).unwrap(), rewritten);
    assert!(std::fs::read_to_string(&meta_path).unwrap().contains("dataset_id = noisy"));
}

#[test]
fn malformed_file_fails_without_sinking_valid_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let good = synth_gentle(dir, "good");

    let bad = dir.join("broken.csv");
    std::fs::write(&bad, "time_s,vehicle_id,position_m\n0.0,v1,not-a-number\n").unwrap();
    std::fs::write(
        dir.join("broken.csv.meta"),
        "dataset_id = broken\ndriver_mode = human\nvehicle_order = v1\nsample_hz = 10\n",
    )
    .unwrap();

    let out = run(&[
        "estimate",
        "--input",
        good.to_str().unwrap(),
        "--input",
        bad.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_status(&out, 1, "estimate with one bad file");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("broken.csv"), "stderr must name the offender: {stderr}");
    assert!(stderr.contains(":2:"), "stderr must carry the line number: {stderr}");
    assert!(dir.join("good.states.csv").exists(), "valid input must still be written");
    assert!(!dir.join("broken.states.csv").exists());
}

#[test]
fn empty_and_unusable_inputs_abort() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = dir.to_str().unwrap();

    // Header-only states table → aggregate has nothing to bin.
    let empty = dir.join("empty.states.csv");
    std::fs::write(&empty, "t_s,density_veh_km,flow_veh_h,speed_km_h,dataset_id,driver_mode\n")
        .unwrap();
    let agg = run(&["aggregate", "--input", empty.to_str().unwrap(), "--out", out]);
    assert_status(&agg, 2, "aggregate on empty states");

    // Header-only binned table → plot has nothing to draw.
    let empty_bins = dir.join("empty.kbins.csv");
    std::fs::write(
        &empty_bins,
        "driver_mode,axis,delta,bin_index,count,k_mean_veh_km,v_mean_km_h,q_mean_veh_h\n",
    )
    .unwrap();
    let plot = run(&["plot", "--input", empty_bins.to_str().unwrap(), "--out", out]);
    assert_status(&plot, 2, "plot on empty binned input");

    // No inputs at all.
    let est = run(&["estimate", "--out", out]);
    assert_status(&est, 2, "estimate without inputs");

    // A parameter table is not calibration input.
    let params = dir.join("p.csv");
    std::fs::write(
        &params,
        "driver_mode,delta_veh_km,v_f_km_h,k_cr_veh_km,k_jam_veh_km,w_km_h,capacity_veh_h,objective,evaluations,converged\n\
         cacc,0.3,126,21.3,104.4,32.3,2683.8,0.01,10,true\n",
    )
    .unwrap();
    let cal = run(&["calibrate", "--input", params.to_str().unwrap(), "--out", out]);
    assert_status(&cal, 2, "calibrate on a params table");
}

#[test]
fn reruns_with_identical_config_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = dir.to_str().unwrap();
    let traj = synth_gentle(dir, "det");
    let traj = traj.to_str().unwrap();

    assert_status(&run(&["estimate", "--input", traj, "--out", out]), 0, "estimate 1");
    let states = dir.join("det.states.csv");
    let first = std::fs::read(&states).unwrap();
    assert_status(&run(&["estimate", "--input", traj, "--out", out]), 0, "estimate 2");
    assert_eq!(first, std::fs::read(&states).unwrap(), "estimate is not deterministic");

    let states = states.to_str().unwrap();
    assert_status(&run(&["calibrate", "--input", states, "--out", out]), 0, "calibrate 1");
    let params = dir.join("tfd_params.csv");
    let first = std::fs::read(&params).unwrap();
    assert_status(&run(&["calibrate", "--input", states, "--out", out]), 0, "calibrate 2");
    assert_eq!(first, std::fs::read(&params).unwrap(), "calibration is not deterministic");
}

#[test]
fn plot_from_binned_and_params_draws_branches_meeting_at_apex() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = dir.to_str().unwrap();
    let traj = synth_gentle(dir, "apex");
    let traj = traj.to_str().unwrap();
    assert_status(&run(&["estimate", "--input", traj, "--out", out]), 0, "estimate");
    let states = dir.join("apex.states.csv");
    let states = states.to_str().unwrap();
    assert_status(&run(&["aggregate", "--input", states, "--out", out]), 0, "aggregate");
    assert_status(&run(&["calibrate", "--input", states, "--out", out]), 0, "calibrate");

    // Fresh output directory fed only by binned tables + the params table.
    let plot_dir = dir.join("plots");
    std::fs::create_dir(&plot_dir).unwrap();
    let kbins = dir.join("cacc.kbins.csv");
    let vbins = dir.join("cacc.vbins.csv");
    let params = dir.join("tfd_params.csv");
    let plot = run(&[
        "plot",
        "--input",
        kbins.to_str().unwrap(),
        "--input",
        vbins.to_str().unwrap(),
        "--input",
        params.to_str().unwrap(),
        "--out",
        plot_dir.to_str().unwrap(),
    ]);
    assert_status(&plot, 0, "plot from binned + params");

    let svg = std::fs::read_to_string(plot_dir.join("cacc.qk.svg")).unwrap();
    let vertex_lists: Vec<&str> = svg
        .lines()
        .filter(|l| l.contains("class=\"tfd-"))
        .filter_map(|l| l.split("points=\"").nth(1)?.split('"').next())
        .collect();
    assert_eq!(vertex_lists.len(), 2, "expected exactly two fitted branches");
    let free_end = vertex_lists[0].split(' ').next_back().unwrap();
    let congested_start = vertex_lists[1].split(' ').next().unwrap();
    assert_eq!(free_end, congested_start, "branches do not meet at the apex");

    // Without any params available the overlay must disappear.
    let bare_dir = dir.join("bare");
    std::fs::create_dir(&bare_dir).unwrap();
    let plot = run(&[
        "plot",
        "--input",
        kbins.to_str().unwrap(),
        "--out",
        bare_dir.to_str().unwrap(),
    ]);
    assert_status(&plot, 0, "plot without params");
    let svg = std::fs::read_to_string(bare_dir.join("cacc.qk.svg")).unwrap();
    assert!(!svg.contains("<polyline class=\"tfd-"), "overlay drawn without parameters");
    assert!(svg.contains("<polyline class=\"bin\""), "binned curve missing");
}

#[test]
fn seed_controls_synthetic_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let mut paths = Vec::new();
    for (name, seed) in [("a", 5u64), ("b", 5), ("c", 6)] {
        let sub = dir.join(name);
        std::fs::create_dir(&sub).unwrap();
        let config = dir.join(format!("{name}.conf"));
        std::fs::write(
            &config,
            format!(
                "synth_id = s\nsynth_knots = {GENTLE_KNOTS}\nsynth_sigma = 0.1\nseed = {seed}\nout = {}\n",
                sub.display()
            ),
        )
        .unwrap();
        assert_status(&run(&["synth", "--config", config.to_str().unwrap()]), 0, "synth");
        paths.push(sub.join("s.csv"));
    }
    let a = std::fs::read(&paths[0]).unwrap();
    let b = std::fs::read(&paths[1]).unwrap();
    let c = std::fs::read(&paths[2]).unwrap();
    assert_eq!(a, b, "same seed must reproduce the same noise");
    assert_ne!(a, c, "different seeds must change the noise");
}
