use evio_core::eval::{ate_rmse, Trajectory, DEFAULT_MAX_DT};
use evio_core::msckf::{FilterSettings, InitialUncertainty, NoiseParams};
use evio_core::pipeline::{initial_inertial, run_pipeline, Variant};
use evio_core::sim::{export_dataset, gravity, sample_pose, NoiseSpec, SimConfig};
use evio_core::{Filter, PipelineConfig};

#[test]
fn noiseless_imu_propagation_follows_the_trajectory() {
    let mut sim = SimConfig {
        noise: NoiseSpec::zero(),
        ..Default::default()
    };
    sim.trajectory.duration = 10.0;
    let imu = sim.imu(&sim.noise).unwrap();
    let init = sim.initial_state().unwrap();
    let state = evio_core::msckf::FullState::new(init.t, initial_inertial(&init).unwrap(), sim.cameras());
    let mut f = Filter::new(
        state,
        NoiseParams::default(),
        FilterSettings::default(),
        &InitialUncertainty::default(),
    );
    f.gravity = gravity();
    let mut worst = (0.0f64, 0.0f64);
    for k in 1..=100 {
        let t = k as f64 * 0.1;
        f.propagate(&imu, t).unwrap();
        let truth = sample_pose(&sim.trajectory, t).unwrap();
        let s = &f.state.imu;
        worst.0 = worst.0.max((s.p - truth.p).norm());
        worst.1 = worst.1.max(s.rot.angle_to(&truth.rot));
    }
    // Samples are held constant over each 5 ms interval; the circle's
    // curvature keeps the resulting drift far below a millimetre.
    assert!(worst.0 < 1e-3, "position drift {} m", worst.0);
    assert!(worst.1 < 1e-4, "rotation drift {} rad", worst.1);
}

#[test]
fn exported_dataset_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut sim = SimConfig::default();
    sim.trajectory.duration = 2.0;
    export_dataset(&sim, &dir.path().join("data")).unwrap();
    let cfg = PipelineConfig::from_toml_str(&format!("input_dir = {:?}", dir.path().join("data")), &[]).unwrap();
    let out = dir.path().join("out");
    let a = run_pipeline(&cfg, Variant::Full, &out).unwrap();
    let est = Trajectory::read_tum(&a.trajectory).unwrap();
    assert_eq!(est.len(), 60);
    let gt = sim.ground_truth().unwrap();
    let ate = ate_rmse(&est, &gt, DEFAULT_MAX_DT).unwrap().rmse;
    // The written trajectory is rounded to the TUM text precision.
    assert!((a.ate_rmse_m.unwrap() - ate).abs() < 1e-6);
    assert!(ate < 0.01 * gt.path_length(), "ATE {ate} m");
    assert!(a.map.is_file() && a.timing.is_file() && a.metrics.is_some());
}
