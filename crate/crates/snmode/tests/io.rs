use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snmode::io::{self, load_dataset, load_model, load_trajectory, save_dataset, save_model, save_trajectory};
use snmode::manifest::{self, Run};
use snmode::Error;
use snmode_core::data::{generate, Dataset};
use snmode_core::geometry::ManifoldKind;
use snmode_core::solve::Trajectory;
use snmode_core::train::{init_field, TrainConfig};

fn random_traj(m: ManifoldKind, seed: u64, n: usize) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n).map(|_| m.random_point(&mut rng, 1.3)).collect();
    Trajectory { manifold: m, dt: 0.037, points }
}

#[test]
fn trajectories_round_trip_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    for (k, m) in [ManifoldKind::Euclidean(2), ManifoldKind::UnitQuaternion, ManifoldKind::Spd2, ManifoldKind::stacked_pose(2)]
        .into_iter()
        .enumerate()
    {
        let t = random_traj(m, k as u64, 57);
        let p = dir.path().join(format!("t{k}.csv"));
        save_trajectory(&p, &t).unwrap();
        let back = load_trajectory(&p).unwrap();
        assert_eq!(back, t);
    }
}

#[test]
fn csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let t = Trajectory { manifold: ManifoldKind::UnitQuaternion, dt: 0.5, points: vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]] };
    let p = dir.path().join("q.csv");
    save_trajectory(&p, &t).unwrap();
    assert_eq!(fs::read_to_string(&p).unwrap(), "t,c0,c1,c2,c3\n0,1,0,0,0\n0.5,0,1,0,0\n");
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("q.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["manifold"], "S3");
    assert_eq!(meta["dt"], 0.5);
}

fn s3_dataset() -> Dataset {
    generate("s-curve", &ManifoldKind::UnitQuaternion, 0).unwrap().downsample(20)
}

#[test]
fn datasets_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for ds in [s3_dataset(), generate("w-curve", &ManifoldKind::Spd2, 1).unwrap().downsample(50)] {
        let sub = dir.path().join(ds.manifold.name());
        let files = save_dataset(&sub, &ds).unwrap();
        assert_eq!(files.len(), 2 * ds.demos.len() + 1);
        assert_eq!(load_dataset(&sub).unwrap(), ds);
        assert_eq!(load_dataset(&sub.join("dataset.json")).unwrap(), ds);
    }
}

#[test]
fn sign_flipped_quaternions_are_repaired_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let ds = s3_dataset();
    let mut bad = ds.clone();
    for p in &mut bad.demos[1].points[10..30] {
        p.iter_mut().for_each(|c| *c = -*c);
    }
    bad.demos[2].points[5].iter_mut().for_each(|c| *c = -*c);
    save_dataset(dir.path(), &bad).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    for d in &back.demos {
        for w in d.points.windows(2) {
            let dot: f64 = w[0].iter().zip(&w[1]).map(|(a, b)| a * b).sum();
            assert!(dot > 0.0);
        }
    }
    assert_eq!(back, ds);
}

#[test]
fn mismatched_goals_are_rejected_with_distances() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = generate("line", &ManifoldKind::Euclidean(2), 0).unwrap().downsample(100);
    for p in &mut ds.demos[2].points {
        p[0] += 0.25;
    }
    save_dataset(dir.path(), &ds).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::Core(snmode_core::Error::GoalMismatch(d))) => {
            assert_eq!(d.len(), 4);
            assert!((d[2] - 0.25).abs() < 1e-12, "{d:?}");
            assert!(d[0] < 1e-6 && d[1] < 1e-6 && d[3] < 1e-6);
        }
        other => panic!("{other:?}"),
    }
}

fn expect_format_error(r: snmode::Result<impl std::fmt::Debug>, needle: &str) {
    match r {
        Err(e @ Error::Format { .. }) => assert!(e.to_string().contains(needle), "{e}"),
        other => panic!("expected a format error mentioning {needle:?}, got {other:?}"),
    }
}

#[test]
fn malformed_trajectory_files() {
    let dir = tempfile::tempdir().unwrap();
    let t = random_traj(ManifoldKind::UnitQuaternion, 3, 4);
    let p = dir.path().join("a.csv");
    save_trajectory(&p, &t).unwrap();
    let good = fs::read_to_string(&p).unwrap();
    let meta = fs::read_to_string(dir.path().join("a.meta.json")).unwrap();

    fs::write(&p, good.replacen("t,c0,c1,c2,c3", "t,c0,c1,c2", 1)).unwrap();
    expect_format_error(load_trajectory(&p), "header");

    let mut lines: Vec<String> = good.lines().map(String::from).collect();
    lines[2] = lines[2].replacen(',', ",x", 1);
    fs::write(&p, lines.join("\n")).unwrap();
    expect_format_error(load_trajectory(&p), "row 2");

    fs::write(&p, good.replacen("\n0.037,", "\n0.04,", 1)).unwrap();
    expect_format_error(load_trajectory(&p), "uniform grid");

    fs::write(&p, "t,c0,c1,c2,c3\n0,1,1,0,0\n").unwrap();
    expect_format_error(load_trajectory(&p), "off the manifold");

    fs::write(&p, &good).unwrap();
    fs::write(dir.path().join("a.meta.json"), meta.replace("S3", "S9")).unwrap();
    expect_format_error(load_trajectory(&p), "unknown manifold");

    fs::remove_file(dir.path().join("a.meta.json")).unwrap();
    assert!(matches!(load_trajectory(&p), Err(Error::Io { .. })));
}

#[test]
fn dataset_manifest_checks() {
    let dir = tempfile::tempdir().unwrap();
    let ds = s3_dataset();
    save_dataset(dir.path(), &ds).unwrap();
    let man = dir.path().join("dataset.json");
    let text = fs::read_to_string(&man).unwrap();
    fs::write(&man, text.replace("sndoe-data-v1", "sndoe-data-v0")).unwrap();
    expect_format_error(load_dataset(dir.path()), "format tag");
    fs::write(&man, text.replace("\"S3\"", "\"SPD2\"")).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}

#[test]
fn models_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = s3_dataset();
    let cfg = TrainConfig { seed: 4, ..TrainConfig::default() };
    let field = init_field(&ds, &cfg).unwrap();
    let p = dir.path().join("model.json");
    save_model(&p, &field).unwrap();
    let text = fs::read_to_string(&p).unwrap();
    assert!(text.contains("\"format\": \"sndoe-v1\""));
    let back = load_model(&p).unwrap();
    assert_eq!((back.alpha, back.epsilon, &back.goal, &back.manifold), (field.alpha, field.epsilon, &field.goal, &field.manifold));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let x = field.manifold.random_point(&mut rng, 1.0);
        assert_eq!(back.stable_field(&x), field.stable_field(&x));
        assert_eq!(back.lyapunov_total(&x), field.lyapunov_total(&x));
    }
    fs::write(&p, text.replace("sndoe-v1", "sndoe-v2")).unwrap();
    expect_format_error(load_model(&p), "format tag");
}

#[test]
fn configs_load_from_toml_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let toml_path = dir.path().join("c.toml");
    fs::write(&toml_path, "seed = 7\nmode = \"direct\"\nalpha = 2.0\n[tangents]\nenabled = false\nepochs = 3\nlr = 0.1\n").unwrap();
    let c = io::load_config(&toml_path).unwrap();
    assert_eq!((c.seed, c.alpha, c.tangents.enabled, c.tangents.epochs), (7, 2.0, false, 3));
    assert_eq!(c.mode, snmode_core::train::Mode::Direct);
    assert_eq!(c.batch, TrainConfig::default().batch);

    let json_path = dir.path().join("c.json");
    fs::write(&json_path, serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(io::load_config(&json_path).unwrap(), c);

    fs::write(&toml_path, "sed = 7\n").unwrap();
    expect_format_error(io::load_config(&toml_path), "sed");
    fs::write(&toml_path, "[arch]\nh_hidden = [5]\n").unwrap();
    let c = io::load_config(&toml_path).unwrap();
    assert_eq!(c.arch.h_hidden, vec![5]);
    assert_eq!(c.arch.icnn_hidden, snmode_core::nets::Architecture::default().icnn_hidden);
    fs::write(&toml_path, "[arch]\nh_hiden = [5]\n").unwrap();
    expect_format_error(io::load_config(&toml_path), "h_hiden");
    fs::write(&toml_path, "shot_min = 50\nshot_max = 10\n").unwrap();
    let e = io::load_config(&toml_path).unwrap_err();
    assert!(matches!(e, Error::Core(snmode_core::Error::InvalidConfig(_))));
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn manifest_hash_tracks_the_stored_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = Run::start(dir.path(), "test", 5, &serde_json::json!({"a": 1})).unwrap();
    io::write_bytes(&run.output("x.txt"), "hi").unwrap();
    let m = run.finish().unwrap();
    assert_eq!(m.seed, 5);
    assert_eq!(m.outputs, vec![Path::new("config.json").to_path_buf(), Path::new("x.txt").to_path_buf()]);
    assert_eq!(manifest::verify(dir.path()).unwrap(), m);
    let cfg = dir.path().join("config.json");
    let mut bytes = fs::read(&cfg).unwrap();
    assert_eq!(manifest::sha256_hex(&bytes), m.config_hash);
    bytes.push(b' ');
    fs::write(&cfg, bytes).unwrap();
    assert!(manifest::verify(dir.path()).is_err());
}

#[test]
fn numerical_aborts_map_to_exit_code_3() {
    assert_eq!(Error::Core(snmode_core::Error::NonFinite("loss".into())).exit_code(), 3);
    assert_eq!(Error::Usage("x".into()).exit_code(), 2);
    assert_eq!(Error::Core(snmode_core::Error::CutLocus).exit_code(), 2);
}

#[test]
fn perfect_replay_scores_zero() {
    use snmode_core::solve::{Method, Stepper};
    use snmode_core::train::evaluate;
    let ds = s3_dataset();
    let field = init_field(&ds, &TrainConfig::default()).unwrap();
    let still = Dataset {
        demos: ds.demos.iter().map(|d| Trajectory { points: vec![ds.goal.clone(); 40], ..d.clone() }).collect(),
        ..ds.clone()
    };
    for m in [Method::Exp, Method::Ts] {
        assert!(evaluate(&field, &still, m, Stepper::Rk4).unwrap().iter().all(|&e| e == 0.0));
    }
    assert_eq!(snmode_core::train::trajectory_rmse(&ds.manifold, &ds.demos[0].points, &ds.demos[0].points), 0.0);
}

#[test]
fn finite_difference_field_replays_its_demo() {
    use snmode_core::solve::{solve, Method, SolveConfig, Stepper};
    use snmode_core::train::trajectory_rmse;
    let ds = generate("line", &ManifoldKind::Euclidean(2), 0).unwrap().downsample(10);
    let d = &ds.demos[0];
    let dt = d.dt;
    let vel: Vec<Vec<f64>> = d.points.windows(2).map(|w| vec![(w[1][0] - w[0][0]) / dt, (w[1][1] - w[0][1]) / dt]).collect();
    let vmax = vel.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
    let field = |x: &[f64]| {
        let k = (0..vel.len())
            .min_by(|&a, &b| {
                let da = (d.points[a][0] - x[0]).hypot(d.points[a][1] - x[1]);
                let db = (d.points[b][0] - x[0]).hypot(d.points[b][1] - x[1]);
                da.total_cmp(&db)
            })
            .unwrap();
        vel[k].clone()
    };
    let cfg = SolveConfig::new(Method::Exp, Stepper::Euler, d.len() - 1, d.duration());
    let tr = solve(&ds.manifold, field, d.first(), &ds.goal, &cfg).unwrap();
    let rmse = trajectory_rmse(&ds.manifold, &d.points, &tr.points);
    assert!(rmse <= 10.0 * dt * vmax, "{rmse} vs {}", 10.0 * dt * vmax);
}
