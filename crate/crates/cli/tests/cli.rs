use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::{Isometry3, Point3, Vector3};
use tsdf_compress::ingest::{write_tum_sequence, StampedPose, Trajectory, TUM_DEPTH_SCALE};
use tsdf_compress::render::Camera;
use tsdf_compress::shapes::{Primitive, Scene, ShapeSpec};
use tsdf_compress::TsdfVolume;

const BIN: &str = env!("CARGO_BIN_EXE_tsdfc");

struct Run {
    code: i32,
    kv: HashMap<String, String>,
    stderr: String,
}

fn tsdfc(args: &[&str]) -> Run {
    let out = Command::new(BIN).args(args).output().unwrap();
    let kv = String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
        })
        .collect();
    Run {
        code: out.status.code().unwrap_or(-1),
        kv,
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(args: &[&str]) -> HashMap<String, String> {
    let r = tsdfc(args);
    assert_eq!(r.code, 0, "{args:?}\n{}", r.stderr);
    r.kv
}

fn num(kv: &HashMap<String, String>, key: &str) -> f64 {
    kv[key].parse().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A 1.28 m square room with two boxes on the floor.
fn room() -> Scene {
    let corner = |x: f64, y: f64, yaw: f64| {
        ShapeSpec::new(
            Primitive::ConcaveCorner,
            Isometry3::new(Vector3::new(x, y, 0.0), Vector3::z() * yaw),
        )
        .unwrap()
    };
    let cuboid = |h: [f64; 3], c: [f64; 3]| {
        ShapeSpec::new(
            Primitive::Cuboid {
                half_extents: Vector3::from(h),
            },
            Isometry3::translation(c[0], c[1], c[2]),
        )
        .unwrap()
    };
    Scene::new(vec![
        corner(0.0, 0.0, 0.0),
        corner(1.28, 1.28, std::f64::consts::PI),
        cuboid([0.1, 0.08, 0.1], [0.4, 0.5, 0.1]),
        cuboid([0.08, 0.12, 0.06], [0.85, 0.8, 0.06]),
    ])
}

const FOCAL: &str = "50";
const CX: &str = "31.5";
const CY: &str = "23.5";

fn write_sequence(dir: &Path, frames: usize) -> PathBuf {
    let root = dir.join("seq");
    let cam = Camera::new(64, 48, 50.0).unwrap();
    let scene = room();
    let mut poses = Vec::new();
    let mut images = Vec::new();
    for i in 0..frames {
        let t = 1.0 + 0.1 * i as f64;
        let s = i as f64 * 0.01;
        let eye = Point3::new(0.6 + s, 0.55 + 0.5 * s, 0.75);
        let pose = Isometry3::face_towards(&eye, &Point3::new(0.6, 0.65, 0.0), &Vector3::y());
        images.push(cam.render_scene(&scene, &pose, t));
        poses.push(StampedPose::new(t, pose));
    }
    let gt = Trajectory::new(poses).unwrap();
    write_tum_sequence(&root, &images, &gt, TUM_DEPTH_SCALE).unwrap();
    root
}

fn camera_flags() -> Vec<&'static str> {
    vec!["--fx", FOCAL, "--fy", FOCAL, "--cx", CX, "--cy", CY]
}

fn fuse(dir: &Path, seq: &Path) -> PathBuf {
    let vol = dir.join("fused.tsdf");
    let mut args = vec![
        "fuse",
        "--sequence",
        p(seq),
        "--dims",
        "80,80,48",
        "--origin",
        "-0.16,-0.16,-0.16",
        "--out",
        p(&vol),
    ];
    args.extend(camera_flags());
    let kv = ok(&args);
    assert_eq!(kv["fused"], kv["frames"]);
    vol
}

#[test]
fn fuse_compress_decompress_track() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let seq = write_sequence(d, 6);
    let vol = fuse(d, &seq);

    let blocks = d.join("train.tblk");
    ok(&[
        "generate",
        "--count",
        "300",
        "--seed",
        "4",
        "--out",
        p(&blocks),
    ]);
    let harvested = d.join("harvest.tblk");
    let kv = ok(&["harvest", "--volume", p(&vol), "--out", p(&harvested)]);
    assert!(num(&kv, "blocks") > 0.0);

    let pca = d.join("pca.codec");
    let kv = ok(&[
        "fit-pca",
        "--blocks",
        p(&blocks),
        "--k",
        "31",
        "--out",
        p(&pca),
    ]);
    assert_eq!(kv["code_len"], "32");

    let map = d.join("map.tscm");
    let kv = ok(&[
        "compress",
        "--volume",
        p(&vol),
        "--codec",
        p(&pca),
        "--out",
        p(&map),
    ]);
    assert_eq!(num(&kv, "payload_ratio"), 128.0);
    assert_eq!(num(&kv, "payload_bytes"), num(&kv, "coded_blocks") * 128.0);
    assert_eq!(
        num(&kv, "file_bytes"),
        num(&kv, "payload_bytes") + num(&kv, "overhead_bytes")
    );

    let recon = d.join("recon.tsdf");
    let r = tsdfc(&["decompress", "--map", p(&map), "--out", p(&recon)]);
    assert_eq!(r.code, 2, "an external codec must be supplied");
    ok(&[
        "decompress",
        "--map",
        p(&map),
        "--codec",
        p(&pca),
        "--out",
        p(&recon),
    ]);
    let a = TsdfVolume::load(&vol).unwrap();
    let b = TsdfVolume::load(&recon).unwrap();
    assert!(a.same_geometry(&b));

    let kv = ok(&[
        "evaluate-recon",
        "--original",
        p(&vol),
        "--reconstructed",
        p(&recon),
    ]);
    assert!(num(&kv, "mean_mse") > 0.0 && num(&kv, "mean_mse") < 0.05);
    let kv = ok(&[
        "evaluate-recon",
        "--original",
        p(&vol),
        "--reconstructed",
        p(&vol),
    ]);
    assert_eq!(num(&kv, "mean_mse"), 0.0);

    let blurred = d.join("blur.tsdf");
    ok(&["blur", "--volume", p(&vol), "--out", p(&blurred)]);

    for (field, bound) in [(&vol, 0.01), (&recon, 0.06), (&blurred, 0.06)] {
        let traj = d.join("est.txt");
        let mut args = vec![
            "track",
            "--volume",
            p(field),
            "--sequence",
            p(&seq),
            "--out",
            p(&traj),
        ];
        args.extend(camera_flags());
        let kv = ok(&args);
        assert_eq!(kv["failures"], "0");
        let gt = seq.join("groundtruth.txt");
        let kv = ok(&[
            "evaluate-ate",
            "--estimate",
            p(&traj),
            "--groundtruth",
            p(&gt),
        ]);
        assert_eq!(kv["poses"], "6");
        assert!(num(&kv, "rmse") < bound, "{field:?} {kv:?}");
    }
}

#[test]
fn tracking_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let seq = write_sequence(d, 2);
    let empty = d.join("empty.tsdf");
    TsdfVolume::new([32, 32, 32], 0.02, [0.0; 3], -0.04, 0.1)
        .unwrap()
        .save(&empty)
        .unwrap();
    let traj = d.join("est.txt");
    let mut args = vec![
        "track",
        "--volume",
        p(&empty),
        "--sequence",
        p(&seq),
        "--out",
        p(&traj),
    ];
    args.extend(camera_flags());
    let r = tsdfc(&args);
    assert_eq!(r.code, 4, "{}", r.stderr);
    assert_eq!(r.kv["failures"], "2");
    assert!(traj.exists());
}

#[test]
fn exit_codes_for_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let junk = d.join("junk.tblk");
    fs::write(&junk, b"not a block file").unwrap();
    let out = d.join("x");
    assert_eq!(
        tsdfc(&[
            "fit-pca",
            "--blocks",
            p(&junk),
            "--k",
            "3",
            "--out",
            p(&out)
        ])
        .code,
        2
    );

    let blocks = d.join("b.tblk");
    ok(&[
        "generate",
        "--count",
        "20",
        "--seed",
        "1",
        "--out",
        p(&blocks),
    ]);
    assert_eq!(
        tsdfc(&[
            "fit-pca",
            "--blocks",
            p(&blocks),
            "--k",
            "0",
            "--out",
            p(&out)
        ])
        .code,
        3
    );
    assert_eq!(
        tsdfc(&["fit-pca", "--blocks", p(&blocks), "--bogus"]).code,
        3
    );
    assert_eq!(tsdfc(&["--help"]).code, 0);

    let bad_traj = d.join("t.txt");
    fs::write(&bad_traj, "1 0 0 0 0 0 0\n").unwrap();
    assert_eq!(
        tsdfc(&[
            "evaluate-ate",
            "--estimate",
            p(&bad_traj),
            "--groundtruth",
            p(&bad_traj)
        ])
        .code,
        2
    );

    let vol = d.join("v.tsdf");
    TsdfVolume::new([16, 16, 16], 0.02, [0.0; 3], -0.05, 0.1)
        .unwrap()
        .save(&vol)
        .unwrap();
    let pca = d.join("pca.codec");
    ok(&[
        "fit-pca",
        "--blocks",
        p(&blocks),
        "--k",
        "3",
        "--out",
        p(&pca),
    ]);
    let r = tsdfc(&[
        "compress",
        "--volume",
        p(&vol),
        "--codec",
        p(&pca),
        "--out",
        p(&out),
    ]);
    assert_eq!(r.code, 3, "truncation mismatch is a config error");
}

#[test]
fn outputs_are_deterministic_and_config_flags_yield_to_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (a, b) = (d.join("a.tblk"), d.join("b.tblk"));
    ok(&["generate", "--count", "50", "--seed", "9", "--out", p(&a)]);
    ok(&["generate", "--count", "50", "--seed", "9", "--out", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let cfg = d.join("fit.cfg");
    fs::write(&cfg, format!("# pca settings\nblocks = {}\nk = 4\n", p(&a))).unwrap();
    let (c1, c2) = (d.join("c1"), d.join("c2"));
    let kv = ok(&["fit-pca", "--config", p(&cfg), "--out", p(&c1)]);
    assert_eq!(kv["k"], "4");
    let kv = ok(&["fit-pca", "--config", p(&cfg), "--k", "6", "--out", p(&c2)]);
    assert_eq!(kv["k"], "6");
    ok(&["fit-pca", "--config", p(&cfg), "--out", p(&c2)]);
    assert_eq!(fs::read(&c1).unwrap(), fs::read(&c2).unwrap());
}

#[test]
fn hybrid_codecs_and_selection() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let blocks = d.join("b.tblk");
    ok(&[
        "generate",
        "--count",
        "200",
        "--seed",
        "2",
        "--out",
        p(&blocks),
    ]);
    let pca = d.join("pca.codec");
    ok(&[
        "fit-pca",
        "--blocks",
        p(&blocks),
        "--k",
        "15",
        "--out",
        p(&pca),
    ]);
    let ae = d.join("ae.codec");
    let curve = d.join("curve.txt");
    let kv = ok(&[
        "train-ae",
        "--blocks",
        p(&blocks),
        "--code-len",
        "8",
        "--max-epochs",
        "2",
        "--curve",
        p(&curve),
        "--out",
        p(&ae),
    ]);
    assert_eq!(kv["epochs"], "2");
    assert_eq!(fs::read_to_string(&curve).unwrap().lines().count(), 4);

    let par = d.join("par.codec");
    let kv = ok(&[
        "fit-hybrid",
        "--mode",
        "parallel",
        "--blocks",
        p(&blocks),
        "--pca",
        p(&pca),
        "--ae",
        p(&ae),
        "--out",
        p(&par),
    ]);
    assert!(num(&kv, "mse") <= num(&kv, "mse_at_zero").min(num(&kv, "mse_at_one")) + 1e-9);
    let seq = d.join("seq.codec");
    let kv = ok(&[
        "fit-hybrid",
        "--mode",
        "sequential",
        "--blocks",
        p(&blocks),
        "--pca",
        p(&pca),
        "--code-len",
        "8",
        "--max-epochs",
        "2",
        "--out",
        p(&seq),
    ]);
    assert!(num(&kv, "mse") <= num(&kv, "mse_at_zero") + 1e-9);
    let r = tsdfc(&[
        "fit-hybrid",
        "--mode",
        "parallel",
        "--blocks",
        p(&blocks),
        "--pca",
        p(&pca),
        "--out",
        p(&seq),
    ]);
    assert_eq!(r.code, 3);

    let vol = d.join("floor.tsdf");
    // Floors in the lower block layer, one ball per upper block.
    TsdfVolume::from_sdf([32, 32, 32], 0.02, [0.0; 3], -0.04, 0.1, |q| {
        if q.z < 0.32 {
            q.z - 0.1
        } else {
            let c = |v: f64| if v < 0.32 { 0.16 } else { 0.48 };
            (q - Point3::new(c(q.x), c(q.y), 0.48)).norm() - 0.1
        }
    })
    .unwrap()
    .save(&vol)
    .unwrap();
    let map = d.join("map.tscm");
    ok(&[
        "compress",
        "--volume",
        p(&vol),
        "--codec",
        p(&pca),
        "--inline-codec",
        "--out",
        p(&map),
    ]);
    let model = d.join("floor.desc");
    let labels = d.join("labels.txt");
    fs::write(&labels, "1\n1\n1\n1\n0\n0\n0\n0\n").unwrap();
    let kv = ok(&[
        "build-model",
        "--codec",
        p(&pca),
        "--calibrate-map",
        p(&map),
        "--labels",
        p(&labels),
        "--out",
        p(&model),
    ]);
    assert_eq!(kv["codes"], "15");
    let flags = d.join("flags.txt");
    let part = d.join("part.tsdf");
    let kv = ok(&[
        "select",
        "--map",
        p(&map),
        "--model",
        p(&model),
        "--labels",
        p(&labels),
        "--flags",
        p(&flags),
        "--out",
        p(&part),
    ]);
    assert_eq!(kv["flagged"], "4");
    assert_eq!((num(&kv, "precision"), num(&kv, "recall")), (1.0, 1.0));
    assert_eq!(fs::read_to_string(&flags).unwrap().lines().count(), 9);
    let part = TsdfVolume::load(&part).unwrap();
    assert!(part.get(0, 0, 20) == 0.1 && part.weight(0, 0, 20) == 0.0);
}
