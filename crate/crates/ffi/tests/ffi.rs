use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use catpose_ffi::*;

fn last_error() -> String {
    let p = catpose_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn rot_z(deg: f64) -> [f64; 9] {
    let (s, c) = deg.to_radians().sin_cos();
    [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]
}

fn apply(p: &CatposePose, x: [f64; 3]) -> [f64; 3] {
    let r = &p.rotation;
    std::array::from_fn(|i| r[3 * i] * x[0] + r[3 * i + 1] * x[1] + r[3 * i + 2] * x[2] + p.translation[i])
}

const K: CatposeIntrinsics = CatposeIntrinsics {
    fx: 577.5,
    fy: 577.5,
    cx: 319.5,
    cy: 239.5,
};

/// Grid of model points seen by a camera at `pose`, every third pixel
/// replaced by junk.
fn scene(pose: &CatposePose, scale: f64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let (mut px, mut model, mut inlier) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..60 {
        let m = [
            ((i * 7) % 11) as f64 / 10.0 - 0.5,
            ((i * 5) % 13) as f64 / 12.0 - 0.5,
            ((i * 3) % 7) as f64 / 6.0 - 0.5,
        ];
        let c = apply(pose, m.map(|v| v * scale));
        model.extend(m);
        if i % 3 == 2 {
            px.extend([40.0 + 9.0 * i as f64, 400.0 - 5.0 * i as f64]);
            inlier.push(false);
        } else {
            px.extend([K.fx * c[0] / c[2] + K.cx, K.fy * c[1] / c[2] + K.cy]);
            inlier.push(true);
        }
    }
    (px, model, inlier)
}

#[test]
fn ransac_round_trip_through_handle() {
    let gt = CatposePose {
        rotation: rot_z(25.0),
        translation: [0.05, -0.02, 1.2],
    };
    let (px, model, inlier) = scene(&gt, 0.3);
    let cfg = catpose_ransac_config_default();
    assert_eq!(cfg.threshold, 2.0);
    let mut h = ptr::null_mut();
    let st = unsafe { catpose_ransac_pnp(px.as_ptr(), model.as_ptr(), 60, 0.3, &K, &cfg, &mut h) };
    assert_eq!(st, CatposeStatus::Ok);
    assert!(!h.is_null());

    let mut pose = CatposePose {
        rotation: [0.0; 9],
        translation: [0.0; 3],
    };
    assert_eq!(unsafe { catpose_pnp_result_pose(h, &mut pose) }, CatposeStatus::Ok);
    let mut err = f64::NAN;
    assert_eq!(unsafe { catpose_rotation_error_deg(pose.rotation.as_ptr(), gt.rotation.as_ptr(), &mut err) }, CatposeStatus::Ok);
    assert!(err < 1e-6, "{err}");
    for i in 0..3 {
        assert!((pose.translation[i] - gt.translation[i]).abs() < 1e-8);
    }

    assert_eq!(unsafe { catpose_pnp_result_inlier_count(h) }, 40);
    let n = unsafe { catpose_pnp_result_len(h) };
    let mut mask = vec![9u8; n];
    assert_eq!(unsafe { catpose_pnp_result_inlier_mask(h, mask.as_mut_ptr(), n) }, CatposeStatus::Ok);
    assert_eq!(mask, inlier.iter().map(|&b| b as u8).collect::<Vec<_>>());
    assert_eq!(unsafe { catpose_pnp_result_inlier_mask(h, mask.as_mut_ptr(), n - 1) }, CatposeStatus::InvalidArgument);

    let (mut mre, mut iters) = (f64::NAN, 0usize);
    assert_eq!(unsafe { catpose_pnp_result_stats(h, &mut mre, &mut iters) }, CatposeStatus::Ok);
    assert!(mre < 1e-6 && iters >= 1);
    unsafe { catpose_pnp_result_free(h) };
    unsafe { catpose_pnp_result_free(ptr::null_mut()) };
}

#[test]
fn ransac_status_codes() {
    let (px, model, _) = scene(
        &CatposePose {
            rotation: rot_z(0.0),
            translation: [0.0, 0.0, 1.0],
        },
        0.2,
    );
    let mut h = ptr::null_mut();
    let st = unsafe { catpose_ransac_pnp(px.as_ptr(), model.as_ptr(), 3, 0.2, &K, ptr::null(), &mut h) };
    assert_eq!(st, CatposeStatus::SolverFailure);
    assert!(h.is_null());
    assert!(last_error().contains("insufficient correspondences"));

    let st = unsafe { catpose_ransac_pnp(px.as_ptr(), model.as_ptr(), 60, -1.0, &K, ptr::null(), &mut h) };
    assert_eq!(st, CatposeStatus::InvalidArgument);

    let mut cfg = catpose_ransac_config_default();
    cfg.confidence = 2.0;
    let st = unsafe { catpose_ransac_pnp(px.as_ptr(), model.as_ptr(), 60, 0.2, &K, &cfg, &mut h) };
    assert_eq!(st, CatposeStatus::InvalidArgument);

    let st = unsafe { catpose_ransac_pnp(ptr::null(), model.as_ptr(), 60, 0.2, &K, ptr::null(), &mut h) };
    assert_eq!(st, CatposeStatus::NullPointer);
    assert!(last_error().contains("pixels"));
    let st = unsafe { catpose_ransac_pnp(px.as_ptr(), model.as_ptr(), 60, 0.2, ptr::null(), ptr::null(), &mut h) };
    assert_eq!(st, CatposeStatus::NullPointer);
}

#[test]
fn umeyama_recovers_similarity() {
    let src: Vec<f64> = (0..10).flat_map(|i| [i as f64 * 0.1, ((i * i) % 7) as f64 * 0.2, (i % 3) as f64]).collect();
    let t = CatposePose {
        rotation: rot_z(40.0),
        translation: [1.0, 2.0, 3.0],
    };
    let dst: Vec<f64> = src
        .chunks(3)
        .flat_map(|p| apply(&t, [1.5 * p[0], 1.5 * p[1], 1.5 * p[2]]))
        .collect();
    let mut s = 0.0;
    let mut pose = t;
    pose.translation = [0.0; 3];
    assert_eq!(unsafe { catpose_umeyama(src.as_ptr(), dst.as_ptr(), 10, true, &mut s, &mut pose) }, CatposeStatus::Ok);
    assert!((s - 1.5).abs() < 1e-12);
    for i in 0..3 {
        assert!((pose.translation[i] - t.translation[i]).abs() < 1e-12);
    }
    assert_eq!(unsafe { catpose_umeyama(src.as_ptr(), dst.as_ptr(), 2, true, &mut s, &mut pose) }, CatposeStatus::InvalidArgument);
}

#[test]
fn scale_helpers_and_rotation_error() {
    let (mut d, mut s) = (0.0, 0.0);
    assert_eq!(unsafe { catpose_gt_offset(0.3, 0.2, &mut d) }, CatposeStatus::Ok);
    assert_eq!(unsafe { catpose_recover_scale(0.2, d, &mut s) }, CatposeStatus::Ok);
    assert!((s - 0.3).abs() < 1e-15);
    assert_eq!(unsafe { catpose_gt_offset(0.3, 0.0, &mut d) }, CatposeStatus::InvalidArgument);
    assert_eq!(unsafe { catpose_recover_scale(0.2, 0.1, ptr::null_mut()) }, CatposeStatus::NullPointer);

    let (a, b) = (rot_z(10.0), rot_z(-20.0));
    let mut e = 0.0;
    assert_eq!(unsafe { catpose_rotation_error_deg(a.as_ptr(), b.as_ptr(), &mut e) }, CatposeStatus::Ok);
    assert!((e - 30.0).abs() < 1e-12);
    let bad = [2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    assert_eq!(unsafe { catpose_rotation_error_deg(a.as_ptr(), bad.as_ptr(), &mut e) }, CatposeStatus::InvalidArgument);
}

#[test]
fn iou_and_evaluator() {
    let id = CatposePose {
        rotation: rot_z(0.0),
        translation: [0.0, 0.0, 2.0],
    };
    let mut moved = id;
    moved.translation[0] = 0.5;
    let ext = [1.0, 1.0, 1.0];
    let mut iou = 0.0;
    assert_eq!(unsafe { catpose_iou3d(&id, 1.0, ext.as_ptr(), &moved, 1.0, ext.as_ptr(), &mut iou) }, CatposeStatus::Ok);
    assert!((iou - 1.0 / 3.0).abs() < 1e-9);
    let flat = [1.0, 0.0, 1.0];
    assert_eq!(unsafe { catpose_iou3d(&id, 1.0, flat.as_ptr(), &id, 1.0, ext.as_ptr(), &mut iou) }, CatposeStatus::InvalidArgument);

    let ev = catpose_evaluator_new();
    let mug = CString::new("mug").unwrap();
    let img = CString::new("a").unwrap();
    unsafe {
        assert_eq!(catpose_evaluator_add_ground_truth(ev, mug.as_ptr(), img.as_ptr(), &id, 1.0, ext.as_ptr()), CatposeStatus::Ok);
        assert_eq!(catpose_evaluator_add_prediction(ev, mug.as_ptr(), img.as_ptr(), 0.9, &moved, 1.0, ext.as_ptr()), CatposeStatus::Ok);
        assert_eq!(catpose_evaluator_add_prediction(ev, mug.as_ptr(), ptr::null(), f64::NAN, &id, 1.0, ext.as_ptr()), CatposeStatus::InvalidArgument);
    }
    let mut map = [f64::NAN; CATPOSE_METRIC_COLUMNS];
    assert_eq!(unsafe { catpose_evaluator_mean_ap(ev, true, map.as_mut_ptr(), map.len()) }, CatposeStatus::Ok);
    // IoU 1/3, 50 cm off, rotation exact
    assert_eq!(map, [0.0, 0.0, 0.0, 100.0, 0.0]);
    assert_eq!(unsafe { catpose_evaluator_mean_ap(ev, true, map.as_mut_ptr(), 4) }, CatposeStatus::InvalidArgument);
    unsafe { catpose_evaluator_free(ev) };

    let empty = catpose_evaluator_new();
    assert_ne!(unsafe { catpose_evaluator_mean_ap(empty, true, map.as_mut_ptr(), map.len()) }, CatposeStatus::Ok);
    unsafe { catpose_evaluator_free(empty) };
}

fn target_dir() -> PathBuf {
    // tests run from <target>/<profile>/deps
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/catpose.h");
    assert!(header.exists(), "header not generated");
    let lib = target_dir().join("libcatpose_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "C smoke test exited with {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout), "ok\n");
}
