use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use scenesim_ffi::*;

fn grid(w: usize, h: usize, px: &[u8]) -> *mut SsmGrid {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { ssm_grid_new(w, h, 0.05, px.as_ptr(), &mut g) }, SsmStatus::Ok);
    g
}

fn last_error() -> String {
    let p = ssm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn textured(w: usize, h: usize) -> Vec<u8> {
    (0..w * h)
        .map(|i| if (i as u64).wrapping_mul(2654435761) % 97 < 40 { 255 } else { 0 })
        .collect()
}

#[test]
fn grid_round_trip_and_info() {
    let px = textured(6, 4);
    let g = grid(6, 4, &px);
    let (mut w, mut h, mut r) = (0, 0, 0.0);
    assert_eq!(unsafe { ssm_grid_info(g, &mut w, &mut h, &mut r) }, SsmStatus::Ok);
    assert_eq!((w, h, r), (6, 4, 0.05));
    let back = unsafe { std::slice::from_raw_parts(ssm_grid_pixels(g), 24) };
    assert_eq!(back, &px[..]);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("g.pgm").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ssm_grid_save_pgm(g, path.as_ptr()) }, SsmStatus::Ok);
    let mut g2 = ptr::null_mut();
    assert_eq!(unsafe { ssm_grid_load_pgm(path.as_ptr(), &mut g2) }, SsmStatus::Ok);
    let back2 = unsafe { std::slice::from_raw_parts(ssm_grid_pixels(g2), 24) };
    assert_eq!(back2, &px[..]);
    unsafe {
        ssm_grid_free(g);
        ssm_grid_free(g2);
        ssm_grid_free(ptr::null_mut());
    }
}

#[test]
fn null_and_invalid_inputs_report_codes() {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { ssm_grid_new(2, 2, 0.05, ptr::null(), &mut g) }, SsmStatus::NullPointer);
    assert!(last_error().contains("pixels"));
    let px = [0u8; 4];
    assert_eq!(unsafe { ssm_grid_new(2, 2, -1.0, px.as_ptr(), &mut g) }, SsmStatus::InvalidArgument);
    assert!(g.is_null());
    let missing = CString::new("/nonexistent/map.pgm").unwrap();
    assert_eq!(unsafe { ssm_grid_load_pgm(missing.as_ptr(), &mut g) }, SsmStatus::Io);
    let bad = CString::new("{not json").unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { ssm_scene_from_json(bad.as_ptr(), &mut s) }, SsmStatus::Parse);
}

#[test]
fn flat_template_has_no_valid_placement() {
    let img = grid(8, 8, &textured(8, 8));
    let tpl = grid(3, 3, &[0; 9]);
    let mut m = SsmMatch::default();
    let angles = [0.0];
    let st = unsafe { ssm_best_match_rotated(img, tpl, angles.as_ptr(), 1, &mut m) };
    assert_eq!(st, SsmStatus::NoValidPlacement);
    unsafe {
        ssm_grid_free(img);
        ssm_grid_free(tpl);
    }
}

#[test]
fn match_finds_embedded_window() {
    let px = textured(16, 12);
    let img = grid(16, 12, &px);
    let sub: Vec<u8> = (0..6).flat_map(|y| px[(3 + y) * 16 + 5..(3 + y) * 16 + 11].to_vec()).collect();
    let tpl = grid(6, 6, &sub);
    let mut m = SsmMatch::default();
    let angles = [0.0, 90.0];
    assert_eq!(unsafe { ssm_best_match_rotated(img, tpl, angles.as_ptr(), 2, &mut m) }, SsmStatus::Ok);
    assert!((m.score - 1.0).abs() < 1e-12);
    assert_eq!((m.x, m.y), (5, 3));
    unsafe {
        ssm_grid_free(img);
        ssm_grid_free(tpl);
    }
}

#[test]
fn scene_rasterize_and_self_similarity() {
    let json = CString::new(
        r#"{"extent_m":[3.0,3.0],"obstacles":[{"type":"circle","cx":1.0,"cy":1.5,"r":0.3},{"type":"rect","cx":2.2,"cy":0.8,"w":0.4,"h":0.6}]}"#,
    )
    .unwrap();
    let mut s = ptr::null_mut();
    let st = unsafe { ssm_scene_from_json(json.as_ptr(), &mut s) };
    assert_eq!(st, SsmStatus::Ok, "{}", if st == SsmStatus::Ok { String::new() } else { last_error() });
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { ssm_scene_rasterize(s, 0.05, &mut g) }, SsmStatus::Ok);
    let mut score = 0.0;
    let angles = [0.0];
    let st = unsafe { ssm_global_similarity(g, g, 20, 20, angles.as_ptr(), 1, 1, &mut score) };
    assert_eq!(st, SsmStatus::Ok, "{}", last_error());
    assert!((score - 1.0).abs() < 1e-9, "{score}");
    unsafe {
        ssm_grid_free(g);
        ssm_scene_free(s);
    }
}

#[test]
fn weights_follow_clipped_counts() {
    let counts = [0u32, 10, 60, 100, 250, 1];
    let mut w = ptr::null_mut();
    assert_eq!(unsafe { ssm_weights_from_counts(3, 2, 0.05, counts.as_ptr(), 100, &mut w) }, SsmStatus::Ok);
    let expected = [0.5, 0.5, 0.6, 1.0, 1.0, 0.5];
    for (i, e) in expected.iter().enumerate() {
        let mut v = 0.0;
        assert_eq!(unsafe { ssm_weights_get(w, i % 3, i / 3, &mut v) }, SsmStatus::Ok);
        assert!((v - e).abs() < 1e-12);
    }
    let mut v = 0.0;
    assert_eq!(unsafe { ssm_weights_get(w, 3, 0, &mut v) }, SsmStatus::InvalidArgument);
    let mut w0 = ptr::null_mut();
    assert_eq!(unsafe { ssm_weights_from_counts(3, 2, 0.05, counts.as_ptr(), 0, &mut w0) }, SsmStatus::InvalidArgument);
    unsafe { ssm_weights_free(w) };
}

#[test]
fn weighted_score_of_exact_crop_is_its_weight() {
    let px = textured(20, 20);
    let global = grid(20, 20, &px);
    let sub: Vec<u8> = (0..6).flat_map(|y| px[(4 + y) * 20 + 7..(4 + y) * 20 + 13].to_vec()).collect();
    let local = grid(6, 6, &sub);
    let counts = vec![100u32; 400];
    let mut w = ptr::null_mut();
    assert_eq!(unsafe { ssm_weights_from_counts(20, 20, 0.05, counts.as_ptr(), 100, &mut w) }, SsmStatus::Ok);
    let maps = [local as *const SsmGrid];
    let angles = [0.0];
    let mut score = 0.0;
    let st = unsafe { ssm_weighted_score(global, maps.as_ptr(), 1, w, angles.as_ptr(), 1, &mut score) };
    assert_eq!(st, SsmStatus::Ok, "{}", last_error());
    assert!((score - 1.0).abs() < 1e-12);
    assert_eq!(ssm_local_similarity(0.4, 0.7), 0.4 - 0.7);
    unsafe {
        ssm_weights_free(w);
        ssm_grid_free(local);
        ssm_grid_free(global);
    }
}

#[test]
fn polar_to_image_centre_and_axes() {
    let (mut x, mut y) = (0i64, 0i64);
    assert_eq!(unsafe { ssm_polar_to_image(0.0, 0.0, 0.05, 60, 60, &mut x, &mut y) }, SsmStatus::Ok);
    assert_eq!((x, y), (30, 30));
    assert_eq!(unsafe { ssm_polar_to_image(1.0, std::f64::consts::FRAC_PI_2, 0.05, 60, 60, &mut x, &mut y) }, SsmStatus::Ok);
    assert_eq!((x, y), (30, 10));
    assert_eq!(unsafe { ssm_polar_to_image(1.0, 0.0, 0.0, 60, 60, &mut x, &mut y) }, SsmStatus::InvalidArgument);
}

#[test]
fn header_is_generated_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/scenesim.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["ssm_grid_new", "ssm_best_match_rotated", "ssm_weighted_score", "SSM_STATUS_OK", "typedef struct SsmGrid SsmGrid"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, "#include \"scenesim.h\"\nint main(void) { return SSM_STATUS_OK; }\n").unwrap();
    match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => eprintln!("no C compiler available ({e}); syntax check skipped"),
    }
}
