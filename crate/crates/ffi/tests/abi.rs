use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use splatstream_ffi::*;

fn gaussian(x: f64, y: f64, z: f64) -> SsGaussian {
    SsGaussian { position: [x, y, z], scale: [0.2; 3], rotation: [1.0, 0.0, 0.0, 0.0], color: [0.9, 0.5, 0.1], opacity: 0.9 }
}

fn camera_desc(width: u32, height: u32) -> SsCameraDesc {
    SsCameraDesc {
        fx: 30.0,
        fy: 30.0,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        rotation: [1.0, 0.0, 0.0, 0.0],
        translation: [0.0; 3],
        width,
        height,
        near: 0.1,
        far: 100.0,
    }
}

fn last_error() -> String {
    unsafe {
        let len = ss_last_error_message(ptr::null_mut(), 0);
        let mut buf = vec![0u8; len + 1];
        ss_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len());
        String::from_utf8(buf[..len].to_vec()).unwrap()
    }
}

fn camera(width: u32, height: u32) -> *mut SsCamera {
    let mut cam = ptr::null_mut();
    assert_eq!(unsafe { ss_camera_new(&camera_desc(width, height), &mut cam) }, SsStatus::Ok);
    cam
}

#[test]
fn store_insert_get_remove() {
    unsafe {
        let store = ss_store_new();
        let batch = [gaussian(0.0, 0.0, 4.0), gaussian(0.5, 0.0, 5.0)];
        let mut ids = [0u64; 2];
        assert_eq!(ss_store_insert(store, batch.as_ptr(), 2, 0, ids.as_mut_ptr()), SsStatus::Ok);
        assert_eq!(ids, [0, 1]);
        assert_eq!(ss_store_len(store), 2);

        let mut back = gaussian(0.0, 0.0, 0.0);
        assert_eq!(ss_store_get(store, 1, &mut back), SsStatus::Ok);
        assert_eq!(back.position, [0.5, 0.0, 5.0]);

        let mut removed = 0usize;
        assert_eq!(ss_store_remove(store, [0u64, 7].as_ptr(), 2, &mut removed), SsStatus::Ok);
        assert_eq!(removed, 1);
        assert_eq!(ss_store_get(store, 0, &mut back), SsStatus::InvalidArgument);
        assert!(last_error().contains("id 0"));
        ss_store_free(store);
    }
}

#[test]
fn invalid_input_is_reported_not_panicked() {
    unsafe {
        let store = ss_store_new();
        let mut bad = gaussian(0.0, 0.0, 4.0);
        bad.rotation = [2.0, 0.0, 0.0, 0.0];
        let batch = [gaussian(0.0, 0.0, 4.0), bad];
        assert_eq!(ss_store_insert(store, batch.as_ptr(), 2, 0, ptr::null_mut()), SsStatus::InvalidArgument);
        assert!(last_error().starts_with("gaussian 1"), "{}", last_error());
        assert_eq!(ss_store_len(store), 0);
        assert_eq!(ss_store_insert(ptr::null_mut(), batch.as_ptr(), 1, 0, ptr::null_mut()), SsStatus::NullPointer);
        assert_eq!(ss_store_len(ptr::null()), 0);

        let mut desc = camera_desc(8, 8);
        desc.near = -1.0;
        let mut cam = ptr::null_mut();
        assert_eq!(ss_camera_new(&desc, &mut cam), SsStatus::InvalidArgument);
        assert!(cam.is_null());
        ss_store_free(store);
        ss_store_free(ptr::null_mut());
    }
}

#[test]
fn render_and_gir_into_caller_buffers() {
    unsafe {
        let store = ss_store_new();
        ss_store_insert(store, [gaussian(0.0, 0.0, 4.0)].as_ptr(), 1, 0, ptr::null_mut());
        let cam = camera(16, 12);
        let bg = [0.0f32; 3];

        let mut small = vec![0f32; 10];
        assert_eq!(ss_render(store, cam, bg.as_ptr(), small.as_mut_ptr(), small.len()), SsStatus::BufferTooSmall);
        let mut rgb = vec![0f32; 3 * 16 * 12];
        assert_eq!(ss_render(store, cam, bg.as_ptr(), rgb.as_mut_ptr(), rgb.len()), SsStatus::Ok);
        let center = 3 * (6 * 16 + 8);
        assert!(rgb[center] > 0.5 && rgb[0] < rgb[center]);

        let mut gir = ptr::null_mut();
        assert_eq!(ss_gir_build(store, cam, SsStrategy::MostContributive, 0.5, &mut gir), SsStatus::Ok);
        let mut ids = vec![0i64; 16 * 12];
        assert_eq!(ss_gir_id_map(gir, ids.as_mut_ptr(), ids.len()), SsStatus::Ok);
        assert_eq!(ids[6 * 16 + 8], 0);
        assert!(ids.iter().all(|id| *id == 0 || *id == -1));

        let mut len = 0usize;
        assert_eq!(ss_gir_serialize(gir, ptr::null_mut(), 0, &mut len), SsStatus::Ok);
        let mut bytes = vec![0u8; len];
        assert_eq!(ss_gir_serialize(gir, bytes.as_mut_ptr(), len, &mut len), SsStatus::Ok);
        let parsed = splatstream::gir::deserialize_gir(&bytes).unwrap();
        assert_eq!(parsed.id_map, ids);

        let mut bad = ptr::null_mut();
        assert_eq!(ss_gir_build(store, cam, SsStrategy::Nearest, 1.5, &mut bad), SsStatus::InvalidArgument);
        ss_gir_free(gir);
        ss_camera_free(cam);
        ss_store_free(store);
    }
}

#[test]
fn stream_replaces_identical_frames() {
    unsafe {
        let cam = camera(32, 32);
        let frame = ss_frame_new(32, 32);
        for (i, (px, py)) in [(8u32, 8u32), (24, 8), (8, 24), (24, 24)].into_iter().enumerate() {
            let (x, y) = ((px as f64 + 0.5 - 16.0) * 4.0 / 30.0, (py as f64 + 0.5 - 16.0) * 4.0 / 30.0);
            let mut g = gaussian(x, y, 4.0);
            g.scale = [0.05; 3];
            assert_eq!(ss_frame_set(frame, px, py, &g), SsStatus::Ok, "candidate {i}");
        }
        assert_eq!(ss_frame_set(frame, 40, 0, &gaussian(0.0, 0.0, 4.0)), SsStatus::InvalidArgument);

        let mut config = std::mem::zeroed();
        ss_stream_config_default(&mut config);
        assert_eq!(config.predictor, SsPredictor::GtOracle);
        let mut stream = ptr::null_mut();
        assert_eq!(ss_stream_new(&config, &mut stream), SsStatus::Ok);
        let mut stats = SsFrameStats::default();
        for step in 0..3 {
            assert_eq!(ss_stream_step(stream, cam, frame, &mut stats), SsStatus::Ok, "{}", last_error());
            assert_eq!(stats.inserted, 4);
            assert_eq!(stats.removed, if step == 0 { 0 } else { 4 });
            assert_eq!(ss_stream_live_count(stream), 4);
        }
        assert!((ss_stream_c_ratio(stream) - 8.0 / 12.0).abs() < 1e-12);

        let mut snapshot = ptr::null_mut();
        assert_eq!(ss_stream_snapshot(stream, &mut snapshot), SsStatus::Ok);
        assert_eq!(ss_store_len(snapshot), 4);

        let wrong = camera(16, 16);
        assert_eq!(ss_stream_step(stream, wrong, frame, ptr::null_mut()), SsStatus::Pipeline);
        assert!(!last_error().is_empty());

        config.predictor = SsPredictor::Constant;
        config.predictor_value = 1.0;
        let mut keep_all = ptr::null_mut();
        assert_eq!(ss_stream_new(&config, &mut keep_all), SsStatus::Ok);
        for _ in 0..3 {
            ss_stream_step(keep_all, cam, frame, ptr::null_mut());
        }
        assert_eq!(ss_stream_live_count(keep_all), 12);

        config.tau_mask = 2.0;
        let mut invalid = ptr::null_mut();
        assert_eq!(ss_stream_new(&config, &mut invalid), SsStatus::InvalidArgument);

        ss_stream_free(keep_all);
        ss_stream_free(stream);
        ss_store_free(snapshot);
        ss_frame_free(frame);
        ss_camera_free(wrong);
        ss_camera_free(cam);
    }
}

#[test]
fn box_volume_matches_nested_ratio() {
    unsafe {
        let mut big = gaussian(0.0, 0.0, 0.0);
        big.scale = [1.0; 3];
        let mut small = big;
        small.scale = [0.5, 0.25, 0.5];
        let (mut a, mut b) = (std::mem::zeroed(), std::mem::zeroed());
        assert_eq!(ss_gaussian_obb(&big, 1.0, &mut a), SsStatus::Ok);
        assert_eq!(ss_gaussian_obb(&small, 1.0, &mut b), SsStatus::Ok);
        let mut v = 0.0;
        assert_eq!(ss_obb_intersection_volume(&a, &b, &mut v), SsStatus::Ok);
        assert!((v - 8.0 * 0.5 * 0.25 * 0.5).abs() < 1e-12);
        b.axes[0] = 2.0;
        assert_eq!(ss_obb_intersection_volume(&a, &b, &mut v), SsStatus::InvalidArgument);
    }
}

#[test]
fn load_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.ply");
    let params = splatstream::GaussianParams::isotropic(nalgebra::Vector3::new(0.0, 0.0, 3.0), 0.1, nalgebra::Vector3::repeat(0.5), 0.7);
    splatstream::io::save_scene(&scene, &[params]).unwrap();
    let c = CString::new(scene.to_str().unwrap()).unwrap();
    let missing = CString::new(dir.path().join("none.ply").to_str().unwrap()).unwrap();
    unsafe {
        let mut store = ptr::null_mut();
        assert_eq!(ss_store_load(c.as_ptr(), &mut store), SsStatus::Ok);
        assert_eq!(ss_store_len(store), 1);
        ss_store_free(store);
        let mut other = ptr::null_mut();
        assert_eq!(ss_store_load(missing.as_ptr(), &mut other), SsStatus::Io);
        assert!(last_error().contains("none.ply"));
        assert_eq!(ss_camera_load(missing.as_ptr(), &mut ptr::null_mut()), SsStatus::Io);
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { std::ffi::CStr::from_ptr(ss_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// The generated header must compile as both C and C++.
#[test]
fn header_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/splatstream.h");
    assert!(header.is_file());
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .output();
        match out {
            Ok(o) => assert!(o.status.success(), "{compiler}: {}", String::from_utf8_lossy(&o.stderr)),
            Err(e) => eprintln!("skipping {compiler} header check: {e}"),
        }
    }
}
