use std::ffi::{CStr, CString};
use std::ptr;

use crowdflow::stanet::{init_params, Model, ModelConfig};
use crowdflow_ffi::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn last_error() -> String {
    let p = cf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn det(frame: usize, x: f64, y: f64, confidence: f64) -> CfDetection {
    CfDetection {
        frame,
        x,
        y,
        confidence,
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(cf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn mae_mse_hand_case() {
    let truth = [10.0, 20.0, 30.0, 40.0];
    let est = [12.0, 17.0, 30.0, 45.0];
    let (mut mae, mut mse) = (0.0, 0.0);
    let s = unsafe { cf_mae_mse(truth.as_ptr(), est.as_ptr(), 4, &mut mae, &mut mse) };
    assert_eq!(s, CfStatus::Ok);
    assert!((mae - 2.5).abs() < 1e-12);
    assert!((mse - 9.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn null_pointers_are_reported() {
    cf_clear_error();
    let mut mae = 0.0;
    let s = unsafe { cf_mae_mse(ptr::null(), ptr::null(), 3, &mut mae, ptr::null_mut()) };
    assert_eq!(s, CfStatus::NullPointer);
    assert!(last_error().contains("truth"));
    cf_clear_error();
    assert!(cf_last_error_message().is_null());
}

#[test]
fn density_map_conserves_count() {
    let xy = [10.5, 12.5, 30.0, 20.0, 50.2, 40.7];
    let (w, h) = (64, 48);
    let mut out = vec![0.0; w * h];
    for sigma in [0.0, 2.0] {
        let s = unsafe { cf_density_map(xy.as_ptr(), 3, w, h, sigma, out.as_mut_ptr()) };
        assert_eq!(s, CfStatus::Ok);
        assert!((out.iter().sum::<f64>() - 3.0).abs() < 1e-9);
    }
}

#[test]
fn out_of_image_head_is_rejected() {
    let xy = [100.0, 5.0];
    let mut out = vec![0.0; 16 * 16];
    let s = unsafe { cf_density_map(xy.as_ptr(), 1, 16, 16, 2.0, out.as_mut_ptr()) };
    assert_eq!(s, CfStatus::OutOfBounds);
    assert!(!last_error().is_empty());
}

#[test]
fn localize_track_and_score() {
    let (w, h) = (32, 32);
    let heads = [(5.5, 5.5), (20.5, 10.5)];
    let dets = cf_detections_new();
    let mut gts = Vec::new();
    for frame in 0..3 {
        let mut map = vec![0.0; w * h];
        for (k, &(x, y)) in heads.iter().enumerate() {
            let (j, i) = (x as usize + frame, y as usize);
            map[i * w + j] = 0.9;
            gts.push(CfHead {
                frame,
                id: k as u64,
                x: j as f64 + 0.5,
                y: i as f64 + 0.5,
            });
        }
        let s = unsafe { cf_localize(map.as_ptr(), w, h, frame, 0.25, 3, dets) };
        assert_eq!(s, CfStatus::Ok);
    }
    assert_eq!(unsafe { cf_detections_len(dets) }, 6);

    let mut score = 0.0;
    assert_eq!(
        unsafe { cf_l_map(dets, gts.as_ptr(), gts.len(), &mut score) },
        CfStatus::Ok
    );
    assert!((score - 1.0).abs() < 1e-12);

    let mut tracks = ptr::null_mut();
    assert_eq!(
        unsafe { cf_track(dets, 25.0, 2.0, 2.0, &mut tracks) },
        CfStatus::Ok
    );
    assert_eq!(unsafe { cf_tracklets_len(tracks) }, 2);
    for t in 0..2 {
        let (mut id, mut len, mut conf) = (0u64, 0usize, 0.0);
        assert_eq!(
            unsafe { cf_tracklet_info(tracks, t, &mut id, &mut len, &mut conf) },
            CfStatus::Ok
        );
        assert_eq!(id, t as u64 + 1);
        assert_eq!(len, 3);
        assert!((conf - 0.9).abs() < 1e-12);
        let mut first = det(9, 0.0, 0.0, 0.0);
        assert_eq!(
            unsafe { cf_tracklet_detection(tracks, t, 0, &mut first) },
            CfStatus::Ok
        );
        assert_eq!(first.frame, 0);
    }
    let mut d = det(0, 0.0, 0.0, 0.0);
    assert_eq!(
        unsafe { cf_tracklet_detection(tracks, 0, 3, &mut d) },
        CfStatus::OutOfBounds
    );
    assert_eq!(
        unsafe { cf_tracklet_info(tracks, 2, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) },
        CfStatus::OutOfBounds
    );
    unsafe {
        cf_tracklets_free(tracks);
        cf_detections_free(dets);
    }
}

#[test]
fn detections_roundtrip_and_validation() {
    let dets = cf_detections_new();
    unsafe {
        assert_eq!(
            cf_detections_push(dets, det(2, 1.5, 2.5, 0.7)),
            CfStatus::Ok
        );
        assert_eq!(
            cf_detections_push(dets, det(2, f64::NAN, 2.5, 0.7)),
            CfStatus::NonFinite
        );
        assert_eq!(cf_detections_len(dets), 1);
        let mut out = det(0, 0.0, 0.0, 0.0);
        assert_eq!(cf_detections_get(dets, 0, &mut out), CfStatus::Ok);
        assert_eq!(out, det(2, 1.5, 2.5, 0.7));
        assert_eq!(cf_detections_get(dets, 1, &mut out), CfStatus::OutOfBounds);
        assert_eq!(cf_detections_len(ptr::null()), 0);
        cf_detections_free(dets);
        cf_detections_free(ptr::null_mut());
    }
}

#[test]
fn bad_nms_threshold_is_invalid_argument() {
    let map = vec![0.0; 8 * 8];
    let dets = cf_detections_new();
    let s = unsafe { cf_localize(map.as_ptr(), 8, 8, 0, 1.5, 3, dets) };
    assert_eq!(s, CfStatus::InvalidArgument);
    unsafe { cf_detections_free(dets) };
}

#[test]
fn missing_checkpoint_is_io_error() {
    let path = CString::new("/nonexistent/checkpoint.cfck").unwrap();
    let mut model = ptr::null_mut();
    let s = unsafe { cf_model_load(path.as_ptr(), &mut model) };
    assert_eq!(s, CfStatus::Io);
    assert!(model.is_null());
}

#[test]
fn model_predicts_through_the_c_api() {
    let config = ModelConfig {
        channels: [4, 6, 8, 8],
        group_depth: [1, 1, 1, 1],
        fuse_channels: 4,
        embedding_dim: 4,
        ..Default::default()
    };
    let params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let model = Model { config, params };
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("m.cfck");
    model.to_checkpoint().unwrap().save(&file).unwrap();

    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { cf_model_load(path.as_ptr(), &mut handle) },
        CfStatus::Ok
    );
    let mut tau = 0;
    assert_eq!(unsafe { cf_model_tau(handle, &mut tau) }, CfStatus::Ok);
    assert_eq!(tau, 1);

    let (w, h) = (32, 24);
    let img: Vec<f32> = (0..3 * w * h).map(|i| (i % 17) as f32 / 17.0).collect();
    let mut den = vec![f64::NAN; w * h];
    let mut loc = vec![f64::NAN; w * h];
    let s = unsafe {
        cf_model_predict(
            handle,
            img.as_ptr(),
            img.as_ptr(),
            w,
            h,
            den.as_mut_ptr(),
            loc.as_mut_ptr(),
        )
    };
    assert_eq!(s, CfStatus::Ok);
    assert!(den.iter().chain(&loc).all(|v| v.is_finite()));

    let image = crowdflow::groundtruth::Image {
        width: w,
        height: h,
        channels: 3,
        data: img.clone(),
    };
    let direct = model.predict(&image, &image).unwrap();
    assert_eq!(den, direct.final_density().values);

    let s = unsafe {
        cf_model_predict(
            handle,
            img.as_ptr(),
            img.as_ptr(),
            30,
            20,
            den.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(s, CfStatus::InvalidArgument);
    unsafe { cf_model_free(handle) };
}
