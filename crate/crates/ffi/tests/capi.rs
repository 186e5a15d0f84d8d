use std::ffi::{CStr, CString};
use std::ptr;

use fairlens::color::{ita_of, srgb_to_cielab};
use fairlens::distance::{signed_distance, wasserstein1};
use fairlens::distribution::SkinDistribution;
use fairlens::estimator::fit_bayes;
use fairlens::mitigation::{bce, distance_loss, penalty_weights, LossConfig};
use fairlens_ffi::*;

fn last_error() -> Option<String> {
    let p = fl_last_error_message();
    if p.is_null() {
        None
    } else {
        Some(unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
    }
}

fn make(id: &str, samples: &[f64]) -> *mut FlDistribution {
    let id = CString::new(id).unwrap();
    let mut d = ptr::null_mut();
    let st = unsafe { fl_distribution_new(id.as_ptr(), samples.as_ptr(), samples.len(), &mut d) };
    assert_eq!(st, FlStatus::Ok, "{:?}", last_error());
    assert!(!d.is_null());
    d
}

fn sample_estimator() -> fairlens::estimator::BayesEstimator {
    let d: Vec<f64> = (0..12).map(|i| i as f64 * 3.0 - 18.0).collect();
    let m: Vec<f64> = d.iter().map(|x| 0.8 - 0.01 * x).collect();
    fit_bayes(&d, &m, 1, None).unwrap()
}

fn estimator_handle() -> *mut FlEstimator {
    let json = CString::new(sample_estimator().to_json().unwrap()).unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { fl_estimator_from_json(json.as_ptr(), &mut e) }, FlStatus::Ok);
    e
}

#[test]
fn lab_and_ita_match_the_core() {
    let mut lab = FlLab { l: 0.0, a: 0.0, b: 0.0 };
    assert_eq!(unsafe { fl_srgb_to_lab(200, 150, 120, &mut lab) }, FlStatus::Ok);
    let core = srgb_to_cielab([200, 150, 120]);
    assert_eq!((lab.l, lab.a, lab.b), (core.l, core.a, core.b));

    let mut ita = f64::NAN;
    assert_eq!(unsafe { fl_ita(lab.l, lab.a, lab.b, &mut ita) }, FlStatus::Ok);
    assert_eq!(ita, ita_of(core).unwrap());
    assert!(last_error().is_none());
}

#[test]
fn ita_with_zero_b_is_a_precondition_failure() {
    let mut ita = 7.0;
    assert_eq!(unsafe { fl_ita(60.0, 0.0, 0.0, &mut ita) }, FlStatus::Precondition);
    assert_eq!(ita, 7.0);
    assert!(last_error().unwrap().contains("b = 0"));
    assert_eq!(
        unsafe { fl_ita(60.0, 0.0, f64::NAN, &mut ita) },
        FlStatus::InvalidArgument
    );
}

#[test]
fn successful_call_clears_the_last_error() {
    assert_eq!(unsafe { fl_ita(1.0, 0.0, 1.0, ptr::null_mut()) }, FlStatus::NullPointer);
    assert!(last_error().is_some());
    let mut v = 0.0;
    assert_eq!(unsafe { fl_ita(1.0, 0.0, 1.0, &mut v) }, FlStatus::Ok);
    assert!(last_error().is_none());
}

#[test]
fn distribution_accessors() {
    let d = make("a", &[3.0, -1.0, 2.0, 10.0]);
    let (mut len, mut med, mut q) = (0usize, 0.0, 0.0);
    unsafe {
        assert_eq!(fl_distribution_len(d, &mut len), FlStatus::Ok);
        assert_eq!(fl_distribution_median(d, &mut med), FlStatus::Ok);
        assert_eq!(fl_distribution_quantile(d, 0.25, &mut q), FlStatus::Ok);
    }
    let core = SkinDistribution::new("a", vec![3.0, -1.0, 2.0, 10.0]).unwrap();
    assert_eq!(len, 4);
    assert_eq!(med, core.median());
    assert_eq!(q, -1.0);

    let mut buf = [0.0; 2];
    let mut written = 0;
    assert_eq!(
        unsafe { fl_distribution_samples(d, buf.as_mut_ptr(), 2, &mut written) },
        FlStatus::Ok
    );
    assert_eq!(written, 4);
    assert_eq!(buf, [-1.0, 2.0]);

    assert_eq!(
        unsafe { fl_distribution_quantile(d, 1.5, &mut q) },
        FlStatus::InvalidArgument
    );
    unsafe { fl_distribution_free(d) };
}

#[test]
fn invalid_distributions_are_rejected() {
    let id = CString::new("x").unwrap();
    let mut d = ptr::null_mut();
    unsafe {
        assert_eq!(
            fl_distribution_new(id.as_ptr(), ptr::null(), 0, &mut d),
            FlStatus::InvalidArgument
        );
        assert!(d.is_null());
        assert_eq!(
            fl_distribution_new(id.as_ptr(), ptr::null(), 3, &mut d),
            FlStatus::NullPointer
        );
        let bad = [1.0, f64::INFINITY];
        assert_eq!(
            fl_distribution_new(id.as_ptr(), bad.as_ptr(), 2, &mut d),
            FlStatus::InvalidArgument
        );
        assert_eq!(
            fl_distribution_new(ptr::null(), bad.as_ptr(), 1, &mut d),
            FlStatus::NullPointer
        );
        let not_utf8 = [0xffu8 as std::ffi::c_char, 0];
        assert_eq!(
            fl_distribution_new(not_utf8.as_ptr(), bad.as_ptr(), 1, &mut d),
            FlStatus::InvalidArgument
        );
        fl_distribution_free(ptr::null_mut());
    }
}

#[test]
fn pixels_build_the_same_distribution_as_the_core() {
    let rgb: Vec<u8> = vec![200, 150, 120, 90, 60, 40, 255, 255, 255, 120, 80, 60];
    let mask = [1u8, 1, 1, 0];
    let id = CString::new("img").unwrap();
    let mut d = ptr::null_mut();
    let st = unsafe { fl_distribution_from_pixels(id.as_ptr(), 2, 2, rgb.as_ptr(), mask.as_ptr(), &mut d) };
    assert_eq!(st, FlStatus::Ok, "{:?}", last_error());
    let mut len = 0;
    unsafe { fl_distribution_len(d, &mut len) };
    // White has b = 0 and is excluded; the unmasked pixel is ignored.
    assert_eq!(len, 2);
    let mut buf = [0.0; 2];
    let mut written = 0;
    unsafe { fl_distribution_samples(d, buf.as_mut_ptr(), 2, &mut written) };
    let mut expect = [
        ita_of(srgb_to_cielab([200, 150, 120])).unwrap(),
        ita_of(srgb_to_cielab([90, 60, 40])).unwrap(),
    ];
    expect.sort_by(f64::total_cmp);
    assert_eq!(buf, expect);
    unsafe { fl_distribution_free(d) };

    let all_off = [0u8; 4];
    let st = unsafe { fl_distribution_from_pixels(id.as_ptr(), 2, 2, rgb.as_ptr(), all_off.as_ptr(), &mut d) };
    assert_eq!(st, FlStatus::InvalidArgument);
    assert!(last_error().unwrap().contains("empty distribution"));
}

#[test]
fn image_files_report_io_and_format_errors() {
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("capi_images");
    std::fs::create_dir_all(&dir).unwrap();
    let junk = dir.join("junk.png");
    std::fs::write(&junk, b"not an image").unwrap();
    let missing = CString::new(dir.join("missing.png").to_str().unwrap()).unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    let mut d = ptr::null_mut();
    unsafe {
        assert_eq!(
            fl_distribution_from_image(missing.as_ptr(), missing.as_ptr(), ptr::null(), &mut d),
            FlStatus::Io
        );
        assert_eq!(
            fl_distribution_from_image(junk.as_ptr(), junk.as_ptr(), ptr::null(), &mut d),
            FlStatus::Format
        );
        assert_eq!(
            fl_distribution_from_image(ptr::null(), junk.as_ptr(), ptr::null(), &mut d),
            FlStatus::NullPointer
        );
    }
    assert!(d.is_null());
}

#[test]
fn distances_match_the_core() {
    let a = [-10.0, 0.0, 5.0, 20.0];
    let b = [1.0, 8.0, 30.0];
    let (da, db) = (make("a", &a), make("b", &b));
    let (mut w, mut s_ab, mut s_ba) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(fl_wasserstein1(da, db, &mut w), FlStatus::Ok);
        assert_eq!(fl_signed_distance(da, db, &mut s_ab), FlStatus::Ok);
        assert_eq!(fl_signed_distance(db, da, &mut s_ba), FlStatus::Ok);
    }
    let ca = SkinDistribution::new("a", a.to_vec()).unwrap();
    let cb = SkinDistribution::new("b", b.to_vec()).unwrap();
    assert_eq!(w, wasserstein1(&ca, &cb));
    assert_eq!(s_ab, signed_distance(&ca, &cb).value);
    assert!(s_ab > 0.0 && s_ba < 0.0);
    assert_eq!(s_ab.abs(), w);
    assert_eq!(
        unsafe { fl_wasserstein1(da, ptr::null(), &mut w) },
        FlStatus::NullPointer
    );
    unsafe {
        fl_distribution_free(da);
        fl_distribution_free(db);
    }
}

#[test]
fn estimator_round_trips_through_json_and_files() {
    let core = sample_estimator();
    let e = estimator_handle();
    let (mut p, mut deg) = (0.0, 0usize);
    unsafe {
        assert_eq!(fl_estimator_predict(e, 4.5, &mut p), FlStatus::Ok);
        assert_eq!(fl_estimator_degree(e, &mut deg), FlStatus::Ok);
    }
    assert_eq!(p, core.predict(4.5));
    assert_eq!(deg, 1);
    assert_eq!(
        unsafe { fl_estimator_predict(e, f64::NAN, &mut p) },
        FlStatus::InvalidArgument
    );
    unsafe { fl_estimator_free(e) };

    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("capi_estimator.json");
    std::fs::write(&path, core.to_json().unwrap()).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { fl_estimator_load(cpath.as_ptr(), &mut e) }, FlStatus::Ok);
    assert_eq!(unsafe { fl_estimator_predict(e, -3.0, &mut p) }, FlStatus::Ok);
    assert_eq!(p, core.predict(-3.0));
    unsafe { fl_estimator_free(e) };

    let missing = CString::new(path.with_extension("none").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { fl_estimator_load(missing.as_ptr(), &mut e) }, FlStatus::Io);
    let bad = CString::new("{\"degree\": 1}").unwrap();
    assert_eq!(
        unsafe { fl_estimator_from_json(bad.as_ptr(), &mut e) },
        FlStatus::Format
    );
}

#[test]
fn loss_functions_match_the_core() {
    let eps = [0.9, 0.5, 0.7];
    let mut w = [0.0; 3];
    assert_eq!(
        unsafe { fl_penalty_weights(eps.as_ptr(), 3, w.as_mut_ptr()) },
        FlStatus::Ok
    );
    assert_eq!(w.to_vec(), penalty_weights(&eps).unwrap());
    assert_eq!(
        unsafe { fl_penalty_weights(eps.as_ptr(), 0, w.as_mut_ptr()) },
        FlStatus::InvalidArgument
    );

    let mut v = 0.0;
    assert_eq!(unsafe { fl_bce(0.25, true, 1e-7, &mut v) }, FlStatus::Ok);
    assert_eq!(v, bce(0.25, true, 1e-7));
    assert_eq!(unsafe { fl_bce(0.25, true, 0.0, &mut v) }, FlStatus::InvalidArgument);

    let scores = [0.2, 0.8, 0.6];
    let labels = [0u8, 1, 0];
    let bools = [false, true, false];
    assert_eq!(
        unsafe { fl_weighted_bce(scores.as_ptr(), labels.as_ptr(), w.as_ptr(), 3, 1.0, 1e-7, &mut v) },
        FlStatus::Ok
    );
    let oracle: f64 = (0..3).map(|i| bce(scores[i], bools[i], 1e-7) * w[i]).sum();
    assert!((v - oracle).abs() <= 1e-15);

    let e = estimator_handle();
    let dist = [-5.0, 0.0, 12.0];
    let cfg = LossConfig {
        penalty_start_epoch: 3,
        ..LossConfig::default()
    };
    let core = sample_estimator();
    for epoch in [1, 3, 4, 9] {
        let st = unsafe {
            fl_distance_loss(
                scores.as_ptr(),
                labels.as_ptr(),
                dist.as_ptr(),
                3,
                epoch,
                3,
                1.0,
                e,
                &mut v,
            )
        };
        assert_eq!(st, FlStatus::Ok);
        assert_eq!(v, distance_loss(&scores, &bools, &dist, epoch, &cfg, &core).unwrap());
    }
    let st = unsafe {
        fl_distance_loss(
            scores.as_ptr(),
            labels.as_ptr(),
            dist.as_ptr(),
            3,
            5,
            3,
            -1.0,
            e,
            &mut v,
        )
    };
    assert_eq!(st, FlStatus::InvalidArgument);
    unsafe { fl_estimator_free(e) };
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(fl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
