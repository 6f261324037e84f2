use std::ffi::{CStr, CString};
use std::ptr;

use ldsa_core::encoder::{count_params, EncoderConfig, Variant};
use ldsa_ffi::*;

fn matrix(rows: usize, cols: usize, data: &[f64]) -> *mut LdsaMatrix {
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { ldsa_matrix_new(rows, cols, data.as_ptr(), &mut m) },
        LdsaStatus::Ok
    );
    m
}

fn read(m: *const LdsaMatrix) -> (usize, usize, Vec<f64>) {
    unsafe {
        let (r, c) = (ldsa_matrix_rows(m), ldsa_matrix_cols(m));
        let mut buf = vec![0.0; r * c];
        assert_eq!(ldsa_matrix_copy_data(m, buf.as_mut_ptr(), buf.len()), LdsaStatus::Ok);
        (r, c, buf)
    }
}

fn last_error() -> String {
    let p = ldsa_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn matrix_round_trip() {
    let data: Vec<f64> = (0..6).map(f64::from).collect();
    let m = matrix(2, 3, &data);
    assert_eq!(read(m), (2, 3, data));
    let mut small = [0.0; 2];
    assert_eq!(
        unsafe { ldsa_matrix_copy_data(m, small.as_mut_ptr(), 2) },
        LdsaStatus::InvalidArgument
    );
    unsafe { ldsa_matrix_free(m) };
    unsafe { ldsa_matrix_free(ptr::null_mut()) };
}

#[test]
fn null_pointers_are_reported() {
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { ldsa_matrix_new(2, 2, ptr::null(), &mut m) },
        LdsaStatus::NullPointer
    );
    assert!(m.is_null());
    assert!(last_error().contains("data"));
    let mut y = ptr::null_mut();
    let status = unsafe { ldsa_attention_forward(ptr::null(), ptr::null(), &mut y, 0, ptr::null_mut()) };
    assert_eq!(status, LdsaStatus::NullPointer);
}

#[test]
fn attention_forward_shapes_and_weights() {
    let (t, d, c) = (9, 8, 3);
    let x = matrix(t, d, &(0..t * d).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>());
    for (mech, width) in [
        (LdsaMechanism::Sa, t),
        (LdsaMechanism::Dsa, t),
        (LdsaMechanism::Ldsa, c),
    ] {
        let mut layer = ptr::null_mut();
        assert_eq!(
            unsafe { ldsa_attention_new(mech, d, 2, c, 16, 5, &mut layer) },
            LdsaStatus::Ok
        );
        let (mut y, mut w) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            unsafe { ldsa_attention_forward(layer, x, &mut y, 1, &mut w) },
            LdsaStatus::Ok
        );
        let (r, cols, data) = read(y);
        assert_eq!((r, cols), (t, d));
        assert!(data.iter().all(|v| v.is_finite()));
        let (wr, wc, wdata) = read(w);
        assert_eq!((wr, wc), (t, width));
        if mech != LdsaMechanism::Ldsa {
            for row in wdata.chunks(wc) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let mut bad = ptr::null_mut();
        assert_eq!(
            unsafe { ldsa_attention_forward(layer, x, &mut bad, 2, &mut w) },
            LdsaStatus::InvalidArgument
        );
        unsafe {
            ldsa_matrix_free(y);
            ldsa_matrix_free(w);
            ldsa_attention_free(layer);
        }
    }
    unsafe { ldsa_matrix_free(x) };
}

#[test]
fn dsa_capacity_and_even_context_map_to_codes() {
    let mut layer = ptr::null_mut();
    assert_eq!(
        unsafe { ldsa_attention_new(LdsaMechanism::Dsa, 4, 1, 3, 5, 0, &mut layer) },
        LdsaStatus::Ok
    );
    let x = matrix(6, 4, &[0.1; 24]);
    let mut y = ptr::null_mut();
    assert_eq!(
        unsafe { ldsa_attention_forward(layer, x, &mut y, 0, ptr::null_mut()) },
        LdsaStatus::Capacity
    );
    assert!(y.is_null());
    assert!(last_error().contains("t_max=5"));
    unsafe {
        ldsa_attention_free(layer);
        ldsa_matrix_free(x);
    }
    let mut even = ptr::null_mut();
    let status = unsafe { ldsa_attention_new(LdsaMechanism::Ldsa, 4, 1, 4, 0, 0, &mut even) };
    assert_ne!(status, LdsaStatus::Ok);
    assert!(even.is_null());
}

#[test]
fn attention_save_load_preserves_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut layer = ptr::null_mut();
    assert_eq!(
        unsafe { ldsa_attention_new(LdsaMechanism::Ldsa, 8, 2, 5, 0, 11, &mut layer) },
        LdsaStatus::Ok
    );
    assert_eq!(unsafe { ldsa_attention_save(layer, path.as_ptr()) }, LdsaStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(
        unsafe { ldsa_attention_load(path.as_ptr(), &mut loaded) },
        LdsaStatus::Ok
    );
    let x = matrix(7, 8, &(0..56).map(|i| i as f64 / 56.0).collect::<Vec<_>>());
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(
            ldsa_attention_forward(layer, x, &mut a, 0, ptr::null_mut()),
            LdsaStatus::Ok
        );
        assert_eq!(
            ldsa_attention_forward(loaded, x, &mut b, 0, ptr::null_mut()),
            LdsaStatus::Ok
        );
    }
    assert_eq!(read(a), read(b));
    unsafe {
        for m in [a, b, x] {
            ldsa_matrix_free(m);
        }
        ldsa_attention_free(layer);
        ldsa_attention_free(loaded);
    }
}

#[test]
fn encoder_forward_and_reload() {
    let cfg = EncoderConfig::tiny(Variant::Ha);
    let json = CString::new(cfg.to_json()).unwrap();
    let mut enc = ptr::null_mut();
    assert_eq!(unsafe { ldsa_encoder_new(json.as_ptr(), 4, &mut enc) }, LdsaStatus::Ok);
    let feats = matrix(
        40,
        cfg.feat_dim,
        &(0..40 * cfg.feat_dim).map(|i| (i as f64).cos()).collect::<Vec<_>>(),
    );
    let mut y = ptr::null_mut();
    assert_eq!(unsafe { ldsa_encoder_forward(enc, feats, &mut y) }, LdsaStatus::Ok);
    let (r, c, first) = read(y);
    assert_eq!((r, c), (9, cfg.d));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ldsa_encoder_save(enc, path.as_ptr()) }, LdsaStatus::Ok);
    let mut reloaded = ptr::null_mut();
    assert_eq!(
        unsafe { ldsa_encoder_load(path.as_ptr(), &mut reloaded) },
        LdsaStatus::Ok
    );
    let mut y2 = ptr::null_mut();
    assert_eq!(
        unsafe { ldsa_encoder_forward(reloaded, feats, &mut y2) },
        LdsaStatus::Ok
    );
    assert_eq!(read(y2).2, first);

    let short = matrix(6, cfg.feat_dim, &vec![0.0; 6 * cfg.feat_dim]);
    let mut y3 = ptr::null_mut();
    assert_eq!(
        unsafe { ldsa_encoder_forward(enc, short, &mut y3) },
        LdsaStatus::TooShort
    );
    unsafe {
        for m in [y, y2, feats, short] {
            ldsa_matrix_free(m);
        }
        ldsa_encoder_free(enc);
        ldsa_encoder_free(reloaded);
    }
}

#[test]
fn bad_config_json_is_a_parse_error() {
    let json = CString::new("{not json").unwrap();
    let mut enc = ptr::null_mut();
    assert_eq!(
        unsafe { ldsa_encoder_new(json.as_ptr(), 0, &mut enc) },
        LdsaStatus::Parse
    );
    assert!(enc.is_null());
}

#[test]
fn param_counts_match_core() {
    let cfg = EncoderConfig::full(Variant::Ldsa);
    let json = CString::new(cfg.to_json()).unwrap();
    let (mut weights, mut total) = (0u64, 0u64);
    assert_eq!(
        unsafe { ldsa_count_params(json.as_ptr(), &mut weights, &mut total) },
        LdsaStatus::Ok
    );
    let table = count_params(&cfg).unwrap();
    assert_eq!(weights, table.total.weights as u64);
    assert_eq!(total, table.total.total as u64);

    let mut s = ptr::null_mut();
    assert_eq!(unsafe { ldsa_param_table_json(json.as_ptr(), &mut s) }, LdsaStatus::Ok);
    let text = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { ldsa_string_free(s) };
    assert_eq!(text, table.to_json());
}

#[test]
fn noam_matches_core() {
    for step in [1u64, 100, 25_000, 100_000] {
        assert_eq!(
            ldsa_noam_lr(step, 320, 25_000, 1.0),
            ldsa_core::train::noam_lr(step as usize, 320, 25_000, 1.0)
        );
    }
    let v = unsafe { CStr::from_ptr(ldsa_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ldsa.h")).unwrap();
    for name in [
        "ldsa_last_error_message",
        "ldsa_matrix_new",
        "ldsa_matrix_free",
        "ldsa_matrix_copy_data",
        "ldsa_attention_new",
        "ldsa_attention_forward",
        "ldsa_attention_save",
        "ldsa_attention_load",
        "ldsa_encoder_new",
        "ldsa_encoder_load",
        "ldsa_encoder_forward",
        "ldsa_count_params",
        "ldsa_param_table_json",
        "ldsa_string_free",
        "ldsa_noam_lr",
        "typedef struct LdsaMatrix LdsaMatrix",
        "LDSA_STATUS_CAPACITY = 4",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
