//! Exercises the C ABI exactly as a foreign caller would: through raw
//! pointers and error codes.

use std::ffi::CString;
use std::ptr;

use libc::c_int;
use wdro_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0i8; 256];
    let n = unsafe { wdro_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(buf.len() - 1)].iter().map(|&b| b as u8).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

#[test]
fn full_pipeline_through_the_c_abi() {
    unsafe {
        let mut ds: *mut WdroDataset = ptr::null_mut();
        assert_eq!(wdro_dataset_synth_blobs(300, 3, 4.0, 0.1, 7, &mut ds), WDRO_OK);
        assert_eq!(wdro_dataset_len(ds), 300);
        assert_eq!(wdro_dataset_dim(ds), 3);

        let loss = CString::new("logistic").unwrap();
        let norm = CString::new("l2").unwrap();
        let mut model: *mut WdroModel = ptr::null_mut();
        assert_eq!(
            wdro_model_new(loss.as_ptr(), norm.as_ptr(), 7.0, 1, &mut model),
            WDRO_OK
        );

        let theta_anc = [0.5f64, 0.0, 0.0];
        let mut anchors: *mut WdroAnchors = ptr::null_mut();
        assert_eq!(
            wdro_anchors_compute(ds, model, 0.3, theta_anc.as_ptr(), 3, 2.0, &mut anchors),
            WDRO_OK
        );
        assert!(wdro_anchors_lambda(anchors) > 0.0);
        assert!(wdro_anchors_rho(anchors) > 0.0);

        let mut coreset: *mut WdroCoreset = ptr::null_mut();
        assert_eq!(
            wdro_coreset_build(ds, model, anchors, 0.3, 30, 5, &mut coreset),
            WDRO_OK
        );
        assert_eq!(wdro_coreset_support(coreset), 30);

        // persist and reload
        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("c.json").to_str().unwrap()).unwrap();
        assert_eq!(wdro_coreset_write(coreset, path.as_ptr()), WDRO_OK);
        let mut reloaded: *mut WdroCoreset = ptr::null_mut();
        assert_eq!(wdro_coreset_read(path.as_ptr(), &mut reloaded), WDRO_OK);
        assert_eq!(wdro_coreset_support(reloaded), 30);

        // train on the coreset, evaluate on the full distribution
        let mut theta = vec![0.0f64; 3];
        let mut risk_fit = 0.0f64;
        assert_eq!(
            wdro_train(
                ds,
                model,
                anchors,
                coreset,
                0.3,
                40,
                0.0,
                0,
                ptr::null(),
                theta.as_mut_ptr(),
                &mut risk_fit,
            ),
            WDRO_OK
        );
        assert!(risk_fit.is_finite() && risk_fit >= 0.0);

        let mut risk = 0.0f64;
        let mut lambda = 0.0f64;
        let mut boundary: c_int = -1;
        assert_eq!(
            wdro_risk(
                ds,
                model,
                anchors,
                ptr::null(),
                0.3,
                theta.as_ptr(),
                3,
                &mut risk,
                &mut lambda,
                &mut boundary,
            ),
            WDRO_OK
        );
        assert!(risk > 0.0 && lambda >= 0.0);
        assert!(boundary == 0 || boundary == 1);

        // weighted evaluation agrees with training's own risk at theta
        let mut risk_weighted = 0.0f64;
        assert_eq!(
            wdro_risk(
                ds,
                model,
                anchors,
                coreset,
                0.3,
                theta.as_ptr(),
                3,
                &mut risk_weighted,
                ptr::null_mut(),
                ptr::null_mut(),
            ),
            WDRO_OK
        );
        assert!((risk_weighted - risk_fit).abs() <= 1e-9 * risk_fit.max(1.0));

        wdro_coreset_free(reloaded);
        wdro_coreset_free(coreset);
        wdro_anchors_free(anchors);
        wdro_model_free(model);
        wdro_dataset_free(ds);
    }
}

#[test]
fn error_paths_and_messages() {
    unsafe {
        // null output pointer
        assert_eq!(
            wdro_dataset_synth_blobs(10, 2, 1.0, 0.0, 0, ptr::null_mut()),
            WDRO_ERR_USAGE
        );

        // domain error: n < 2
        let mut ds: *mut WdroDataset = ptr::null_mut();
        assert_eq!(
            wdro_dataset_synth_blobs(1, 2, 1.0, 0.0, 0, &mut ds),
            WDRO_ERR_NUMERIC
        );
        assert!(last_error().contains("n >= 2"), "got: {}", last_error());

        // missing file
        let path = CString::new("/definitely/not/here.svm").unwrap();
        assert_eq!(
            wdro_dataset_read_libsvm(path.as_ptr(), 0, &mut ds),
            WDRO_ERR_DATA
        );

        // bad loss string
        let loss = CString::new("ridge").unwrap();
        let norm = CString::new("l2").unwrap();
        let mut model: *mut WdroModel = ptr::null_mut();
        assert_eq!(
            wdro_model_new(loss.as_ptr(), norm.as_ptr(), 7.0, 1, &mut model),
            WDRO_ERR_DATA
        );
        assert!(last_error().contains("unknown loss"));

        // null handles are reported, not dereferenced
        let mut risk = 0.0f64;
        assert_eq!(
            wdro_risk(
                ptr::null(),
                ptr::null(),
                ptr::null(),
                ptr::null(),
                0.3,
                ptr::null(),
                0,
                &mut risk,
                ptr::null_mut(),
                ptr::null_mut(),
            ),
            WDRO_ERR_USAGE
        );

        // freeing null is a no-op
        wdro_dataset_free(ptr::null_mut());
        wdro_model_free(ptr::null_mut());
        wdro_anchors_free(ptr::null_mut());
        wdro_coreset_free(ptr::null_mut());
    }
}

#[test]
fn budget_error_is_numeric() {
    unsafe {
        let mut ds: *mut WdroDataset = ptr::null_mut();
        assert_eq!(wdro_dataset_synth_blobs(50, 2, 3.0, 0.1, 3, &mut ds), WDRO_OK);
        let loss = CString::new("svm").unwrap();
        let norm = CString::new("l2").unwrap();
        let mut model: *mut WdroModel = ptr::null_mut();
        assert_eq!(
            wdro_model_new(loss.as_ptr(), norm.as_ptr(), 7.0, 1, &mut model),
            WDRO_OK
        );
        let anc = [0.4f64, 0.1];
        let mut anchors: *mut WdroAnchors = ptr::null_mut();
        assert_eq!(
            wdro_anchors_compute(ds, model, 0.3, anc.as_ptr(), 2, 1.0, &mut anchors),
            WDRO_OK
        );
        let mut cs: *mut WdroCoreset = ptr::null_mut();
        // budget 0 violates 1 <= s <= n
        assert_eq!(
            wdro_coreset_build(ds, model, anchors, 0.3, 0, 1, &mut cs),
            WDRO_ERR_NUMERIC
        );
        wdro_anchors_free(anchors);
        wdro_model_free(model);
        wdro_dataset_free(ds);
    }
}
