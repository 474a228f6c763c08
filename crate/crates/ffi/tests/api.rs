use std::ffi::{c_char, CStr};
use std::ptr;

use gpr_approx_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe { gpr_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn line_data(n: usize) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
    let y = x.iter().map(|v| (2.0 * v).sin()).collect();
    (x, y)
}

fn train(method: GprMethod, x: &[f64], y: &[f64], m: usize, params: &[f64]) -> (GprStatus, *mut GprModel) {
    let mut model = ptr::null_mut();
    let s = unsafe {
        gpr_model_train(
            method,
            x.as_ptr(),
            y.len(),
            x.len() / y.len(),
            y.as_ptr(),
            m,
            GprSelector::Random,
            7,
            GprKernel::Isotropic,
            params.as_ptr(),
            params.len(),
            &mut model,
        )
    };
    (s, model)
}

#[test]
fn every_method_trains_and_predicts() {
    let (x, y) = line_data(60);
    let params = [0.0, 0.0, -2.0];
    let xs = [0.55, 2.05, 4.5];
    for method in [GprMethod::Exact, GprMethod::Sod, GprMethod::Fitc, GprMethod::Local] {
        let (s, model) = train(method, &x, &y, 20, &params);
        assert_eq!(s, GprStatus::Ok, "{method:?}: {}", last_error());
        assert_eq!(unsafe { gpr_model_dim(model) }, 1);
        let (mut mean, mut lat, mut obs) = ([0.0; 3], [0.0; 3], [0.0; 3]);
        let s = unsafe {
            gpr_model_predict(
                model,
                xs.as_ptr(),
                3,
                1,
                mean.as_mut_ptr(),
                lat.as_mut_ptr(),
                obs.as_mut_ptr(),
            )
        };
        assert_eq!(s, GprStatus::Ok);
        for j in 0..3 {
            assert!((mean[j] - (2.0 * xs[j]).sin()).abs() < 0.1, "{method:?} {mean:?}");
            assert!((obs[j] - lat[j] - (-4.0f64).exp()).abs() < 1e-12);
        }
        unsafe { gpr_model_free(model) };
    }
}

#[test]
fn exact_model_matches_the_rust_api() {
    let (x, y) = line_data(30);
    let params = [0.3, -0.1, -1.5];
    let (_, model) = train(GprMethod::Exact, &x, &y, 0, &params);
    let xs = [0.33, 1.7];
    let mut mean = [0.0; 2];
    unsafe {
        gpr_model_predict(
            model,
            xs.as_ptr(),
            2,
            1,
            mean.as_mut_ptr(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    unsafe { gpr_model_free(model) };

    let hp = gpr_approx::Hyperparameters::isotropic(0.3, -0.1, -1.5).unwrap();
    let xa = ndarray::Array2::from_shape_vec((30, 1), x.clone()).unwrap();
    let direct = gpr_approx::exact_train(xa.view(), ndarray::ArrayView1::from(&y), &hp).unwrap();
    let p = direct
        .predict(ndarray::Array2::from_shape_vec((2, 1), xs.to_vec()).unwrap().view())
        .unwrap();
    assert_eq!(mean.to_vec(), p.mean.to_vec());

    let (mut value, mut grad) = (0.0, [0.0; 3]);
    let s = unsafe {
        gpr_exact_logml(
            x.as_ptr(),
            30,
            1,
            y.as_ptr(),
            GprKernel::Isotropic,
            params.as_ptr(),
            3,
            &mut value,
            grad.as_mut_ptr(),
        )
    };
    assert_eq!(s, GprStatus::Ok);
    let l = gpr_approx::exact_logml(xa.view(), ndarray::ArrayView1::from(&y), &hp).unwrap();
    assert_eq!(value, l.value);
    assert_eq!(grad.to_vec(), l.grad);
}

#[test]
fn errors_map_to_status_codes() {
    let (x, y) = line_data(10);
    let (s, model) = train(GprMethod::Sod, &x, &y, 11, &[0.0, 0.0, -1.0]);
    assert_eq!(s, GprStatus::InvalidArgument);
    assert!(model.is_null());
    assert!(last_error().contains("m=11"));

    let (s, _) = train(GprMethod::Exact, &x, &y, 0, &[0.0, 0.0]);
    assert_eq!(s, GprStatus::InvalidArgument);

    let mut bad = y.clone();
    bad[3] = f64::NAN;
    let (s, _) = train(GprMethod::Exact, &x, &bad, 0, &[0.0, 0.0, -1.0]);
    assert_eq!(s, GprStatus::NonFinite);

    let (_, model) = train(GprMethod::Exact, &x, &y, 0, &[0.0, 0.0, -1.0]);
    let xs = [0.0, 1.0];
    let mut mean = [0.0];
    let s = unsafe {
        gpr_model_predict(
            model,
            xs.as_ptr(),
            1,
            2,
            mean.as_mut_ptr(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(s, GprStatus::DimensionMismatch);
    let s = unsafe {
        gpr_model_predict(
            ptr::null(),
            xs.as_ptr(),
            1,
            1,
            mean.as_mut_ptr(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(s, GprStatus::NullPointer);
    unsafe { gpr_model_free(model) };
    unsafe { gpr_model_free(ptr::null_mut()) };

    let s = unsafe {
        gpr_model_train(
            GprMethod::Exact,
            ptr::null(),
            1,
            1,
            y.as_ptr(),
            0,
            GprSelector::Fpc,
            0,
            GprKernel::Ard,
            ptr::null(),
            0,
            ptr::null_mut(),
        )
    };
    assert_eq!(s, GprStatus::NullPointer);
}

#[test]
fn synthetic_dataset_round_trip() {
    let mut ds = ptr::null_mut();
    assert_eq!(
        unsafe { gpr_dataset_synthetic(GprSynthetic::Synth8, 50, 20, 3, &mut ds) },
        GprStatus::Ok
    );
    let (mut n, mut t, mut d) = (0, 0, 0);
    assert_eq!(unsafe { gpr_dataset_shape(ds, &mut n, &mut t, &mut d) }, GprStatus::Ok);
    assert_eq!((n, t, d), (50, 20, 8));
    let (mut x, mut y) = (vec![0.0; n * d], vec![0.0; n]);
    assert_eq!(
        unsafe { gpr_dataset_copy(ds, false, x.as_mut_ptr(), y.as_mut_ptr()) },
        GprStatus::Ok
    );
    let direct = gpr_approx::data::generate_synthetic(&gpr_approx::data::SyntheticSpec::synth8(50, 20, 3)).unwrap();
    assert_eq!(x, direct.train_x.iter().copied().collect::<Vec<_>>());
    assert_eq!(y, direct.train_y.to_vec());

    let mut params = vec![0.0; gpr_num_params(GprKernel::Ard, d)];
    let s = unsafe { gpr_learn_hyperparameters(x.as_ptr(), n, d, y.as_ptr(), GprKernel::Ard, 20, params.as_mut_ptr()) };
    assert_eq!(s, GprStatus::Ok, "{}", last_error());
    assert_eq!(params.len(), 10);
    assert!(params.iter().all(|p| p.is_finite()));
    unsafe { gpr_dataset_free(ds) };

    let s = unsafe { gpr_dataset_synthetic(GprSynthetic::Synth2, 0, 5, 0, &mut ds) };
    assert_ne!(s, GprStatus::Ok);
    assert!(ds.is_null());
}
