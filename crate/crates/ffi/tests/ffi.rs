use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use attn_thermo_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    unsafe {
        at_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(at_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn equilibrium_of_two_equal_energies() {
    let e = [0.0, 0.0];
    let mut rho = [0.0; 2];
    let mut obs = AtObservables::default();
    unsafe {
        assert_eq!(at_softmax_equilibrium(e.as_ptr(), 2, 1.0, rho.as_mut_ptr()), AtStatus::Ok);
        assert_eq!(at_observables(e.as_ptr(), 2, 1.0, 0, &mut obs), AtStatus::Ok);
    }
    assert_eq!(rho, [0.5, 0.5]);
    assert!((obs.entropy - 2f64.ln()).abs() < 1e-15);
    assert_eq!(obs.pressure, 0.5);
}

#[test]
fn error_codes_and_messages() {
    let e = [0.0, 1.0];
    let mut rho = [0.0; 2];
    unsafe {
        assert_eq!(at_softmax_equilibrium(e.as_ptr(), 2, -1.0, rho.as_mut_ptr()), AtStatus::InvalidArgument);
        assert!(last_error().contains("temperature"), "{}", last_error());
        assert_eq!(at_softmax_equilibrium(ptr::null(), 2, 1.0, rho.as_mut_ptr()), AtStatus::NullPointer);
        assert_eq!(at_softmax_equilibrium(e.as_ptr(), 2, 1.0, ptr::null_mut()), AtStatus::NullPointer);
        let len = at_last_error_message(ptr::null_mut(), 0);
        assert_eq!(len, last_error().len());
        assert!(len > 0);
    }
}

#[test]
fn relaxation_converges_to_softmax() {
    let e = [0.3, -1.2, 0.7, 2.0];
    let (mut relaxed, mut exact) = ([0.0; 4], [0.0; 4]);
    let mut steps = 0usize;
    unsafe {
        assert_eq!(
            at_relax_to_equilibrium(e.as_ptr(), 4, 0.5, 1.0, 10_000, 1e-12, relaxed.as_mut_ptr(), &mut steps),
            AtStatus::Ok
        );
        assert_eq!(at_softmax_equilibrium(e.as_ptr(), 4, 0.5, exact.as_mut_ptr()), AtStatus::Ok);
    }
    let gap: f64 = relaxed.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum();
    assert!(gap < 1e-9);
    assert!(steps > 0);
    unsafe {
        assert_eq!(
            at_relax_to_equilibrium(e.as_ptr(), 4, 0.5, 1.0, 1, 1e-12, relaxed.as_mut_ptr(), ptr::null_mut()),
            AtStatus::NotConverged
        );
    }
}

#[test]
fn potential_geometry() {
    let p = AtPotential { alpha: 0.0, beta: 1.0, v: 1.0 };
    let mut r = 0.0;
    let mut dv = 1.0;
    unsafe {
        assert_eq!(at_trough_radius(p, &mut r), AtStatus::Ok);
        assert_eq!(at_rope_energy_shift(0.3, -0.8, 0.01, 17, p, &mut dv), AtStatus::Ok);
        assert_eq!(at_trough_radius(AtPotential { beta: 0.0, ..p }, &mut r), AtStatus::InvalidArgument);
    }
    assert!((r - (-0.5f64).exp()).abs() < 1e-15);
    assert!(dv.abs() < 1e-12);

    let phi = [r, 0.0];
    let mut v = 0.0;
    unsafe {
        assert_eq!(at_cw_potential(phi.as_ptr(), 2, p, &mut v), AtStatus::Ok);
        assert_eq!(at_cw_potential(phi.as_ptr(), 3, p, &mut v), AtStatus::InvalidArgument);
    }
}

#[test]
fn langevin_handle_lifecycle() {
    let mut params = unsafe {
        let mut p = std::mem::zeroed::<AtLangevinParams>();
        assert_eq!(at_langevin_default_params(&mut p), AtStatus::Ok);
        p
    };
    params.n_particles = 16;
    params.n_steps = 1000;
    params.window = 50;
    let mut run: *mut AtLangevinRun = ptr::null_mut();
    unsafe {
        assert_eq!(at_langevin_run(&params, &mut run), AtStatus::Ok);
        let n = at_langevin_len(run);
        assert_eq!(n, 20);
        let mut cv = vec![0.0; n];
        assert_eq!(at_langevin_series(run, AtLangevinSeries::SpecificHeat as i32, cv.as_mut_ptr(), n), AtStatus::Ok);
        assert!(cv.iter().all(|c| c.is_finite() && *c >= 0.0));
        assert_eq!(
            at_langevin_series(run, AtLangevinSeries::Time as i32, cv.as_mut_ptr(), n - 1),
            AtStatus::BufferTooSmall
        );
        assert_eq!(at_langevin_series(run, 99, cv.as_mut_ptr(), n), AtStatus::InvalidArgument);
        let mut c = AtCrossover::default();
        assert_eq!(at_langevin_crossover(run, &mut c), AtStatus::Ok);
        assert!(c.peak_window < n);
        at_langevin_free(run);
        at_langevin_free(ptr::null_mut());
        assert_eq!(at_langevin_len(ptr::null()), 0);
    }

    params.dt = -1.0;
    unsafe {
        assert_eq!(at_langevin_run(&params, &mut run), AtStatus::InvalidArgument);
    }
}

#[test]
fn grok_handle_reports_series_and_summary() {
    let params = AtGrokParams { p: 5, seed: 1, max_epochs: 3, d_model: 8, ..Default::default() };
    let mut run: *mut AtGrokRun = ptr::null_mut();
    unsafe {
        assert_eq!(at_grok_run(&params, &mut run), AtStatus::Ok);
        let n = at_grok_len(run);
        assert_eq!(n, 4);
        let mut epochs = vec![0.0; n];
        assert_eq!(at_grok_series(run, AtGrokSeries::Epoch as i32, epochs.as_mut_ptr(), n), AtStatus::Ok);
        assert_eq!(epochs, [0.0, 1.0, 2.0, 3.0]);
        assert_eq!(at_grok_series(run, -1, epochs.as_mut_ptr(), n), AtStatus::InvalidArgument);
        let mut s = AtGrokSummary::default();
        assert_eq!(at_grok_summary(run, &mut s), AtStatus::Ok);
        assert_eq!(s.epochs_run, 3);
        assert_eq!(s.failed, 0);
        at_grok_free(run);

        let bad = AtGrokParams { p: 4, ..params };
        assert_eq!(at_grok_run(&bad, &mut run), AtStatus::NotPrime);
    }
}

#[test]
fn power_law_fit() {
    let ps = [19u64, 23, 37, 59];
    let cv: Vec<f64> = ps.iter().map(|&p| 0.7 * (p as f64).powf(0.25)).collect();
    let mut fit = AtPowerLawFit::default();
    unsafe {
        assert_eq!(at_fit_power_law(ps.as_ptr(), cv.as_ptr(), ptr::null(), ptr::null(), 4, &mut fit), AtStatus::Ok);
        assert!((fit.exponent_a - 0.25).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(
            at_fit_power_law(ps.as_ptr(), cv.as_ptr(), ptr::null(), ptr::null(), 2, &mut fit),
            AtStatus::InvalidArgument
        );
    }
}

/// The generated header compiles as C when a C compiler is available.
#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/attn_thermo.h");
    let text = std::fs::read_to_string(&header).expect("header generated by the build script");
    for symbol in ["at_softmax_equilibrium", "at_langevin_run", "at_langevin_free", "at_grok_run", "AT_STATUS_OK"] {
        assert!(text.contains(symbol), "{symbol} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(&src, format!("#include \"{}\"\nint main(void) {{ return AT_STATUS_OK; }}\n", header.display()))
        .unwrap();
    match Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).output() {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler found; skipped compiling the header"),
    }
}
