//! C interface to `attn-thermo`.
//!
//! Every fallible function returns an [`AtStatus`]; on failure a
//! human-readable message is stored per thread and can be copied out with
//! [`at_last_error_message`]. Simulation results live behind opaque handles
//! that the caller releases with the matching `*_free` function.
//!
//! Output buffers are caller-allocated. Functions that fill a buffer take its
//! length and return [`AtStatus::BufferTooSmall`] if it is too short.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use attn_thermo::equilibrium::{observables, relax_to_equilibrium, softmax_equilibrium, DynamicsConfig, EnergyVector};
use attn_thermo::grokking::{run_experiment, GrokConfig, Precision, RunOptions, RunStatus, RunSummary, TrainRunRecord};
use attn_thermo::infogeom::ProbabilityVector;
use attn_thermo::langevin::{
    crossover_summary, cw_potential, simulate, AnnealSchedule, CWPotentialParams, LangevinConfig, LangevinTrajectory,
};
use attn_thermo::rope::{rope_energy_shift, RotaryParams};
use attn_thermo::scaling::{fit_power_law, fit_power_law_weighted, ScalingPoint};
use attn_thermo::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    NotConverged = 5,
    NotPrime = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Failed = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> AtStatus {
    match err {
        Error::InvalidArgument(_)
        | Error::Constraint(_)
        | Error::BoundaryState(_)
        | Error::SingularDirection { .. } => AtStatus::InvalidArgument,
        Error::Shape(_) => AtStatus::ShapeMismatch,
        Error::NonFinite { .. } | Error::StepRejected { .. } => AtStatus::NonFinite,
        Error::NotConverged { .. } => AtStatus::NotConverged,
        Error::NotPrime(_) => AtStatus::NotPrime,
        Error::Io { .. } | Error::Csv(_) | Error::Json(_) | Error::Schema { .. } => AtStatus::Io,
        _ => AtStatus::Failed,
    }
}

struct Fail(AtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AtStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AtStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AtStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice_in<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_out<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for one write.
unsafe fn write_out<T>(ptr: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    ptr.write(value);
    Ok(())
}

fn bad_series(which: i32) -> Fail {
    Fail(AtStatus::InvalidArgument, format!("unknown series {which}"))
}

fn copy_into(src: &[f64], dst: &mut [f64]) -> Result<(), Fail> {
    if dst.len() < src.len() {
        return Err(Fail(AtStatus::BufferTooSmall, format!("buffer holds {} values, {} needed", dst.len(), src.len())));
    }
    dst[..src.len()].copy_from_slice(src);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn at_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(s) => s,
        Err(_) => panic!("version contains NUL"),
    };
    VERSION.as_ptr()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length in bytes
/// excluding the terminator. Pass a null `buf` to query the length.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn at_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Thermodynamic observables of the softmax equilibrium.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AtObservables {
    pub temperature: f64,
    pub log_z: f64,
    pub z: f64,
    pub internal_energy: f64,
    pub entropy: f64,
    pub free_energy: f64,
    pub specific_heat: f64,
    pub pressure: f64,
}

/// Writes the softmax equilibrium of `n` energies at temperature `t` into
/// `out_rho` (length `n`).
///
/// # Safety
/// `energies` and `out_rho` must be valid for `n` elements.
#[no_mangle]
pub unsafe extern "C" fn at_softmax_equilibrium(energies: *const f64, n: usize, t: f64, out_rho: *mut f64) -> AtStatus {
    guard(|| {
        let e = EnergyVector::new(slice_in(energies, n, "energies")?.to_vec())?;
        let out = slice_out(out_rho, n, "out_rho")?;
        copy_into(softmax_equilibrium(&e, t)?.rho().as_slice(), out)
    })
}

/// Observables of the equilibrium state; `context_volume = 0` means `n`.
///
/// # Safety
/// `energies` must be valid for `n` elements and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn at_observables(
    energies: *const f64,
    n: usize,
    t: f64,
    context_volume: usize,
    out: *mut AtObservables,
) -> AtStatus {
    guard(|| {
        let e = EnergyVector::new(slice_in(energies, n, "energies")?.to_vec())?;
        let state = softmax_equilibrium(&e, t)?;
        let o = observables(&state, if context_volume == 0 { n } else { context_volume })?;
        write_out(
            out,
            AtObservables {
                temperature: o.temperature,
                log_z: o.log_z,
                z: o.z,
                internal_energy: o.u,
                entropy: o.s,
                free_energy: o.f,
                specific_heat: o.cv,
                pressure: o.pressure,
            },
            "out",
        )
    })
}

/// Relaxes the uniform distribution onto the equilibrium by entropic mirror
/// descent. Writes the final distribution and the number of steps taken.
/// Returns `NotConverged` (with the iterate still written) if the residual
/// stays above `tol` after `max_steps`.
///
/// # Safety
/// `energies` and `out_rho` must be valid for `n` elements, `out_steps` null
/// or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn at_relax_to_equilibrium(
    energies: *const f64,
    n: usize,
    t: f64,
    step: f64,
    max_steps: usize,
    tol: f64,
    out_rho: *mut f64,
    out_steps: *mut usize,
) -> AtStatus {
    guard(|| {
        let e = EnergyVector::new(slice_in(energies, n, "energies")?.to_vec())?;
        let out = slice_out(out_rho, n, "out_rho")?;
        let cfg = DynamicsConfig { step, max_steps, convergence_tol: tol, ..DynamicsConfig::default() };
        let r = relax_to_equilibrium(&e, t, &ProbabilityVector::uniform(n)?, &cfg)?;
        copy_into(r.state.rho().as_slice(), out)?;
        if !out_steps.is_null() {
            out_steps.write(r.steps);
        }
        if r.converged {
            Ok(())
        } else {
            Err(Error::NotConverged { steps: r.steps, residual: r.residual }.into())
        }
    })
}

/// Parameters of `V(Φ) = α|Φ|² + β|Φ|² ln(|Φ|²/v²)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtPotential {
    pub alpha: f64,
    pub beta: f64,
    pub v: f64,
}

impl From<AtPotential> for CWPotentialParams {
    fn from(p: AtPotential) -> Self {
        CWPotentialParams { alpha: p.alpha, beta: p.beta, v: p.v }
    }
}

/// Potential at a real (`dim = 1`) or complex (`dim = 2`) field value.
///
/// # Safety
/// `phi` must be valid for `dim` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn at_cw_potential(phi: *const f64, dim: usize, params: AtPotential, out: *mut f64) -> AtStatus {
    guard(|| {
        let p: CWPotentialParams = params.into();
        p.validate()?;
        write_out(out, cw_potential(slice_in(phi, dim, "phi")?, &p)?, "out")
    })
}

/// Radius of the potential minimum, `v·exp(−(α+β)/2β)`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn at_trough_radius(params: AtPotential, out: *mut f64) -> AtStatus {
    guard(|| {
        let p: CWPotentialParams = params.into();
        p.validate()?;
        write_out(out, p.trough_radius(), "out")
    })
}

/// Change in potential when the pair `(q1, q2)` is rotated by the rotary
/// angle for `position`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn at_rope_energy_shift(
    q1: f64,
    q2: f64,
    theta_base: f64,
    position: u64,
    params: AtPotential,
    out: *mut f64,
) -> AtStatus {
    guard(|| {
        let p: CWPotentialParams = params.into();
        p.validate()?;
        let rp = RotaryParams::new(theta_base, position)?;
        write_out(out, rope_energy_shift(q1, q2, &rp, &p)?, "out")
    })
}

/// Everything that determines a Langevin ensemble run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtLangevinParams {
    pub beta: f64,
    pub v: f64,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub anneal_time: f64,
    pub dt: f64,
    pub diffusion: f64,
    pub n_particles: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub field_dim: usize,
    pub window: usize,
    pub initial_phi: f64,
}

/// Fills `out` with the library defaults.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn at_langevin_default_params(out: *mut AtLangevinParams) -> AtStatus {
    guard(|| {
        let (p, s, c) = (CWPotentialParams::default(), AnnealSchedule::default(), LangevinConfig::default());
        write_out(
            out,
            AtLangevinParams {
                beta: p.beta,
                v: p.v,
                alpha_start: s.alpha_start,
                alpha_end: s.alpha_end,
                anneal_time: s.total_time,
                dt: c.dt,
                diffusion: c.diffusion,
                n_particles: c.n_particles,
                n_steps: c.n_steps,
                seed: c.seed,
                field_dim: c.field_dim,
                window: c.window,
                initial_phi: c.initial_phi,
            },
            "out",
        )
    })
}

/// Opaque result of a Langevin run.
pub struct AtLangevinRun {
    traj: LangevinTrajectory,
}

/// Windowed series stored in a Langevin run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtLangevinSeries {
    Time = 0,
    Alpha = 1,
    MeanAbsPhi = 2,
    EnergyMean = 3,
    EnergyVar = 4,
    SpecificHeat = 5,
}

/// Runs the ensemble and stores the trajectory in a new handle.
///
/// # Safety
/// `params` must be valid for one read and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn at_langevin_run(params: *const AtLangevinParams, out: *mut *mut AtLangevinRun) -> AtStatus {
    guard(|| {
        if params.is_null() {
            return Err(null("params"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let a = *params;
        let pot = CWPotentialParams { alpha: a.alpha_start, beta: a.beta, v: a.v };
        let sched = AnnealSchedule { alpha_start: a.alpha_start, alpha_end: a.alpha_end, total_time: a.anneal_time };
        let cfg = LangevinConfig {
            dt: a.dt,
            diffusion: a.diffusion,
            n_particles: a.n_particles,
            n_steps: a.n_steps,
            seed: a.seed,
            field_dim: a.field_dim,
            window: a.window,
            initial_phi: a.initial_phi,
        };
        let traj = simulate(&pot, &sched, &cfg)?;
        out.write(Box::into_raw(Box::new(AtLangevinRun { traj })));
        Ok(())
    })
}

/// Number of windows in the run; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn at_langevin_len(run: *const AtLangevinRun) -> usize {
    run.as_ref().map_or(0, |r| r.traj.len())
}

/// Copies one windowed series (an [`AtLangevinSeries`] value) into `out`
/// (length `len`).
///
/// # Safety
/// `run` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn at_langevin_series(
    run: *const AtLangevinRun,
    which: i32,
    out: *mut f64,
    len: usize,
) -> AtStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let t = &r.traj;
        let src = match which {
            w if w == AtLangevinSeries::Time as i32 => &t.times,
            w if w == AtLangevinSeries::Alpha as i32 => &t.alpha,
            w if w == AtLangevinSeries::MeanAbsPhi as i32 => &t.mean_abs_phi,
            w if w == AtLangevinSeries::EnergyMean as i32 => &t.energy_mean,
            w if w == AtLangevinSeries::EnergyVar as i32 => &t.energy_var,
            w if w == AtLangevinSeries::SpecificHeat as i32 => &t.cv,
            w => return Err(bad_series(w)),
        };
        copy_into(src, slice_out(out, len, "out")?)
    })
}

/// Peak of the windowed specific heat relative to its pre-transition median.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AtCrossover {
    pub transition_window: usize,
    pub peak_window: usize,
    pub peak_time: f64,
    pub peak_cv: f64,
    pub pre_transition_median_cv: f64,
    pub peak_ratio: f64,
}

/// # Safety
/// `run` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn at_langevin_crossover(run: *const AtLangevinRun, out: *mut AtCrossover) -> AtStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let s = crossover_summary(&r.traj)?;
        write_out(
            out,
            AtCrossover {
                transition_window: s.transition_window,
                peak_window: s.peak_window,
                peak_time: s.peak_time,
                peak_cv: s.peak_cv,
                pre_transition_median_cv: s.pre_transition_median_cv,
                peak_ratio: s.peak_ratio,
            },
            "out",
        )
    })
}

/// Releases a Langevin handle; null is ignored.
///
/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn at_langevin_free(run: *mut AtLangevinRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Overrides applied to the default training configuration. Zero fields keep
/// the default.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AtGrokParams {
    pub p: u64,
    pub seed: u64,
    pub max_epochs: usize,
    pub d_model: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Nonzero selects single precision.
    pub single_precision: i32,
}

/// Opaque result of a training run.
pub struct AtGrokRun {
    records: Vec<TrainRunRecord>,
    summary: RunSummary,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtGrokSeries {
    Epoch = 0,
    TrainLoss = 1,
    ValLoss = 2,
    TrainAcc = 3,
    ValAcc = 4,
    CvWeighted = 5,
    CvUnweighted = 6,
    WeightNormSq = 7,
    EffectiveTemperature = 8,
    AttentionEntropy = 9,
}

/// Per-run outcome; epochs are −1 when the event never happened.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AtGrokSummary {
    pub cv_peak_epoch: i64,
    pub cv_peak_value: f64,
    pub memorization_epoch: i64,
    pub generalization_epoch: i64,
    pub peak_precedes_generalization: i32,
    pub epochs_run: usize,
    pub final_train_acc: f64,
    pub final_val_acc: f64,
    /// Nonzero if training diverged.
    pub failed: i32,
}

/// Trains one model on modular addition. This can take minutes to hours.
///
/// # Safety
/// `params` must be valid for one read and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn at_grok_run(params: *const AtGrokParams, out: *mut *mut AtGrokRun) -> AtStatus {
    guard(|| {
        if params.is_null() {
            return Err(null("params"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let a = *params;
        let mut cfg = if a.p == 0 { GrokConfig::default() } else { GrokConfig::for_modulus(a.p) };
        cfg.seed = a.seed;
        if a.max_epochs > 0 {
            cfg.schedule.max_epochs = a.max_epochs;
        }
        if a.d_model > 0 {
            cfg.model.d_model = a.d_model;
        }
        if a.learning_rate > 0.0 {
            cfg.optimizer.learning_rate = a.learning_rate;
        }
        if a.weight_decay > 0.0 {
            cfg.optimizer.weight_decay = a.weight_decay;
        }
        if a.single_precision != 0 {
            cfg.precision = Precision::F32;
        }
        let (records, summary) = run_experiment(&cfg, RunOptions { reproducible: true })?;
        out.write(Box::into_raw(Box::new(AtGrokRun { records, summary })));
        Ok(())
    })
}

/// Number of logged epochs; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn at_grok_len(run: *const AtGrokRun) -> usize {
    run.as_ref().map_or(0, |r| r.records.len())
}

/// Copies one logged series (an [`AtGrokSeries`] value) into `out`.
///
/// # Safety
/// `run` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn at_grok_series(run: *const AtGrokRun, which: i32, out: *mut f64, len: usize) -> AtStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        const SERIES: [fn(&TrainRunRecord) -> f64; 10] = [
            |x| x.epoch as f64,
            |x| x.train_loss,
            |x| x.val_loss,
            |x| x.train_acc,
            |x| x.val_acc,
            |x| x.cv_weighted,
            |x| x.cv_unweighted,
            |x| x.weight_norm_sq,
            |x| x.t_eff,
            |x| x.attn_entropy,
        ];
        let pick = usize::try_from(which).ok().and_then(|i| SERIES.get(i)).ok_or_else(|| bad_series(which))?;
        let src: Vec<f64> = r.records.iter().map(pick).collect();
        copy_into(&src, slice_out(out, len, "out")?)
    })
}

/// # Safety
/// `run` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn at_grok_summary(run: *const AtGrokRun, out: *mut AtGrokSummary) -> AtStatus {
    guard(|| {
        let s = &run.as_ref().ok_or_else(|| null("run"))?.summary;
        let epoch = |e: Option<usize>| e.map_or(-1, |e| e as i64);
        write_out(
            out,
            AtGrokSummary {
                cv_peak_epoch: s.cv_peak_epoch as i64,
                cv_peak_value: s.cv_peak_value,
                memorization_epoch: epoch(s.memorization_epoch),
                generalization_epoch: epoch(s.generalization_epoch),
                peak_precedes_generalization: s.peak_precedes_generalization as i32,
                epochs_run: s.epochs_run,
                final_train_acc: s.final_train_acc,
                final_val_acc: s.final_val_acc,
                failed: matches!(s.status, RunStatus::Failed(_)) as i32,
            },
            "out",
        )
    })
}

/// Releases a training handle; null is ignored.
///
/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn at_grok_free(run: *mut AtGrokRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AtPowerLawFit {
    pub exponent_a: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `cv ≈ exp(intercept)·p^a` by least squares in log–log space. With a
/// non-null `cv_std` every point is weighted by the inverse variance of
/// `ln cv` (`n_seeds` per point, default 1 when null).
///
/// # Safety
/// `moduli` and `cv_mean` must be valid for `n` reads; `cv_std` and
/// `n_seeds` null or valid for `n` reads; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn at_fit_power_law(
    moduli: *const u64,
    cv_mean: *const f64,
    cv_std: *const f64,
    n_seeds: *const usize,
    n: usize,
    out: *mut AtPowerLawFit,
) -> AtStatus {
    guard(|| {
        let ps = slice_in(moduli, n, "moduli")?;
        let means = slice_in(cv_mean, n, "cv_mean")?;
        let stds = if cv_std.is_null() { None } else { Some(slice_in(cv_std, n, "cv_std")?) };
        let counts = if n_seeds.is_null() { None } else { Some(slice_in(n_seeds, n, "n_seeds")?) };
        let points: Vec<ScalingPoint> = (0..n)
            .map(|i| ScalingPoint {
                p: ps[i],
                cv_peak_mean: means[i],
                cv_peak_std: stds.map_or(0.0, |s| s[i]),
                n_seeds: counts.map_or(1, |c| c[i]),
            })
            .collect();
        let fit = if stds.is_some() { fit_power_law_weighted(&points)? } else { fit_power_law(&points)? };
        write_out(
            out,
            AtPowerLawFit { exponent_a: fit.exponent_a, intercept: fit.intercept, r_squared: fit.r_squared },
            "out",
        )
    })
}
