//! C ABI for the sample-blending library.
//!
//! The interface hands out two opaque handles — a loaded data set and a
//! computed weight set — plus plain `#[repr(C)]` result structs. Every
//! fallible call returns a [`BsStatus`]; on any status other than
//! `BS_STATUS_OK` a human-readable message is stored in thread-local
//! storage and can be read with [`bs_last_error`].
//!
//! Ownership rules are the usual ones for C interfaces: handles returned
//! through out-pointers belong to the caller and must be released with the
//! matching `bs_*_free` function; strings returned by the library are
//! borrowed and must not be freed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::str::FromStr;

use blendstat::blending::{KappaRule, Scheme};
use blendstat::dataset::{load_dataset, Dataset, Schema};
use blendstat::estimation::{adequacy_test, VarianceMethod};
use blendstat::workflow::{
    compute_weights, estimate_means, EstimateSpec, WeightSpec, WeightsOutput,
};
use blendstat::Error;

/// Status of a call. Anything but `OK` leaves a message for
/// [`bs_last_error`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsStatus {
    /// The call succeeded.
    Ok = 0,
    /// A pointer was null, a string was not UTF-8, a buffer was too small,
    /// or an argument was otherwise unusable.
    InvalidArgument = 1,
    /// The requested configuration is inconsistent.
    Config = 2,
    /// The data could not be read or failed validation.
    Data = 3,
    /// A model fit failed.
    Fit = 4,
    /// The sample-membership probabilities could not be assembled.
    Propensity = 5,
    /// Calibration (raking) failed or did not converge.
    Raking = 6,
    /// The operation does not apply to the requested weighting scheme.
    Scheme = 7,
    /// A variance computation failed.
    Variance = 8,
    /// A replication (jackknife) computation failed.
    Replication = 9,
    /// The library panicked; the handle states are unspecified.
    Panic = 10,
}

/// A loaded pooled sample (probability plus convenience units).
pub struct BsDataset {
    inner: Dataset,
}

/// Computed blending weights together with the recipe that produced them.
/// The recipe is kept so that estimation can refit everything per jackknife
/// replicate.
pub struct BsWeights {
    spec: WeightSpec,
    output: WeightsOutput,
    dataset_len: usize,
}

/// A weighted mean with its uncertainty.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BsEstimate {
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Kish design effect of the weights over the units used.
    pub deff: f64,
    /// Units with an observed outcome.
    pub n_used: usize,
}

/// Result of the blending-adequacy test: the convenience-minus-probability
/// difference of weighted outcome means and its significance.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BsAdequacy {
    pub delta: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub mean_prob: f64,
    pub mean_conv: f64,
}

/// Summary of a computed weight set.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BsWeightsSummary {
    /// Number of weights (equals the data set's unit count).
    pub n: usize,
    /// Kish design effect `n Σw² / (Σw)²`.
    pub deff: f64,
    /// Blending coefficient for disjoint schemes; NaN for simultaneous ones.
    pub kappa: f64,
    /// Symmetric trimming fraction that was applied.
    pub trim_pct: f64,
    /// Weights pulled to a trimming bound.
    pub n_trimmed: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: String) {
    let stored = CString::new(message)
        .unwrap_or_else(|_| CString::new("error message contained a NUL byte").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = stored);
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::default());
}

fn fail(status: BsStatus, message: impl Into<String>) -> BsStatus {
    set_error(message.into());
    status
}

fn fail_with(error: &Error) -> BsStatus {
    let status = match error.exit_code() {
        2 => BsStatus::Config,
        3 => BsStatus::Data,
        4 => BsStatus::Fit,
        5 => BsStatus::Propensity,
        6 => BsStatus::Raking,
        7 => BsStatus::Scheme,
        8 => BsStatus::Variance,
        9 => BsStatus::Replication,
        _ => BsStatus::InvalidArgument,
    };
    fail(status, error.to_string())
}

/// Run `body` with panics converted to [`BsStatus::Panic`].
fn guarded(body: impl FnOnce() -> BsStatus) -> BsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(BsStatus::Panic, "internal panic"),
    }
}

/// Read a required C string argument.
///
/// # Safety
/// `ptr`, when non-null, must point to a NUL-terminated string.
unsafe fn required_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, BsStatus> {
    if ptr.is_null() {
        return Err(fail(BsStatus::InvalidArgument, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(BsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Read an array of C strings.
///
/// # Safety
/// `ptr` must point to `len` valid C strings when `len > 0`.
unsafe fn string_list(
    ptr: *const *const c_char,
    len: usize,
    what: &str,
) -> Result<Vec<String>, BsStatus> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if ptr.is_null() {
        return Err(fail(
            BsStatus::InvalidArgument,
            format!("{what} is null but its length is {len}"),
        ));
    }
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let entry = *ptr.add(i);
        out.push(required_str(entry, &format!("{what}[{i}]"))?.to_string());
    }
    Ok(out)
}

unsafe fn required_ref<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, BsStatus> {
    ptr.as_ref()
        .ok_or_else(|| fail(BsStatus::InvalidArgument, format!("{what} is null")))
}

/// The library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// The message of the most recent failure on this thread, or an empty
/// string. The pointer stays valid until the next failing `bs_*` call on
/// the same thread; do not free it.
#[no_mangle]
pub extern "C" fn bs_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Load a pooled sample from a CSV file.
///
/// The file must carry `id`, `sample` (`prob`/`conv`) and `d_star` columns,
/// the named auxiliary columns (numeric, complete) and the named outcome
/// columns (numeric, empty cells allowed). On success `*out` receives a
/// handle owned by the caller; release it with [`bs_dataset_free`].
///
/// # Safety
/// `path`, the two string arrays and `out` must be valid pointers as
/// described; string arrays must hold `n_auxiliaries` / `n_outcomes`
/// entries.
#[no_mangle]
pub unsafe extern "C" fn bs_dataset_load_csv(
    path: *const c_char,
    auxiliaries: *const *const c_char,
    n_auxiliaries: usize,
    outcomes: *const *const c_char,
    n_outcomes: usize,
    out: *mut *mut BsDataset,
) -> BsStatus {
    guarded(|| {
        if out.is_null() {
            return fail(BsStatus::InvalidArgument, "out is null");
        }
        let path = match required_str(path, "path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        let aux = match string_list(auxiliaries, n_auxiliaries, "auxiliaries") {
            Ok(v) => v,
            Err(status) => return status,
        };
        let outs = match string_list(outcomes, n_outcomes, "outcomes") {
            Ok(v) => v,
            Err(status) => return status,
        };
        let schema = match Schema::new(aux, outs) {
            Ok(s) => s,
            Err(e) => return fail_with(&e),
        };
        match load_dataset(Path::new(path), schema) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(BsDataset { inner: ds }));
                clear_error();
                BsStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Release a data-set handle. Null is allowed.
///
/// # Safety
/// `ds` must be a handle from [`bs_dataset_load_csv`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bs_dataset_free(ds: *mut BsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Total number of units; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bs_dataset_total(ds: *const BsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Number of probability-sample units; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bs_dataset_probability(ds: *const BsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.prob_indices().len())
}

/// Number of convenience-sample units; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bs_dataset_convenience(ds: *const BsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.conv_indices().len())
}

/// Compute blending weights.
///
/// `scheme` is one of `"sps"`, `"dps"`, `"sc"`, `"dc"`. `kappa` fixes the
/// blending coefficient for the disjoint schemes; pass NaN for the
/// precision-optimal coefficient. `trim_pct` is the symmetric trimming
/// fraction in `[0, 0.5)` (0 disables trimming). The membership model and
/// any calibration use every auxiliary column of the data set; calibration
/// benchmarks are estimated from the probability sample. On success `*out`
/// receives a handle owned by the caller; release it with
/// [`bs_weights_free`].
///
/// # Safety
/// `ds` must be a live data-set handle; `scheme` a valid C string; `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bs_weights_compute(
    ds: *const BsDataset,
    scheme: *const c_char,
    kappa: f64,
    trim_pct: f64,
    out: *mut *mut BsWeights,
) -> BsStatus {
    guarded(|| {
        if out.is_null() {
            return fail(BsStatus::InvalidArgument, "out is null");
        }
        let ds = match required_ref(ds, "dataset") {
            Ok(d) => d,
            Err(status) => return status,
        };
        let scheme = match required_str(scheme, "scheme") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let scheme = match Scheme::from_str(scheme) {
            Ok(s) => s,
            Err(e) => return fail_with(&e),
        };
        let mut spec = WeightSpec::new(scheme, ds.inner.schema().auxiliaries.clone());
        spec.kappa = if kappa.is_nan() {
            KappaRule::Auto
        } else {
            KappaRule::Fixed(kappa)
        };
        spec.trim_pct = trim_pct;
        if let Err(e) = spec.validate() {
            return fail_with(&e);
        }
        match compute_weights(&ds.inner, &spec) {
            Ok(output) => {
                *out = Box::into_raw(Box::new(BsWeights {
                    spec,
                    output,
                    dataset_len: ds.inner.len(),
                }));
                clear_error();
                BsStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Release a weights handle. Null is allowed.
///
/// # Safety
/// `w` must be a handle from [`bs_weights_compute`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bs_weights_free(w: *mut BsWeights) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Number of weights; 0 for a null handle.
///
/// # Safety
/// `w` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bs_weights_len(w: *const BsWeights) -> usize {
    w.as_ref().map_or(0, |w| w.output.weights.weights.len())
}

/// Copy the weights, in data-set unit order, into `buffer`.
///
/// # Safety
/// `w` must be a live handle and `buffer` must have room for `capacity`
/// doubles; `capacity` must be at least [`bs_weights_len`].
#[no_mangle]
pub unsafe extern "C" fn bs_weights_copy(
    w: *const BsWeights,
    buffer: *mut f64,
    capacity: usize,
) -> BsStatus {
    guarded(|| {
        let w = match required_ref(w, "weights") {
            Ok(w) => w,
            Err(status) => return status,
        };
        if buffer.is_null() {
            return fail(BsStatus::InvalidArgument, "buffer is null");
        }
        let values = &w.output.weights.weights;
        if capacity < values.len() {
            return fail(
                BsStatus::InvalidArgument,
                format!("buffer holds {capacity} values, need {}", values.len()),
            );
        }
        std::ptr::copy_nonoverlapping(values.as_ptr(), buffer, values.len());
        clear_error();
        BsStatus::Ok
    })
}

/// Fill `out` with a summary of the weight set.
///
/// # Safety
/// `w` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bs_weights_summary(
    w: *const BsWeights,
    out: *mut BsWeightsSummary,
) -> BsStatus {
    guarded(|| {
        let w = match required_ref(w, "weights") {
            Ok(w) => w,
            Err(status) => return status,
        };
        if out.is_null() {
            return fail(BsStatus::InvalidArgument, "out is null");
        }
        let ws = &w.output.weights;
        *out = BsWeightsSummary {
            n: ws.weights.len(),
            deff: ws.kish_deff(),
            kappa: ws.kappa.unwrap_or(f64::NAN),
            trim_pct: ws.trim_pct,
            n_trimmed: ws.trimmed.iter().filter(|&&t| t).count(),
        };
        clear_error();
        BsStatus::Ok
    })
}

/// Estimate the weighted population mean of `outcome`.
///
/// With `jackknife` false the standard error is by Taylor linearization
/// (`groups` and `seed` are ignored); with it true a delete-a-group
/// jackknife refits the entire weighting pipeline on each of `groups`
/// replicates, with replicate groups assigned by `seed`. `alpha` sets the
/// two-sided confidence level to `1 − alpha`. The weights handle supplies
/// the weighting recipe and must come from the same data set.
///
/// # Safety
/// `ds` and `w` must be live handles; `outcome` a valid C string; `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bs_estimate_mean(
    ds: *const BsDataset,
    w: *const BsWeights,
    outcome: *const c_char,
    jackknife: bool,
    groups: usize,
    seed: u64,
    alpha: f64,
    out: *mut BsEstimate,
) -> BsStatus {
    guarded(|| {
        let ds = match required_ref(ds, "dataset") {
            Ok(d) => d,
            Err(status) => return status,
        };
        let w = match required_ref(w, "weights") {
            Ok(w) => w,
            Err(status) => return status,
        };
        let outcome = match required_str(outcome, "outcome") {
            Ok(o) => o,
            Err(status) => return status,
        };
        if out.is_null() {
            return fail(BsStatus::InvalidArgument, "out is null");
        }
        if w.dataset_len != ds.inner.len() {
            return fail(
                BsStatus::InvalidArgument,
                format!(
                    "weights were computed for {} units, data set has {}",
                    w.dataset_len,
                    ds.inner.len()
                ),
            );
        }
        let mut espec = EstimateSpec::new(if jackknife {
            VarianceMethod::Jackknife
        } else {
            VarianceMethod::Linearized
        });
        espec.outcomes = vec![outcome.to_string()];
        espec.groups = groups;
        espec.seed = seed;
        espec.alpha = alpha;
        match estimate_means(&ds.inner, &w.spec, &espec) {
            Ok(reports) => {
                let r = &reports[0];
                *out = BsEstimate {
                    estimate: r.estimate,
                    se: r.se,
                    ci_low: r.ci_low,
                    ci_high: r.ci_high,
                    deff: r.deff,
                    n_used: r.n_used,
                };
                clear_error();
                BsStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Test whether the two samples agree on `outcome` under the handle's
/// weights. Only disjoint schemes (`dps`, `dc`) are accepted: simultaneous
/// weights do not keep the two samples separately representative, which is
/// what the test needs.
///
/// # Safety
/// `ds` and `w` must be live handles; `outcome` a valid C string; `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bs_adequacy(
    ds: *const BsDataset,
    w: *const BsWeights,
    outcome: *const c_char,
    out: *mut BsAdequacy,
) -> BsStatus {
    guarded(|| {
        let ds = match required_ref(ds, "dataset") {
            Ok(d) => d,
            Err(status) => return status,
        };
        let w = match required_ref(w, "weights") {
            Ok(w) => w,
            Err(status) => return status,
        };
        let outcome = match required_str(outcome, "outcome") {
            Ok(o) => o,
            Err(status) => return status,
        };
        if out.is_null() {
            return fail(BsStatus::InvalidArgument, "out is null");
        }
        if w.dataset_len != ds.inner.len() {
            return fail(
                BsStatus::InvalidArgument,
                format!(
                    "weights were computed for {} units, data set has {}",
                    w.dataset_len,
                    ds.inner.len()
                ),
            );
        }
        match adequacy_test(&ds.inner, outcome, &w.output.weights) {
            Ok(t) => {
                *out = BsAdequacy {
                    delta: t.delta,
                    se: t.se,
                    z: t.z,
                    p_value: t.p_value,
                    mean_prob: t.mean_prob,
                    mean_conv: t.mean_conv,
                };
                clear_error();
                BsStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use std::fmt::Write as _;
    use std::ptr;

    fn write_sample_csv(dir: &std::path::Path) -> std::path::PathBuf {
        let mut csv = String::from("id,sample,d_star,x1,x2,y\n");
        for i in 0..60 {
            let x1 = f64::from(i % 2 == 0);
            let x2 = (f64::from(i) * 0.618).fract();
            let y = 5.0 + x1 + 2.0 * x2 + (f64::from(i) * 1.3).sin();
            writeln!(csv, "p{i},prob,0.1,{x1},{x2:.6},{y:.6}").unwrap();
        }
        for i in 0..90 {
            // The convenience sample skews toward x1 = 1.
            let x1 = f64::from(i % 4 != 0);
            let x2 = (f64::from(i) * 0.414).fract();
            let y = 5.0 + x1 + 2.0 * x2 + (f64::from(i) * 2.1).sin();
            writeln!(csv, "c{i},conv,,{x1},{x2:.6},{y:.6}").unwrap();
        }
        let path = dir.join("pooled.csv");
        std::fs::write(&path, csv).unwrap();
        path
    }

    struct Loaded {
        ds: *mut BsDataset,
        _dir: tempfile::TempDir,
    }

    fn load() -> Loaded {
        let dir = tempfile::tempdir().unwrap();
        let path = write_sample_csv(dir.path());
        let path_c = CString::new(path.to_str().unwrap()).unwrap();
        let aux: Vec<CString> = ["x1", "x2"]
            .iter()
            .map(|s| CString::new(*s).unwrap())
            .collect();
        let aux_ptrs: Vec<*const c_char> = aux.iter().map(|s| s.as_ptr()).collect();
        let outcome = CString::new("y").unwrap();
        let outcome_ptrs = [outcome.as_ptr()];
        let mut ds: *mut BsDataset = ptr::null_mut();
        let status = unsafe {
            bs_dataset_load_csv(
                path_c.as_ptr(),
                aux_ptrs.as_ptr(),
                aux_ptrs.len(),
                outcome_ptrs.as_ptr(),
                outcome_ptrs.len(),
                &mut ds,
            )
        };
        assert_eq!(status, BsStatus::Ok);
        assert!(!ds.is_null());
        Loaded { ds, _dir: dir }
    }

    fn weights(ds: *const BsDataset, scheme: &str) -> *mut BsWeights {
        let scheme_c = CString::new(scheme).unwrap();
        let mut w: *mut BsWeights = ptr::null_mut();
        let status = unsafe { bs_weights_compute(ds, scheme_c.as_ptr(), f64::NAN, 0.01, &mut w) };
        assert_eq!(status, BsStatus::Ok, "{}", last_error_string());
        assert!(!w.is_null());
        w
    }

    fn last_error_string() -> String {
        unsafe { CStr::from_ptr(bs_last_error()) }
            .to_string_lossy()
            .into_owned()
    }

    #[test]
    fn version_is_a_static_string() {
        let v = unsafe { CStr::from_ptr(bs_version()) }.to_str().unwrap();
        assert!(!v.is_empty());
        assert!(v.split('.').count() >= 2);
    }

    #[test]
    fn full_round_trip() {
        let loaded = load();
        let ds = loaded.ds;
        unsafe {
            assert_eq!(bs_dataset_total(ds), 150);
            assert_eq!(bs_dataset_probability(ds), 60);
            assert_eq!(bs_dataset_convenience(ds), 90);

            let w = weights(ds, "dps");
            let n = bs_weights_len(w);
            assert_eq!(n, 150);

            let mut summary = BsWeightsSummary {
                n: 0,
                deff: 0.0,
                kappa: 0.0,
                trim_pct: 0.0,
                n_trimmed: 0,
            };
            assert_eq!(bs_weights_summary(w, &mut summary), BsStatus::Ok);
            assert_eq!(summary.n, 150);
            assert!(summary.deff >= 1.0);
            assert!((0.0..=1.0).contains(&summary.kappa));
            assert_eq!(summary.trim_pct, 0.01);

            let mut buffer = vec![0.0_f64; n];
            assert_eq!(bs_weights_copy(w, buffer.as_mut_ptr(), n), BsStatus::Ok);
            assert!(buffer.iter().all(|&v| v.is_finite() && v >= 0.0));
            assert!(buffer.iter().sum::<f64>() > 0.0);

            let outcome = CString::new("y").unwrap();
            let mut lin = BsEstimate {
                estimate: 0.0,
                se: 0.0,
                ci_low: 0.0,
                ci_high: 0.0,
                deff: 0.0,
                n_used: 0,
            };
            assert_eq!(
                bs_estimate_mean(ds, w, outcome.as_ptr(), false, 0, 0, 0.05, &mut lin),
                BsStatus::Ok,
                "{}",
                last_error_string()
            );
            assert!(lin.se > 0.0);
            assert!(lin.ci_low < lin.estimate && lin.estimate < lin.ci_high);
            assert_eq!(lin.n_used, 150);

            let mut jk = lin;
            assert_eq!(
                bs_estimate_mean(ds, w, outcome.as_ptr(), true, 16, 7, 0.05, &mut jk),
                BsStatus::Ok,
                "{}",
                last_error_string()
            );
            assert_eq!(jk.estimate, lin.estimate);
            assert!(jk.se > 0.0);

            // Same seed, same answer.
            let mut jk2 = lin;
            assert_eq!(
                bs_estimate_mean(ds, w, outcome.as_ptr(), true, 16, 7, 0.05, &mut jk2),
                BsStatus::Ok
            );
            assert_eq!(jk.se, jk2.se);

            let mut adequacy = BsAdequacy {
                delta: 0.0,
                se: 0.0,
                z: 0.0,
                p_value: 0.0,
                mean_prob: 0.0,
                mean_conv: 0.0,
            };
            assert_eq!(
                bs_adequacy(ds, w, outcome.as_ptr(), &mut adequacy),
                BsStatus::Ok,
                "{}",
                last_error_string()
            );
            assert!((0.0..=1.0).contains(&adequacy.p_value));
            assert!(adequacy.se > 0.0);
            assert!((adequacy.delta - (adequacy.mean_conv - adequacy.mean_prob)).abs() < 1e-12);

            bs_weights_free(w);
            bs_dataset_free(ds);
        }
    }

    #[test]
    fn adequacy_refuses_simultaneous_weights() {
        let loaded = load();
        unsafe {
            let w = weights(loaded.ds, "sps");
            let outcome = CString::new("y").unwrap();
            let mut adequacy = BsAdequacy {
                delta: 0.0,
                se: 0.0,
                z: 0.0,
                p_value: 0.0,
                mean_prob: 0.0,
                mean_conv: 0.0,
            };
            let status = bs_adequacy(loaded.ds, w, outcome.as_ptr(), &mut adequacy);
            assert_eq!(status, BsStatus::Scheme);
            assert!(!last_error_string().is_empty());
            bs_weights_free(w);
            bs_dataset_free(loaded.ds);
        }
    }

    #[test]
    fn errors_set_status_and_message() {
        unsafe {
            // Missing file.
            let path = CString::new("/nonexistent/file.csv").unwrap();
            let aux = CString::new("x1").unwrap();
            let aux_ptrs = [aux.as_ptr()];
            let outcome = CString::new("y").unwrap();
            let outcome_ptrs = [outcome.as_ptr()];
            let mut ds: *mut BsDataset = ptr::null_mut();
            let status = bs_dataset_load_csv(
                path.as_ptr(),
                aux_ptrs.as_ptr(),
                1,
                outcome_ptrs.as_ptr(),
                1,
                &mut ds,
            );
            assert_eq!(status, BsStatus::Data);
            assert!(ds.is_null());
            assert!(!last_error_string().is_empty());

            // Null pointers.
            assert_eq!(
                bs_dataset_load_csv(
                    ptr::null(),
                    aux_ptrs.as_ptr(),
                    1,
                    outcome_ptrs.as_ptr(),
                    1,
                    &mut ds
                ),
                BsStatus::InvalidArgument
            );
            assert_eq!(
                bs_dataset_load_csv(
                    path.as_ptr(),
                    ptr::null(),
                    1,
                    outcome_ptrs.as_ptr(),
                    1,
                    &mut ds
                ),
                BsStatus::InvalidArgument
            );

            let loaded = load();

            // Unknown scheme string.
            let bad_scheme = CString::new("magic").unwrap();
            let mut w: *mut BsWeights = ptr::null_mut();
            let status = bs_weights_compute(loaded.ds, bad_scheme.as_ptr(), f64::NAN, 0.0, &mut w);
            assert_eq!(status, BsStatus::Config);
            assert!(w.is_null());

            // Buffer too small.
            let w = weights(loaded.ds, "sc");
            let mut tiny = vec![0.0_f64; 3];
            assert_eq!(
                bs_weights_copy(w, tiny.as_mut_ptr(), tiny.len()),
                BsStatus::InvalidArgument
            );

            // Unknown outcome name.
            let missing = CString::new("absent").unwrap();
            let mut est = BsEstimate {
                estimate: 0.0,
                se: 0.0,
                ci_low: 0.0,
                ci_high: 0.0,
                deff: 0.0,
                n_used: 0,
            };
            let status =
                bs_estimate_mean(loaded.ds, w, missing.as_ptr(), false, 0, 0, 0.05, &mut est);
            assert_ne!(status, BsStatus::Ok);
            assert!(!last_error_string().is_empty());

            bs_weights_free(w);
            bs_dataset_free(loaded.ds);
        }
    }
}
