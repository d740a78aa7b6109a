//! C interface to the `nbclaims` core.
//!
//! Every fallible call returns an [`NbStatus`]. On failure a description is
//! kept per thread and can be read with [`nb_last_error_message`]. Strings
//! handed out by this library are owned by the caller and must be released
//! with [`nb_string_free`]; handles have their own `_free` functions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nbclaims::claims::{label_listing, Field};
use nbclaims::corpus::{CleanListing, RawListing};
use nbclaims::gazetteer::{Gazetteer, NormalizationTable};
use nbclaims::geo::{haversine_km, BoundarySet};
use nbclaims::llm::parse_response;
use nbclaims::regression::fit_ols;
use nbclaims::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Gazetteer = 4,
    Geometry = 5,
    RankDeficient = 6,
    Io = 7,
    Panic = 8,
}

/// Which listing field a claim came from.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NbField {
    None = 0,
    Title = 1,
    Body = 2,
    NeighborhoodField = 3,
}

/// Compiled gazetteer plus spelling-normalization table.
pub struct NbLabeler {
    gazetteer: Gazetteer,
    table: NormalizationTable,
}

/// Named neighborhood polygons.
pub struct NbBoundarySet {
    inner: BoundarySet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> NbStatus {
    match err {
        Error::Gazetteer(_) => NbStatus::Gazetteer,
        Error::Geometry(_) => NbStatus::Geometry,
        Error::RankDeficient { .. } => NbStatus::RankDeficient,
        Error::Io { .. } => NbStatus::Io,
        _ => NbStatus::InvalidInput,
    }
}

fn fail(status: NbStatus, msg: impl Into<String>) -> NbStatus {
    set_error(msg);
    status
}

fn from_core(err: Error) -> NbStatus {
    let status = status_of(&err);
    fail(status, err.to_string())
}

/// Run `f`, turning panics into [`NbStatus::Panic`].
fn guard(f: impl FnOnce() -> NbStatus) -> NbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(NbStatus::Panic, "internal panic"))
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, NbStatus> {
    if p.is_null() {
        return Err(fail(NbStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(NbStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, NbStatus> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

fn into_c_string(s: Option<&str>) -> *mut c_char {
    s.and_then(|s| CString::new(s).ok())
        .map_or(ptr::null_mut(), CString::into_raw)
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn nb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or a pointer obtained from this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build a labeler from gazetteer text (`canonical | alias | re:pattern`
/// lines) and an optional `variant,canonical` CSV.
///
/// # Safety
/// `gazetteer` is a valid string, `normalization_csv` is null or a valid
/// string, and `out` points to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn nb_labeler_new(
    gazetteer: *const c_char,
    normalization_csv: *const c_char,
    out: *mut *mut NbLabeler,
) -> NbStatus {
    guard(|| {
        if out.is_null() {
            return fail(NbStatus::NullPointer, "out is null");
        }
        let text = tri!(str_arg(gazetteer, "gazetteer"));
        let csv = tri!(opt_str_arg(normalization_csv, "normalization_csv"));
        let gazetteer = tri!(Gazetteer::parse(text).map_err(from_core));
        let table = match csv {
            Some(csv) => tri!(NormalizationTable::from_csv(csv.as_bytes(), &gazetteer).map_err(from_core)),
            None => tri!(NormalizationTable::new(std::iter::empty::<(&str, &str)>(), &gazetteer).map_err(from_core)),
        };
        *out = Box::into_raw(Box::new(NbLabeler { gazetteer, table }));
        NbStatus::Ok
    })
}

/// Labeler over the shipped Chicago gazetteer and normalization table.
///
/// # Safety
/// `out` points to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn nb_labeler_chicago(out: *mut *mut NbLabeler) -> NbStatus {
    guard(|| {
        if out.is_null() {
            return fail(NbStatus::NullPointer, "out is null");
        }
        let gazetteer = Gazetteer::chicago();
        let table = tri!(NormalizationTable::chicago(&gazetteer).map_err(from_core));
        *out = Box::into_raw(Box::new(NbLabeler { gazetteer, table }));
        NbStatus::Ok
    })
}

/// # Safety
/// `labeler` is null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn nb_labeler_free(labeler: *mut NbLabeler) {
    if !labeler.is_null() {
        drop(Box::from_raw(labeler));
    }
}

/// Number of gazetteer entries, or 0 for a null handle.
///
/// # Safety
/// `labeler` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nb_labeler_len(labeler: *const NbLabeler) -> usize {
    labeler.as_ref().map_or(0, |l| l.gazetteer.len())
}

/// String-match claim for one listing. `*claim_out` receives the canonical
/// name, or null when the listing is unknown. `field` may be null.
///
/// # Safety
/// `labeler` is a live handle, `title` and `body` are valid strings, `field`
/// is null or a valid string, and both out pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn nb_labeler_label(
    labeler: *const NbLabeler,
    title: *const c_char,
    body: *const c_char,
    field: *const c_char,
    claim_out: *mut *mut c_char,
    source_out: *mut NbField,
) -> NbStatus {
    guard(|| {
        let Some(labeler) = labeler.as_ref() else {
            return fail(NbStatus::NullPointer, "labeler is null");
        };
        if claim_out.is_null() || source_out.is_null() {
            return fail(NbStatus::NullPointer, "output pointer is null");
        }
        let title = tri!(str_arg(title, "title"));
        let body = tri!(str_arg(body, "body"));
        let field = tri!(opt_str_arg(field, "field"));
        let listing = CleanListing {
            raw: RawListing {
                id: String::new(),
                title: title.to_string(),
                body: body.to_string(),
                neighborhood_field: field.map(str::to_string),
                latitude: None,
                longitude: None,
                rent: None,
                bedrooms: None,
                bathrooms: None,
                square_footage: None,
                posted_at: None,
            },
            cleaned_title: title.to_string(),
            cleaned_body: body.to_string(),
            duplicate_of: None,
        };
        let label = label_listing(&listing, &labeler.gazetteer);
        *claim_out = into_c_string(label.claim.as_deref());
        *source_out = match label.source_field {
            None => NbField::None,
            Some(Field::Title) => NbField::Title,
            Some(Field::Body) => NbField::Body,
            Some(Field::NeighborhoodField) => NbField::NeighborhoodField,
        };
        NbStatus::Ok
    })
}

/// Canonical claim in a raw model response; `*claim_out` is null for unknown.
///
/// # Safety
/// `labeler` is a live handle, `raw` a valid string, `claim_out` writable.
#[no_mangle]
pub unsafe extern "C" fn nb_labeler_parse_response(
    labeler: *const NbLabeler,
    raw: *const c_char,
    claim_out: *mut *mut c_char,
) -> NbStatus {
    guard(|| {
        let Some(labeler) = labeler.as_ref() else {
            return fail(NbStatus::NullPointer, "labeler is null");
        };
        if claim_out.is_null() {
            return fail(NbStatus::NullPointer, "claim_out is null");
        }
        let raw = tri!(str_arg(raw, "raw"));
        let parsed = parse_response(raw, &labeler.table, &labeler.gazetteer);
        *claim_out = into_c_string(parsed.label.as_deref());
        NbStatus::Ok
    })
}

/// Load neighborhood polygons from GeoJSON text. Names are read from the
/// feature property `name_property`.
///
/// # Safety
/// Both strings are valid and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nb_boundaries_from_geojson(
    geojson: *const c_char,
    name_property: *const c_char,
    out: *mut *mut NbBoundarySet,
) -> NbStatus {
    guard(|| {
        if out.is_null() {
            return fail(NbStatus::NullPointer, "out is null");
        }
        let text = tri!(str_arg(geojson, "geojson"));
        let prop = tri!(str_arg(name_property, "name_property"));
        let inner = tri!(BoundarySet::from_geojson(text, "ffi", prop).map_err(from_core));
        *out = Box::into_raw(Box::new(NbBoundarySet { inner }));
        NbStatus::Ok
    })
}

/// # Safety
/// `set` is null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn nb_boundaries_free(set: *mut NbBoundarySet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Neighborhood containing the point; `*name_out` is null when none does.
///
/// # Safety
/// `set` is a live handle and `name_out` is writable.
#[no_mangle]
pub unsafe extern "C" fn nb_boundaries_assign(
    set: *const NbBoundarySet,
    lat: f64,
    lon: f64,
    name_out: *mut *mut c_char,
) -> NbStatus {
    guard(|| {
        let Some(set) = set.as_ref() else {
            return fail(NbStatus::NullPointer, "set is null");
        };
        if name_out.is_null() {
            return fail(NbStatus::NullPointer, "name_out is null");
        }
        if !(lat.is_finite() && lon.is_finite()) {
            return fail(NbStatus::InvalidInput, "coordinates must be finite");
        }
        *name_out = into_c_string(set.inner.assign(lat, lon));
        NbStatus::Ok
    })
}

/// Great-circle distance in kilometers.
#[no_mangle]
pub extern "C" fn nb_haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    haversine_km(lat1, lon1, lat2, lon2)
}

/// Ordinary least squares on a row-major `n × p` design `x` (include a
/// column of ones for an intercept). Each output array holds `p` values and
/// may be null when not wanted.
///
/// # Safety
/// `x` points to `n * p` doubles, `y` to `n` doubles, and every non-null
/// output to `p` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nb_ols_fit(
    x: *const f64,
    n: usize,
    p: usize,
    y: *const f64,
    coef_out: *mut f64,
    se_out: *mut f64,
    t_out: *mut f64,
    p_out: *mut f64,
) -> NbStatus {
    guard(|| {
        if x.is_null() || y.is_null() {
            return fail(NbStatus::NullPointer, "x or y is null");
        }
        if p == 0 {
            return fail(NbStatus::InvalidInput, "p must be positive");
        }
        let Some(len) = n.checked_mul(p) else {
            return fail(NbStatus::InvalidInput, "n * p overflows");
        };
        let flat = std::slice::from_raw_parts(x, len);
        let rows: Vec<Vec<f64>> = flat.chunks(p).map(<[f64]>::to_vec).collect();
        let response = std::slice::from_raw_parts(y, n);
        let columns: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
        let fit = tri!(fit_ols(&columns, &rows, response).map_err(from_core));
        for (dst, src) in [
            (coef_out, &fit.coefficients),
            (se_out, &fit.std_errors),
            (t_out, &fit.t_values),
            (p_out, &fit.p_values),
        ] {
            if !dst.is_null() {
                ptr::copy_nonoverlapping(src.as_ptr(), dst, p);
            }
        }
        NbStatus::Ok
    })
}
