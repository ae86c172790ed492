use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use crowdflow::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    OutOfBounds = 4,
    NonFinite = 5,
    Format = 6,
    Io = 7,
    Utf8 = 8,
    Panic = 9,
}

impl From<&Error> for CfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape { .. } => CfStatus::Shape,
            Error::InvalidArgument(_) => CfStatus::InvalidArgument,
            Error::OutOfBounds { .. } => CfStatus::OutOfBounds,
            Error::NonFinite(_) => CfStatus::NonFinite,
            Error::Format { .. } | Error::Json(_) | Error::Csv(_) => CfStatus::Format,
            Error::Io { .. } => CfStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

pub(crate) fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(text).expect("nul bytes removed")));
}

/// Failure carried out of an API body.
pub(crate) struct Fail(pub CfStatus, pub String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(CfStatus::from(&e), e.to_string())
    }
}

pub(crate) fn null(what: &str) -> Fail {
    Fail(CfStatus::NullPointer, format!("{what} is null"))
}

pub(crate) fn invalid(msg: impl Into<String>) -> Fail {
    Fail(CfStatus::InvalidArgument, msg.into())
}

/// Run `body`, recording the message of any error or panic.
pub(crate) fn guard(body: impl FnOnce() -> Result<(), Fail>) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            CfStatus::Panic
        }
    }
}

/// Message of the last failed call on this thread, or null if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Forget the last error message on this thread.
#[no_mangle]
pub extern "C" fn cf_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}
