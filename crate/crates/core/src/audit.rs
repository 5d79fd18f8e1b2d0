//! Records which files the data loaders open, and which network requests
//! the caption client sends, on the current thread.
//!
//! Tests use this to check that disabled branches never touch their inputs
//! and that offline captioning never calls out.

use std::cell::RefCell;
use std::path::{Path, PathBuf};

thread_local! {
    static LOG: RefCell<Option<Vec<PathBuf>>> = const { RefCell::new(None) };
    static NET: RefCell<Option<Vec<String>>> = const { RefCell::new(None) };
}

/// Starts recording file reads on this thread, clearing any previous log.
pub fn start() {
    LOG.with(|l| *l.borrow_mut() = Some(Vec::new()));
    NET.with(|l| *l.borrow_mut() = Some(Vec::new()));
}

/// Stops recording and returns every path read since [`start`].
pub fn finish() -> Vec<PathBuf> {
    LOG.with(|l| l.borrow_mut().take().unwrap_or_default())
}

/// Network requests (by endpoint) recorded since [`start`]; stops recording.
pub fn finish_requests() -> Vec<String> {
    NET.with(|l| l.borrow_mut().take().unwrap_or_default())
}

pub(crate) fn record_request(endpoint: &str) {
    NET.with(|l| {
        if let Some(log) = l.borrow_mut().as_mut() {
            log.push(endpoint.to_string());
        }
    });
}

pub(crate) fn record(path: &Path) {
    LOG.with(|l| {
        if let Some(log) = l.borrow_mut().as_mut() {
            log.push(path.to_path_buf());
        }
    });
}

pub(crate) fn read_to_string(path: &Path) -> crate::Result<String> {
    record(path);
    std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))
}

pub(crate) fn read(path: &Path) -> crate::Result<Vec<u8>> {
    record(path);
    std::fs::read(path).map_err(|e| crate::Error::io(path, e))
}
