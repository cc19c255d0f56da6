//! Error type shared by every external backend client (OCR, translation, VLM).

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendErrorKind {
    /// Connection refused, DNS failure, reset.
    Transport,
    Timeout,
    /// Non-success status from the backend.
    Status(u16),
    /// Reply arrived but did not match the wire contract.
    Malformed,
    /// Backend is reachable but refuses a required capability (e.g. logprob capture).
    Unsupported,
}

impl fmt::Display for BackendErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendErrorKind::Transport => f.write_str("transport failure"),
            BackendErrorKind::Timeout => f.write_str("timeout"),
            BackendErrorKind::Status(code) => write!(f, "status {code}"),
            BackendErrorKind::Malformed => f.write_str("malformed reply"),
            BackendErrorKind::Unsupported => f.write_str("unsupported capability"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{backend} backend: {kind}: {message}")]
pub struct BackendError {
    pub backend: String,
    pub kind: BackendErrorKind,
    pub message: String,
}

impl BackendError {
    pub fn new(backend: impl Into<String>, kind: BackendErrorKind, message: impl Into<String>) -> Self {
        Self {
            backend: backend.into(),
            kind,
            message: message.into(),
        }
    }

    pub fn transport(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Self::new(backend, BackendErrorKind::Transport, message)
    }

    pub fn timeout(backend: impl Into<String>) -> Self {
        Self::new(backend, BackendErrorKind::Timeout, "request timed out")
    }

    pub fn malformed(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Self::new(backend, BackendErrorKind::Malformed, message)
    }

    pub(crate) fn from_reqwest(backend: &str, err: reqwest::Error) -> Self {
        if err.is_timeout() {
            Self::timeout(backend)
        } else if let Some(status) = err.status() {
            Self::new(backend, BackendErrorKind::Status(status.as_u16()), err.to_string())
        } else if err.is_decode() {
            Self::malformed(backend, err.to_string())
        } else {
            Self::transport(backend, err.to_string())
        }
    }
}
