use std::fmt;
use std::path::Path;

use dialsec::ErrorKind;
use serde_json::{json, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Pending,
    Internal,
}

/// Failure of a subcommand, printed to stderr as one JSON record.
#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

impl CliError {
    pub fn new(kind: Kind, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Kind::Usage, "usage", message)
    }

    pub fn data(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(Kind::Data, code, message)
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    /// An input that an earlier step or the user should have provided.
    pub fn missing(path: &Path, hint: &str) -> Self {
        Self::data("missing_input", format!("{} does not exist ({hint})", path.display()))
            .with_details(json!({ "path": path }))
    }

    /// Reading `path` failed.
    pub fn input(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            return Self::missing(path, "not found");
        }
        Self::new(Kind::Internal, "io", format!("{}: {e}", path.display())).with_details(json!({ "path": path }))
    }

    pub fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            Kind::Usage => 2,
            Kind::Data => 3,
            Kind::Pending => 4,
            Kind::Internal => 5,
        }
    }

    pub fn record(&self) -> Value {
        json!({
            "error": {
                "code": self.code,
                "message": self.message,
                "details": self.details,
                "exit_code": self.exit_code(),
            }
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<dialsec::Error> for CliError {
    fn from(e: dialsec::Error) -> Self {
        let message = e.to_string();
        match e {
            dialsec::Error::PendingVerdicts(ids) => {
                Self::new(Kind::Pending, "pending_verdicts", message).with_details(json!({ "pending_clusters": ids }))
            }
            dialsec::Error::RoundOrder(_) => Self::data("round_order", message),
            dialsec::Error::CorruptLog(_) => Self::data("corrupt_log", message),
            dialsec::Error::Config(_) => Self::data("config", message),
            other => match other.kind() {
                ErrorKind::Data => Self::data("data_error", message),
                ErrorKind::Pending => Self::new(Kind::Pending, "pending", message),
                ErrorKind::Internal => Self::new(Kind::Internal, "internal", message),
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(Kind::Internal, "io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::data("data_error", e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kinds() {
        let pending: CliError = dialsec::Error::PendingVerdicts(vec![2, 5]).into();
        assert_eq!(pending.exit_code(), 4);
        assert_eq!(pending.record()["error"]["details"]["pending_clusters"], json!([2, 5]));
        let order: CliError = dialsec::Error::RoundOrder("x".into()).into();
        assert_eq!(order.exit_code(), 3);
        let io: CliError = dialsec::Error::Io(std::io::Error::other("disk")).into();
        assert_eq!(io.exit_code(), 5);
        assert_eq!(CliError::usage("bad flag").exit_code(), 2);
    }

    #[test]
    fn missing_inputs_are_data_errors() {
        let e = CliError::input(Path::new("/no/such"), std::io::Error::from(std::io::ErrorKind::NotFound));
        assert_eq!((e.exit_code(), e.code), (3, "missing_input"));
        assert_eq!(e.record()["error"]["details"]["path"], "/no/such");
    }
}
