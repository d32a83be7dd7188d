//! Command failures and their exit codes.

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or arguments, detected before any compute.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] rgnet_core::Error),
    /// A completed command whose outcome is a failure (for example a
    /// gradient check above tolerance).
    #[error("{0}")]
    Failed(String),
    /// Help or version text requested; not a failure.
    #[error("{0}")]
    Help(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Serialize)]
struct Report<'a> {
    error: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Help(_) => 0,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) if is_config(e) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(e) if is_config(e) => "config",
            CliError::Core(rgnet_core::Error::Numeric { .. }) => "numeric",
            CliError::Core(_) => "runtime",
            CliError::Failed(_) => "failed",
            CliError::Help(_) => "help",
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        self.report(None)
    }

    /// Single-line JSON naming the input file the error belongs to.
    pub fn to_json_for(&self, path: &std::path::Path) -> String {
        self.report(Some(path.display().to_string()))
    }

    fn report(&self, path: Option<String>) -> String {
        serde_json::to_string(&Report {
            error: self.kind(),
            message: self.to_string(),
            path,
        })
        .expect("error reports serialize")
    }
}

fn is_config(e: &rgnet_core::Error) -> bool {
    matches!(e, rgnet_core::Error::Config(_) | rgnet_core::Error::InputTooSmall(_))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_and_json() {
        let e = CliError::Config("bad \"key\"\nline".into());
        assert_eq!(e.exit_code(), EXIT_CONFIG);
        let json = e.to_json();
        assert!(!json.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["error"], "config");
        let e = CliError::Core(rgnet_core::Error::Data("x".into()));
        assert_eq!(e.exit_code(), EXIT_RUNTIME);
        let e = CliError::Core(rgnet_core::Error::Config("x".into()));
        assert_eq!(e.exit_code(), EXIT_CONFIG);
    }
}
