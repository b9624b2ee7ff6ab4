use std::io;
use std::path::Path;

/// Errors raised by the front end itself, as opposed to the library.
#[derive(Debug)]
pub enum CliError {
    MissingInput(String),
    /// The config file does not parse or names unknown keys.
    Config(String),
    /// A required input was not given by flag or config.
    Usage(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::MissingInput(m) => write!(f, "missing input: {m}"),
            CliError::Config(m) => write!(f, "invalid config: {m}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn from_io(path: &Path, e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::NotFound {
            CliError::MissingInput(path.display().to_string())
        } else {
            CliError::Io(format!("{}: {e}", path.display()))
        }
    }
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_MISSING: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_SCHEMA: i32 = 4;

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tid_core::Error>() {
            match e {
                tid_core::Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => {
                    return EXIT_MISSING
                }
                tid_core::Error::Infeasible(_) => return EXIT_INFEASIBLE,
                tid_core::Error::Schema { .. } => return EXIT_SCHEMA,
                _ => {}
            }
        }
        if let Some(e) = cause.downcast_ref::<CliError>() {
            match e {
                CliError::MissingInput(_) => return EXIT_MISSING,
                CliError::Config(_) => return EXIT_SCHEMA,
                _ => {}
            }
        }
        if let Some(e) = cause.downcast_ref::<io::Error>() {
            if e.kind() == io::ErrorKind::NotFound {
                return EXIT_MISSING;
            }
        }
    }
    EXIT_OTHER
}
