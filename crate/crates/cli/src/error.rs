use xysync::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Core(#[from] xysync::Error),

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("cannot read {path}: {message}")]
    Input { path: String, message: String },
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const PRECONDITION: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Input { .. } => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Invalid => exit::CONFIG,
                ErrorKind::Precondition => exit::PRECONDITION,
                ErrorKind::Numerical => exit::NUMERICAL,
            },
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}
