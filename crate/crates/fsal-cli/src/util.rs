use std::path::Path;

/// Usage errors exit with code 2, runtime errors with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<fsal_core::Error> for CliError {
    fn from(e: fsal_core::Error) -> Self {
        match e {
            fsal_core::Error::InvalidArgument(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents)
        .map_err(|e| runtime(format!("writing {}: {e}", path.display())))
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| runtime(format!("creating {}: {e}", path.display())))
}

/// Resolve a dataset-relative path: absolute and existing paths win,
/// otherwise FSAL_DATA_DIR is consulted as the root.
pub fn resolve_data_path(path: &Path) -> std::path::PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("FSAL_DATA_DIR") {
        Some(root) => Path::new(&root).join(path),
        None => path.to_path_buf(),
    }
}

/// Parse a comma-separated list of shot counts.
pub fn parse_usize_list(text: &str) -> CliResult<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| usage(format!("bad count {t:?} in list")))
        })
        .collect()
}
