//! Command failures tagged with the process exit code.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// Bad flags, config values or malformed input files.
    Usage = 2,
    Io = 3,
    /// Every computation failed.
    Compute = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError { kind: ExitKind::Usage, error: anyhow::anyhow!("{msg}") }
    }

    pub fn compute(msg: impl fmt::Display) -> Self {
        CliError { kind: ExitKind::Compute, error: anyhow::anyhow!("{msg}") }
    }

    pub fn code(&self) -> u8 {
        self.kind as u8
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches an exit code and a context line to any error.
pub trait Classify<T> {
    fn usage_ctx(self, ctx: impl fmt::Display) -> CliResult<T>;
    fn io_ctx(self, ctx: impl fmt::Display) -> CliResult<T>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn usage_ctx(self, ctx: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError { kind: ExitKind::Usage, error: anyhow::Error::new(e).context(ctx.to_string()) })
    }

    fn io_ctx(self, ctx: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError { kind: ExitKind::Io, error: anyhow::Error::new(e).context(ctx.to_string()) })
    }
}

/// True when the error chain bottoms out in an operating-system I/O error.
pub fn is_io<E: std::error::Error + 'static>(e: &E) -> bool {
    let mut cur: Option<&(dyn std::error::Error + 'static)> = Some(e);
    while let Some(err) = cur {
        if err.is::<std::io::Error>() {
            return true;
        }
        cur = err.source();
    }
    false
}

/// Usage error unless the cause is an I/O failure.
pub fn classify<T, E>(r: Result<T, E>, ctx: impl fmt::Display) -> CliResult<T>
where
    E: std::error::Error + Send + Sync + 'static,
{
    match r {
        Ok(v) => Ok(v),
        Err(e) if is_io(&e) => Err(e).io_ctx(ctx),
        Err(e) => Err(e).usage_ctx(ctx),
    }
}
