use std::fmt;
use std::process::ExitCode;

use maxvqa_core::Error as CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage = 1,
    Data = 2,
    Backbone = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, Failure>;

impl Failure {
    pub fn new(kind: Kind, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Self::new(Kind::Usage, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self::new(Kind::Data, anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind as u8)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub fn classify(e: &CoreError) -> Kind {
    match e {
        CoreError::UnknownAxis(_) | CoreError::InvalidArgument(_) | CoreError::Unsupported(_) => Kind::Usage,
        CoreError::Backbone(_) | CoreError::TokenOverflow { .. } | CoreError::EmptyTokens => Kind::Backbone,
        _ => Kind::Data,
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Self::new(classify(&e), e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(Kind::Data, e)
    }
}

/// Attaches an exit-code class and a context line to any error.
pub trait Tag<T> {
    fn tag(self, kind: Kind, context: impl FnOnce() -> String) -> CliResult<T>;
    fn kind(self, kind: Kind) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for Result<T, E> {
    fn tag(self, kind: Kind, context: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| Failure::new(kind, e.into().context(context())))
    }

    fn kind(self, kind: Kind) -> CliResult<T> {
        self.map_err(|e| Failure::new(kind, e))
    }
}

/// Keeps the class of a core error while adding context.
pub trait CoreContext<T> {
    fn context(self, context: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> CoreContext<T> for maxvqa_core::Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| {
            let kind = classify(&e);
            Failure::new(kind, anyhow::Error::new(e).context(context()))
        })
    }
}
