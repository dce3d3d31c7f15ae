use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Io,
    Parse,
    Numeric,
    Dimension,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Io => "io",
            Kind::Parse => "parse",
            Kind::Numeric => "numeric",
            Kind::Dimension => "dimension",
        }
    }
}

/// Error with a stable exit code, printed as one line:
/// `error[<kind>]: <message>`.
#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Self::new(Kind::Parse, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(Kind::Io, message)
    }

    pub fn code(&self) -> u8 {
        match self.kind {
            Kind::Io => 1,
            Kind::Parse => 2,
            Kind::Numeric => 3,
            Kind::Dimension => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.replace(['\n', '\r'], " ");
        write!(f, "error[{}]: {}", self.kind.name(), one_line)
    }
}

impl From<macropca::Error> for CliError {
    fn from(e: macropca::Error) -> Self {
        use macropca::Error as E;
        let kind = match &e {
            E::Io(_) => Kind::Io,
            E::Csv(c) if c.is_io_error() => Kind::Io,
            E::Csv(_)
            | E::Json(_)
            | E::Parse { .. }
            | E::Ragged { .. }
            | E::Empty(_)
            | E::InvalidParameter(_)
            | E::SchemaVersion { .. } => Kind::Parse,
            E::DimensionMismatch { .. } => Kind::Dimension,
            E::Degenerate(_) | E::Numeric(_) => Kind::Numeric,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        macropca::Error::from(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        macropca::Error::from(e).into()
    }
}
