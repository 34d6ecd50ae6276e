use std::process::ExitCode;

use predim::Error;
use serde::Serialize;

/// Command failures, each class with its own exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Io(String),
    Input(String),
    Validation(String),
    Computation {
        message: String,
        hint: Option<String>,
    },
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'static str,
    exit_code: u8,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    hint: Option<&'a str>,
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::Input(_) => 4,
            Failure::Validation(_) => 5,
            Failure::Computation { .. } => 6,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Io(_) => "io",
            Failure::Input(_) => "input",
            Failure::Validation(_) => "validation",
            Failure::Computation { .. } => "computation",
        }
    }

    /// Print the error as JSON on stderr and return the exit status.
    pub fn report(&self) -> ExitCode {
        let (message, hint) = match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Input(m) | Failure::Validation(m) => {
                (m.as_str(), None)
            }
            Failure::Computation { message, hint } => (message.as_str(), hint.as_deref()),
        };
        let body = ErrorBody {
            kind: self.kind(),
            exit_code: self.exit_code(),
            message,
            hint,
        };
        let json = serde_json::json!({ "error": body });
        eprintln!("{json}");
        ExitCode::from(self.exit_code())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Io(_) => Failure::Io(message),
            Error::Csv(ref c) if c.is_io_error() => Failure::Io(message),
            Error::Csv(_) | Error::MissingColumn(_) | Error::NonNumeric { .. } | Error::Json(_) => {
                Failure::Input(message)
            }
            Error::Usage(_) => Failure::Usage(message),
            Error::Validation(_)
            | Error::RankDeficientDesign { .. }
            | Error::NoResidualSpace { .. }
            | Error::DegenerateSpectrum(_)
            | Error::DegenerateData { .. }
            | Error::Dimension(_)
            | Error::Domain(_) => Failure::Validation(message),
            Error::EmptyCut { .. } => Failure::Computation {
                message,
                hint: Some(
                    "the contour never reaches the cut level; raise --draws or --rho-points".into(),
                ),
            },
            Error::UnboundedDenominator(_) | Error::Estimation(_) | Error::Bracket(_) => {
                Failure::Computation {
                    message,
                    hint: None,
                }
            }
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}
