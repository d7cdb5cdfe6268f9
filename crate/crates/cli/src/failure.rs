use std::process::ExitCode;

use delayspace::Error;

/// Why a command stopped. Input problems carry one diagnostic line each.
#[derive(Debug)]
pub enum Failure {
    Input(Vec<String>),
    Internal(anyhow::Error),
}

impl Failure {
    pub fn input(line: impl Into<String>) -> Self {
        Failure::Input(vec![line.into()])
    }

    pub fn report(&self) -> ExitCode {
        match self {
            Failure::Input(lines) => {
                for line in lines {
                    eprintln!("error: {line}");
                }
                ExitCode::from(2)
            }
            Failure::Internal(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::MissingTags(ids) => {
                Failure::Input(ids.into_iter().map(|id| format!("missing tag data for {id}")).collect())
            }
            Error::SvdFailure | Error::Io(_) => Failure::Internal(e.into()),
            other => Failure::input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Internal(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Internal(e.into())
    }
}
