use std::path::PathBuf;

use stlcbf::controller::ControllerError;
use stlcbf::dqp::QpError;
use stlcbf::hocbf::HocbfError;
use stlcbf::scenario::ScenarioError;
use stlcbf::sim::SimError;
use stlcbf::stl::StlError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Scenario(e) => scenario_code(e),
            CliError::Controller(e) => controller_code(e),
            CliError::Sim(e) => sim_code(e),
            CliError::Stl(_) | CliError::Io { .. } | CliError::Csv { .. } | CliError::Usage(_) => {
                USER
            }
            CliError::Internal(_) => INTERNAL,
        }
    }

    /// The offending formula with a caret under the reported offset.
    pub fn diagnostic(&self) -> Option<String> {
        let CliError::Scenario(ScenarioError::Formula { formula, source }) = self else {
            return None;
        };
        let pos = match source {
            StlError::Syntax { pos, .. } | StlError::UnknownIdentifier { pos, .. } => *pos,
            _ => return None,
        };
        let col = formula.char_indices().take_while(|(i, _)| *i < pos).count();
        Some(format!("  {formula}\n  {}^", " ".repeat(col)))
    }
}

const USER: u8 = 2;
const INFEASIBLE: u8 = 3;
const INTERNAL: u8 = 4;

fn scenario_code(e: &ScenarioError) -> u8 {
    match e {
        ScenarioError::Controller(c) => controller_code(c),
        ScenarioError::Io { .. }
        | ScenarioError::Toml(_)
        | ScenarioError::Invalid(_)
        | ScenarioError::Formula { .. } => USER,
    }
}

fn controller_code(e: &ControllerError) -> u8 {
    match e {
        ControllerError::Hocbf(h) => hocbf_code(h),
        ControllerError::Qp {
            source: QpError::Infeasible { .. },
            ..
        }
        | ControllerError::PsiCheck { .. } => INFEASIBLE,
        ControllerError::Qp { .. } => INTERNAL,
        ControllerError::ParamCount { .. }
        | ControllerError::Checkpoint(_)
        | ControllerError::Io(_) => USER,
    }
}

fn hocbf_code(e: &HocbfError) -> u8 {
    match e {
        HocbfError::InitiallyViolated { .. }
        | HocbfError::Infeasible { .. }
        | HocbfError::CategoryMismatch { .. } => INFEASIBLE,
        HocbfError::Stl(_)
        | HocbfError::UnsupportedShape { .. }
        | HocbfError::UnsupportedDegree(_)
        | HocbfError::StateDim { .. } => USER,
    }
}

fn sim_code(e: &SimError) -> u8 {
    match e {
        SimError::Controller { source, .. } => controller_code(source),
        SimError::Stl(_) | SimError::Config(_) => USER,
        SimError::Ad(_) | SimError::NonFinite { .. } => INTERNAL,
    }
}
