//! Exit codes.
//!
//! | code | meaning                                            |
//! |------|----------------------------------------------------|
//! | 0    | success                                            |
//! | 1    | internal error                                     |
//! | 2    | usage: bad flags or flag values                    |
//! | 3    | data: dataset, manifest, split, label, power log   |
//! | 4    | model: bundle, graph, quantization                 |
//! | 5    | inference failed                                   |
//! | 6    | filesystem or network I/O                          |

use std::fmt;
use std::process::ExitCode;

use edgeclass_core::bench::{BenchError, PowerError};
use edgeclass_core::data::DataError;
use edgeclass_core::eval::EvalError;
use edgeclass_core::quant::QuantError;
use edgeclass_core::train::TrainError;
use edgeclass_core::{BundleError, EngineError};
use edgeclass_gateway::{GatewayError, RegistryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Internal = 1,
    Usage = 2,
    Data = 3,
    Model = 4,
    Inference = 5,
    Io = 6,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(kind: Kind, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            kind,
            error: error.into(),
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure::new(Kind::Usage, anyhow::anyhow!("{msg}"))
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

pub type Outcome<T = ()> = Result<T, Failure>;

pub trait OrFail<T> {
    fn or_fail(self, kind: Kind) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn or_fail(self, kind: Kind) -> Outcome<T> {
        self.map_err(|e| Failure::new(kind, e))
    }
}

/// Reads a file, mapping failure to the I/O exit code.
pub fn read(path: &std::path::Path) -> Outcome<Vec<u8>> {
    std::fs::read(path).map_err(|e| Failure::new(Kind::Io, anyhow::anyhow!("{}: {e}", path.display())))
}

pub fn read_text(path: &std::path::Path) -> Outcome<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::new(Kind::Io, anyhow::anyhow!("{}: {e}", path.display())))
}

pub fn write(path: &std::path::Path, contents: impl AsRef<[u8]>) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::new(Kind::Io, anyhow::anyhow!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| Failure::new(Kind::Io, anyhow::anyhow!("{}: {e}", path.display())))
}

fn bundle_kind(e: &BundleError) -> Kind {
    match e {
        BundleError::Io { .. } => Kind::Io,
        _ => Kind::Model,
    }
}

fn data_kind(e: &DataError) -> Kind {
    match e {
        DataError::Io { .. } => Kind::Io,
        _ => Kind::Data,
    }
}

fn train_kind(e: &TrainError) -> Kind {
    match e {
        TrainError::SingleClass | TrainError::LengthMismatch(..) | TrainError::LabelOutOfRange { .. } => Kind::Data,
        TrainError::Cache { .. } => Kind::Io,
        TrainError::Data(d) => data_kind(d),
        TrainError::Engine(_) => Kind::Inference,
        TrainError::Bundle(b) => bundle_kind(b),
        _ => Kind::Model,
    }
}

impl From<BundleError> for Failure {
    fn from(e: BundleError) -> Self {
        Failure::new(bundle_kind(&e), e)
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::new(data_kind(&e), e)
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        Failure::new(train_kind(&e), e)
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let kind = match e {
            EngineError::Preprocess(_) => Kind::Data,
            _ => Kind::Inference,
        };
        Failure::new(kind, e)
    }
}

impl From<QuantError> for Failure {
    fn from(e: QuantError) -> Self {
        let kind = match &e {
            QuantError::EmptyDataset => Kind::Data,
            QuantError::Engine(_) => Kind::Inference,
            QuantError::Bundle(b) => bundle_kind(b),
            _ => Kind::Model,
        };
        Failure::new(kind, e)
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let kind = match &e {
            EvalError::Fold { source, .. } => train_kind(source),
            _ => Kind::Data,
        };
        Failure::new(kind, e)
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        let kind = match &e {
            BenchError::Aborted { .. } => Kind::Inference,
            BenchError::BadConfig => Kind::Usage,
            _ => Kind::Data,
        };
        Failure::new(kind, e)
    }
}

impl From<PowerError> for Failure {
    fn from(e: PowerError) -> Self {
        Failure::new(Kind::Data, e)
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        let kind = match &e {
            GatewayError::Registry(RegistryError::Bundle { source, .. }) => bundle_kind(source),
            GatewayError::Registry(RegistryError::Io { .. }) => Kind::Io,
            GatewayError::Registry(_) => Kind::Model,
            GatewayError::StaticDir(_) => Kind::Usage,
            _ => Kind::Io,
        };
        Failure::new(kind, e)
    }
}
