use flowdep::corr::CorrError;
use flowdep::extremal::ExtremalError;
use flowdep::ingest::IngestError;
use flowdep::metrics::MetricsError;
use flowdep::truncnorm::TruncNormError;

/// Exit status classes: 1 usage, 2 input data, 3 numeric domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Usage,
    Data,
    Numeric,
}

impl FailureKind {
    pub fn code(self) -> u8 {
        match self {
            FailureKind::Usage => 1,
            FailureKind::Data => 2,
            FailureKind::Numeric => 3,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: FailureKind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(kind: FailureKind, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            kind,
            error: error.into(),
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::new(FailureKind::Usage, anyhow::anyhow!(msg.into()))
    }

    pub fn data(error: impl Into<anyhow::Error>) -> Self {
        Failure::new(FailureKind::Data, error)
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        let kind = match e {
            IngestError::QuietThreshold(_) | IngestError::PortList(_) => FailureKind::Usage,
            _ => FailureKind::Data,
        };
        Failure::new(kind, e)
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure::new(FailureKind::Numeric, e)
    }
}

impl From<CorrError> for Failure {
    fn from(e: CorrError) -> Self {
        let kind = match e {
            CorrError::InvalidGrid(_) | CorrError::UnknownPair(_) => FailureKind::Usage,
            _ => FailureKind::Numeric,
        };
        Failure::new(kind, e)
    }
}

impl From<TruncNormError> for Failure {
    fn from(e: TruncNormError) -> Self {
        let kind = match e {
            TruncNormError::InvalidParams(_)
            | TruncNormError::InvalidTruncation(_)
            | TruncNormError::TooFewSamples { .. } => FailureKind::Usage,
            TruncNormError::TruncationTooSevere { .. } | TruncNormError::Corr(_) => {
                FailureKind::Numeric
            }
        };
        Failure::new(kind, e)
    }
}

impl From<ExtremalError> for Failure {
    fn from(e: ExtremalError) -> Self {
        let kind = match e {
            ExtremalError::InvalidFraction(_)
            | ExtremalError::UnsortedFractions
            | ExtremalError::UnknownNorm(_) => FailureKind::Usage,
            _ => FailureKind::Numeric,
        };
        Failure::new(kind, e)
    }
}
