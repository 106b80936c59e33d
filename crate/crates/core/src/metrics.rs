//! Log-domain analysis points.

use serde::Serialize;

use crate::ingest::Transfer;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("size must be at least 1 byte, got {0}")]
    NonPositiveSize(u64),
    #[error("duration must be positive and finite, got {0}")]
    NonPositiveDuration(f64),
    #[error("record `{conn_id}`: {source}")]
    Record {
        conn_id: String,
        #[source]
        source: Box<MetricsError>,
    },
}

/// A (log10 size, log10 duration, log10 rate) triple.
///
/// `log_rate` is always stored as `log_size - log_duration` so the rate
/// identity holds bit for bit wherever the point travels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLogPoint {
    pub log_size: f64,
    pub log_duration: f64,
    pub log_rate: f64,
}

impl LogLogPoint {
    /// Builds a point from log10 size and duration, deriving the rate.
    pub fn from_logs(log_size: f64, log_duration: f64) -> Self {
        LogLogPoint {
            log_size,
            log_duration,
            log_rate: log_size - log_duration,
        }
    }

    /// Raw size in bytes, recovered as a power of ten.
    pub fn size_bytes(&self) -> f64 {
        10f64.powf(self.log_size)
    }

    pub fn duration_s(&self) -> f64 {
        10f64.powf(self.log_duration)
    }
}

pub fn to_log_point(size_bytes: u64, duration_s: f64) -> Result<LogLogPoint, MetricsError> {
    if size_bytes == 0 {
        return Err(MetricsError::NonPositiveSize(size_bytes));
    }
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(MetricsError::NonPositiveDuration(duration_s));
    }
    Ok(LogLogPoint::from_logs(
        (size_bytes as f64).log10(),
        duration_s.log10(),
    ))
}

/// One point per record, in input order.
pub fn batch_log_points<T: Transfer + ?Sized>(
    records: &[&T],
) -> Result<Vec<LogLogPoint>, MetricsError> {
    records
        .iter()
        .map(|r| {
            to_log_point(r.size_bytes(), r.duration_s()).map_err(|e| MetricsError::Record {
                conn_id: r.id().to_string(),
                source: Box::new(e),
            })
        })
        .collect()
}
