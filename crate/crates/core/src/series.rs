use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time label of one observation: an integer index or an ISO-8601 date/time
/// string. ISO strings of one format sort lexicographically in time order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Timestamp {
    Index(i64),
    Text(String),
}

impl Timestamp {
    pub fn parse(raw: &str) -> Self {
        let raw = raw.trim();
        raw.parse::<i64>()
            .map(Timestamp::Index)
            .unwrap_or_else(|_| Timestamp::Text(raw.to_string()))
    }
}

impl std::fmt::Display for Timestamp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Timestamp::Index(i) => write!(f, "{i}"),
            Timestamp::Text(s) => f.write_str(s),
        }
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Timestamp::Index(a), Timestamp::Index(b)) => a.cmp(b),
            (Timestamp::Index(_), Timestamp::Text(_)) => Ordering::Less,
            (Timestamp::Text(_), Timestamp::Index(_)) => Ordering::Greater,
            (Timestamp::Text(a), Timestamp::Text(b)) => a.cmp(b),
        }
    }
}

/// Scalar observations with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub id: String,
    timestamps: Vec<Timestamp>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(
        id: impl Into<String>,
        timestamps: Vec<Timestamp>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let id = id.into();
        if timestamps.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} timestamps for {} values",
                timestamps.len(),
                values.len()
            )));
        }
        if values.len() < 2 {
            return Err(Error::SeriesTooShort {
                needed: 2,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "value {i} of series `{id}` is not finite"
            )));
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "timestamps of `{id}` not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self {
            id,
            timestamps,
            values,
        })
    }

    /// Series indexed `1..=n`.
    pub fn from_values(id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let ts = (1..=values.len() as i64).map(Timestamp::Index).collect();
        Self::new(id, ts, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamps(&self) -> &[Timestamp] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multiplies every value by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(
            self.id.clone(),
            self.timestamps.clone(),
            self.values.iter().map(|v| v * k).collect(),
        )
    }
}
