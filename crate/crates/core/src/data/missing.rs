use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SeriesBatch;
use crate::error::{Error, Result};
use crate::rng;

/// Which observed steps to knock out when stress-testing a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case")]
pub enum MissingPattern {
    /// Each observed step goes missing independently with probability `ratio`.
    Random { ratio: f64 },
    /// Steps `start..start + len` of every series.
    Burst { start: usize, len: usize },
    /// The first `len` steps of every series.
    Prefix { len: usize },
}

impl fmt::Display for MissingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Random { ratio } => write!(f, "random:{ratio}"),
            Self::Burst { start, len } => write!(f, "burst:{start}:{len}"),
            Self::Prefix { len } => write!(f, "prefix:{len}"),
        }
    }
}

impl FromStr for MissingPattern {
    type Err = Error;

    /// Parses `random:<ratio>`, `burst:<start>:<len>` or `prefix:<len>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::invalid(
                "missing",
                format!("cannot parse `{s}` (expected random:R, burst:START:LEN or prefix:LEN)"),
            )
        };
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["random", r] => Ok(Self::Random {
                ratio: r.parse().map_err(|_| bad())?,
            }),
            ["burst", a, b] => Ok(Self::Burst {
                start: a.parse().map_err(|_| bad())?,
                len: b.parse().map_err(|_| bad())?,
            }),
            ["prefix", l] => Ok(Self::Prefix {
                len: l.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Zero out and flag steps as missing. The input batch is left untouched and
/// the result depends only on `(batch, pattern, seed)`.
pub fn inject_missing(batch: &SeriesBatch, pattern: MissingPattern, seed: u64) -> Result<SeriesBatch> {
    let steps = batch.steps();
    let mut out = batch.clone();
    match pattern {
        MissingPattern::Random { ratio } => {
            if !(0.0..=1.0).contains(&ratio) {
                return Err(Error::invalid("ratio", format!("{ratio} is outside [0, 1]")));
            }
            if ratio == 0.0 {
                return Ok(out);
            }
            let mut rng = rng::stream(seed, rng::tags::TEMPORAL_MASK);
            for b in 0..batch.len() {
                for t in 0..batch.lengths()[b] {
                    if rng.random::<f64>() < ratio {
                        out.set_missing(b, t);
                    }
                }
            }
        }
        MissingPattern::Burst { start, len } => {
            if start + len > steps {
                return Err(Error::invalid(
                    "burst",
                    format!("steps {start}..{} exceed series length {steps}", start + len),
                ));
            }
            for b in 0..batch.len() {
                for t in start..start + len {
                    out.set_missing(b, t);
                }
            }
        }
        MissingPattern::Prefix { len } => {
            if len > steps {
                return Err(Error::invalid(
                    "prefix",
                    format!("{len} steps exceed series length {steps}"),
                ));
            }
            for b in 0..batch.len() {
                for t in 0..len {
                    out.set_missing(b, t);
                }
            }
        }
    }
    Ok(out)
}
