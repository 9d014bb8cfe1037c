use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Attempts, backoff schedule and per-call timeout for provider calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before retry `i` is `backoff[i - 1]`; the last entry repeats.
    #[serde(with = "millis")]
    pub backoff: Vec<Duration>,
    /// Budget handed to network backends for each individual call.
    #[serde(with = "millis_one")]
    pub call_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff: vec![
                Duration::from_millis(500),
                Duration::from_secs(1),
                Duration::from_secs(2),
            ],
            call_timeout: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Retries without sleeping. Used by tests and mocks.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            backoff: vec![Duration::ZERO],
            ..Self::default()
        }
    }

    fn delay(&self, retry: u32) -> Duration {
        let i = (retry as usize).saturating_sub(1);
        self.backoff
            .get(i)
            .or_else(|| self.backoff.last())
            .copied()
            .unwrap_or(Duration::ZERO)
    }
}

/// Runs `op` until it succeeds, fails with a non-retryable error, or the
/// attempt budget is spent. The final error is returned unchanged.
pub fn with_retry<T>(policy: &RetryPolicy, mut op: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
    let attempts = policy.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match op() {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() && attempt < attempts => {
                tracing::debug!(attempt, error = %e, "retrying provider call");
                let delay = policy.delay(attempt);
                if !delay.is_zero() {
                    thread::sleep(delay);
                }
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(v: &[Duration], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|d| d.as_millis() as u64))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Duration>, D::Error> {
        Ok(Vec::<u64>::deserialize(d)?
            .into_iter()
            .map(Duration::from_millis)
            .collect())
    }
}

mod millis_one {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(v: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}
