use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{LoglikelihoodScorer, ScoreError, ScoreRequest, ScorerOutput};

pub const SCORER_ENDPOINT_ENV: &str = "SCORER_ENDPOINT";
pub const SCORER_TOKEN_ENV: &str = "SCORER_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay
            .saturating_mul(2u32.saturating_pow(attempt.saturating_sub(1)))
            .min(self.max_delay)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    continuation: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    token_logprobs: Vec<f64>,
    token_count: usize,
}

enum Attempt {
    Retry(String),
    Fatal(ScoreError),
}

/// Client for a remote scorer speaking the `{prompt, continuation}` →
/// `{token_logprobs, token_count}` JSON contract.
#[derive(Debug, Clone)]
pub struct HttpScorer {
    client: Client,
    endpoint: String,
    token: Option<String>,
    retry: RetryPolicy,
    /// Base of the logarithms the server reports. Converted to natural log.
    log_base: f64,
}

impl HttpScorer {
    pub fn new(
        endpoint: impl Into<String>,
        token: Option<String>,
        timeout: Duration,
    ) -> Result<Self, ScoreError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ScoreError::Protocol(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            token,
            retry: RetryPolicy::default(),
            log_base: std::f64::consts::E,
        })
    }

    /// Reads the endpoint (unless given) and the bearer token from the
    /// environment. The token is required.
    pub fn from_env(endpoint: Option<String>, timeout: Duration) -> Result<Self, ScoreError> {
        let endpoint = match endpoint {
            Some(e) => e,
            None => std::env::var(SCORER_ENDPOINT_ENV)
                .map_err(|_| ScoreError::MissingCredential(SCORER_ENDPOINT_ENV))?,
        };
        let token = std::env::var(SCORER_TOKEN_ENV)
            .map_err(|_| ScoreError::MissingCredential(SCORER_TOKEN_ENV))?;
        Self::new(endpoint, Some(token), timeout)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_log_base(mut self, base: f64) -> Self {
        self.log_base = base;
        self
    }

    fn attempt(&self, body: &WireRequest<'_>) -> Result<ScorerOutput, Attempt> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(Attempt::Retry(format!("server returned {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(ScoreError::Protocol(format!(
                "server returned {status}"
            ))));
        }
        let wire: WireResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(ScoreError::Protocol(format!("bad response body: {e}"))))?;
        if wire.token_logprobs.len() != wire.token_count {
            return Err(Attempt::Fatal(ScoreError::Protocol(format!(
                "token_count {} does not match {} log-probs",
                wire.token_count,
                wire.token_logprobs.len()
            ))));
        }
        let scale = self.log_base.ln();
        Ok(ScorerOutput {
            logprob: wire.token_logprobs.iter().sum::<f64>() * scale,
            token_count: wire.token_count,
        })
    }
}

impl LoglikelihoodScorer for HttpScorer {
    fn loglikelihood(&self, r: &ScoreRequest<'_>) -> Result<ScorerOutput, ScoreError> {
        let body = WireRequest {
            prompt: r.prompt,
            continuation: r.continuation,
        };
        let mut attempt = 1;
        loop {
            match self.attempt(&body) {
                Ok(out) => return Ok(out),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    if attempt >= self.retry.max_attempts {
                        return Err(ScoreError::Transport {
                            attempts: attempt,
                            message,
                        });
                    }
                    log::debug!("scorer attempt {attempt} failed: {message}");
                    thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::Format;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Minimal one-request-per-connection HTTP server. Each accepted
    /// connection is answered by the next scripted response; `None` means
    /// hold the connection open without replying.
    fn serve(script: Vec<Option<(u16, String)>>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/score", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        thread::spawn(move || {
            for step in script {
                let Ok((stream, _)) = listener.accept() else {
                    return;
                };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).unwrap();
                log.lock()
                    .unwrap()
                    .push(format!("{head}{}", String::from_utf8(body).unwrap()));
                match step {
                    Some((code, payload)) => {
                        let mut s = stream;
                        write!(
                            s,
                            "HTTP/1.1 {code} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                            payload.len()
                        )
                        .unwrap();
                    }
                    None => {
                        thread::sleep(Duration::from_millis(600));
                        drop(stream);
                    }
                }
            }
        });
        (url, seen)
    }

    fn request() -> ScoreRequest<'static> {
        ScoreRequest {
            instance_id: "x",
            format: Format::Cloze,
            candidate_index: 0,
            prompt: "The sky is",
            continuation: " blue",
        }
    }

    fn fast_retry(attempts: u32) -> RetryPolicy {
        RetryPolicy {
            max_attempts: attempts,
            base_delay: Duration::from_millis(5),
            max_delay: Duration::from_millis(20),
        }
    }

    #[test]
    fn sums_token_logprobs_and_sends_auth() {
        let (url, seen) = serve(vec![Some((
            200,
            r#"{"token_logprobs":[-0.5,-1.25],"token_count":2}"#.into(),
        ))]);
        let scorer = HttpScorer::new(url, Some("secret".into()), Duration::from_secs(5)).unwrap();
        let out = scorer.loglikelihood(&request()).unwrap();
        assert_eq!(
            out,
            ScorerOutput {
                logprob: -1.75,
                token_count: 2
            }
        );
        let raw = seen.lock().unwrap()[0].clone();
        assert!(raw
            .to_ascii_lowercase()
            .contains("authorization: bearer secret"));
        assert!(raw.ends_with(r#"{"prompt":"The sky is","continuation":" blue"}"#));
    }

    #[test]
    fn retries_server_errors() {
        let (url, seen) = serve(vec![
            Some((503, "{}".into())),
            Some((200, r#"{"token_logprobs":[-2.0],"token_count":1}"#.into())),
        ]);
        let scorer = HttpScorer::new(url, None, Duration::from_secs(5))
            .unwrap()
            .with_retry(fast_retry(3));
        assert_eq!(scorer.loglikelihood(&request()).unwrap().logprob, -2.0);
        assert_eq!(seen.lock().unwrap().len(), 2);
    }

    #[test]
    fn timeout_is_retryable_after_configured_attempts() {
        let (url, _) = serve(vec![None, None]);
        let scorer = HttpScorer::new(url, None, Duration::from_millis(150))
            .unwrap()
            .with_retry(fast_retry(2));
        let err = scorer.loglikelihood(&request()).unwrap_err();
        assert!(err.is_retryable());
        assert!(matches!(err, ScoreError::Transport { attempts: 2, .. }));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen) = serve(vec![Some((400, "{}".into())), Some((200, "{}".into()))]);
        let scorer = HttpScorer::new(url, None, Duration::from_secs(5))
            .unwrap()
            .with_retry(fast_retry(3));
        let err = scorer.loglikelihood(&request()).unwrap_err();
        assert!(matches!(err, ScoreError::Protocol(_)));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn mismatched_token_count_rejected() {
        let (url, _) = serve(vec![Some((
            200,
            r#"{"token_logprobs":[-1.0],"token_count":2}"#.into(),
        ))]);
        let scorer = HttpScorer::new(url, None, Duration::from_secs(5)).unwrap();
        assert!(matches!(
            scorer.loglikelihood(&request()),
            Err(ScoreError::Protocol(_))
        ));
    }

    #[test]
    fn base_two_logprobs_are_converted() {
        let (url, _) = serve(vec![Some((
            200,
            r#"{"token_logprobs":[-1.0],"token_count":1}"#.into(),
        ))]);
        let scorer = HttpScorer::new(url, None, Duration::from_secs(5))
            .unwrap()
            .with_log_base(2.0);
        let out = scorer.loglikelihood(&request()).unwrap();
        assert!((out.logprob + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(3), Duration::from_millis(350));
    }
}
