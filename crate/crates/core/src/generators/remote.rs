use std::time::Duration;

use reqwest::blocking::Client;

use super::protocol::{decode_response, encode_request};
use super::{GenInput, Generator, NoiseHandling};
use crate::error::{Error, Result};
use crate::scene::Frame;

fn with_causes(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut src = e.source();
    while let Some(s) = src {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        src = s.source();
    }
    msg
}

fn transport(url: &str, e: reqwest::Error) -> Error {
    let kind = if e.is_timeout() {
        "timed out"
    } else if e.is_connect() {
        "connection failed"
    } else {
        "request failed"
    };
    Error::Transport(format!("{url}: {kind}: {}", with_causes(&e)))
}

fn client(timeout: Duration) -> Result<Client> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::Transport(format!("cannot build HTTP client: {}", with_causes(&e))))
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}{path}", base.trim_end_matches('/'))
}

/// Sends one edit request to `base_url` and decodes the returned frame.
pub fn remote_generate(base_url: &str, input: &GenInput, timeout: Duration) -> Result<Frame> {
    RemoteGenerator::new(base_url.into(), timeout)?.generate(input)
}

/// `GET /v1/health`; succeeds when the service answers 200 `ok`.
pub fn check_health(base_url: &str, timeout: Duration) -> Result<()> {
    let url = endpoint(base_url, "/v1/health");
    let resp = client(timeout)?
        .get(&url)
        .send()
        .map_err(|e| transport(&url, e))?;
    let status = resp.status();
    let body = resp.text().map_err(|e| transport(&url, e))?;
    if status.is_success() && body.trim() == "ok" {
        Ok(())
    } else {
        Err(Error::Protocol(format!(
            "{url}: unexpected health answer {status} {body:?}"
        )))
    }
}

pub struct RemoteGenerator {
    url: String,
    client: Client,
}

impl RemoteGenerator {
    pub fn new(base_url: String, timeout: Duration) -> Result<Self> {
        Ok(RemoteGenerator {
            url: endpoint(&base_url, "/v1/edit"),
            client: client(timeout)?,
        })
    }
}

impl Generator for RemoteGenerator {
    fn id(&self) -> &str {
        "remote"
    }

    fn noise_handling(&self) -> NoiseHandling {
        NoiseHandling::Backend
    }

    fn generate(&self, input: &GenInput) -> Result<Frame> {
        let body = encode_request(input)?;
        let resp = self
            .client
            .post(&self.url)
            .header("content-type", "application/octet-stream")
            .body(body)
            .send()
            .map_err(|e| transport(&self.url, e))?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| transport(&self.url, e))?;
        let (w, h) = input.dims();
        match decode_response(&bytes, w, h) {
            Ok(frame) if status.is_success() => Ok(frame),
            Ok(_) => Err(Error::Protocol(format!(
                "{}: HTTP {status} with an ok body",
                self.url
            ))),
            Err(e @ Error::Remote(_)) => Err(e),
            Err(e) if status.is_success() => Err(e),
            Err(e) => Err(Error::Protocol(format!("{}: HTTP {status}: {e}", self.url))),
        }
    }
}
