//! Blocking client for `swipt-service`.

use serde::de::DeserializeOwned;
use serde::Serialize;
use std::time::Duration;
use swipt_runner::{ErrorBody, FeasibleRun, Job, SolveRun, SweepRequest, SweepRun, ValidateRequest, ValidateRun};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("service returned {status}: {}", body.error)]
    Remote { status: u16, body: ErrorBody },
}

impl ClientError {
    /// Exit code the command line tool would have used locally.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Remote { body, .. } => body.exit_code,
            ClientError::Http(_) => swipt_runner::run::EXIT_CONFIG,
        }
    }
}

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        // solves and sweeps can run for minutes
        let http = reqwest::blocking::Client::builder().timeout(Duration::from_secs(3600)).build()?;
        Ok(Client { base: base_url.trim_end_matches('/').to_string(), http })
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send()?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json()?);
        }
        let body = resp
            .json::<ErrorBody>()
            .unwrap_or_else(|e| ErrorBody { error: format!("unreadable error body: {e}"), exit_code: 1 });
        Err(ClientError::Remote { status: status.as_u16(), body })
    }

    pub fn health(&self) -> Result<bool, ClientError> {
        Ok(self.http.get(format!("{}/health", self.base)).send()?.status().is_success())
    }

    pub fn feasible(&self, job: &Job) -> Result<FeasibleRun, ClientError> {
        self.post("/feasible", job)
    }

    pub fn solve(&self, job: &Job) -> Result<SolveRun, ClientError> {
        self.post("/solve", job)
    }

    pub fn validate(&self, req: &ValidateRequest) -> Result<ValidateRun, ClientError> {
        self.post("/validate", req)
    }

    pub fn sweep(&self, req: &SweepRequest) -> Result<SweepRun, ClientError> {
        self.post("/sweep", req)
    }
}
