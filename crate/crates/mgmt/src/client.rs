//! Blocking client for the management service.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::MgmtError;
use crate::service::ErrorBody;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

fn remote(e: reqwest::Error) -> MgmtError {
    MgmtError::Remote(e.to_string())
}

impl Client {
    pub fn new(base: &str) -> Client {
        Client {
            base: base.trim_end_matches('/').to_owned(),
            http: reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(120))
                .build()
                .expect("http client without TLS always builds"),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn finish<T: DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T, MgmtError> {
        let status = resp.status();
        if status.is_success() {
            return resp.json().map_err(remote);
        }
        let text = resp.text().map_err(remote)?;
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(b) => MgmtError::Api {
                status: status.as_u16(),
                code: b.code,
                message: b.message,
            },
            Err(_) => MgmtError::Api {
                status: status.as_u16(),
                code: "Http".into(),
                message: text,
            },
        })
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, MgmtError> {
        Self::finish(self.http.get(format!("{}{path}", self.base)).send().map_err(remote)?)
    }

    pub fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, MgmtError> {
        Self::finish(self.http.post(format!("{}{path}", self.base)).json(body).send().map_err(remote)?)
    }

    pub fn post_bytes<T: DeserializeOwned>(&self, path: &str, body: Vec<u8>) -> Result<T, MgmtError> {
        Self::finish(self.http.post(format!("{}{path}", self.base)).body(body).send().map_err(remote)?)
    }

    pub fn delete<T: DeserializeOwned>(&self, path: &str) -> Result<T, MgmtError> {
        Self::finish(self.http.delete(format!("{}{path}", self.base)).send().map_err(remote)?)
    }

    /// Sends one line of the command language.
    pub fn command(&self, line: &str) -> Result<Value, MgmtError> {
        self.post("/commands", &serde_json::json!({ "line": line }))
    }
}
