//! `key=value` properties files.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use eduction_core::StoreConfig;
use eduction_runtime::ClusterConfig;
use eduction_transport::{agent, inproc, EndpointConfig};

use crate::error::ConfigError;

pub const CONFIG_ENV: &str = "EDUCTION_CONFIG";
pub const DEFAULT_BIND: &str = "127.0.0.1:7070";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Configuration {
    pub properties: BTreeMap<String, String>,
}

impl Configuration {
    /// `#` comments and blank lines are skipped; keys and values are trimmed.
    pub fn parse(text: &str) -> Result<Configuration, ConfigError> {
        let mut properties = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Malformed { line: i + 1 })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(ConfigError::Malformed { line: i + 1 });
            }
            if properties.insert(key.to_owned(), v.trim().to_owned()).is_some() {
                return Err(ConfigError::DuplicateKey {
                    key: key.to_owned(),
                    line: i + 1,
                });
            }
        }
        Ok(Configuration { properties })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Configuration, ConfigError> {
        Configuration::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.properties.get(key).map(String::as_str)
    }

    pub fn get_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|e: std::num::ParseIntError| ConfigError::BadValue {
                    key: key.to_owned(),
                    message: e.to_string(),
                })
            })
            .transpose()
    }

    pub fn get_millis(&self, key: &str) -> Result<Option<Duration>, ConfigError> {
        Ok(self.get_u64(key)?.map(Duration::from_millis))
    }

    pub fn bind_address(&self) -> &str {
        self.get_or("mgmt.bind", DEFAULT_BIND)
    }

    pub fn service_url(&self) -> String {
        match self.get("mgmt.url") {
            Some(u) => u.trim_end_matches('/').to_owned(),
            None => format!("http://{}", self.bind_address()),
        }
    }

    /// Transport properties are passed through; unset ones select a private
    /// in-process broker.
    pub fn cluster_config(&self) -> Result<ClusterConfig, ConfigError> {
        let mut config = if self.get(agent::IMPLEMENTATION_KEY).is_some() {
            let endpoint = EndpointConfig {
                properties: self.properties.clone(),
            };
            if endpoint.get(agent::IMPLEMENTATION_KEY) == Some(agent::INPROC) {
                let primary = endpoint.get(agent::PRIMARY_KEY).unwrap_or(inproc::DEFAULT_BROKER).to_owned();
                match endpoint.get(agent::SECONDARY_KEY) {
                    Some(s) => {
                        inproc::start_pair(&primary, s);
                    }
                    None => {
                        inproc::start_broker(&primary);
                    }
                }
            }
            ClusterConfig::new(endpoint)
        } else {
            ClusterConfig::isolated()
        };
        if let Some(d) = self.get_millis("gmt.heartbeat_ms")? {
            config.heartbeat = d;
        }
        if let Some(d) = self.get_millis("store.rpc_timeout_ms")? {
            config.rpc_timeout = d;
        }
        if let Some(d) = self.get_millis("dgt.eval_timeout_ms")? {
            config.eval_timeout = d;
        }
        let lease = self.get_u64("store.lease_ms")?.unwrap_or(config.store.lease_ms);
        let cap = self
            .get_u64("store.warehouse_capacity")?
            .map(|c| c as usize)
            .unwrap_or(config.store.warehouse_capacity);
        config.store = StoreConfig::new(lease, cap).map_err(|message| ConfigError::BadValue {
            key: "store".into(),
            message,
        })?;
        Ok(config.with_hamming())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blanks_are_skipped() {
        let c = Configuration::parse("a=1\n#c\nb=2").unwrap();
        assert_eq!(c.properties.len(), 2);
        assert_eq!(c.get("a"), Some("1"));
        assert_eq!(c.get("b"), Some("2"));
        assert!(Configuration::parse("").unwrap().properties.is_empty());
        assert_eq!(Configuration::parse(" k = v = w ").unwrap().get("k"), Some("v = w"));
    }

    #[test]
    fn duplicate_and_malformed_lines_name_the_line() {
        assert!(matches!(
            Configuration::parse("a=1\n\nb=2\na=3"),
            Err(ConfigError::DuplicateKey { key, line: 4 }) if key == "a"
        ));
        assert!(matches!(Configuration::parse("a=1\nnope"), Err(ConfigError::Malformed { line: 2 })));
        assert!(matches!(Configuration::parse("=1"), Err(ConfigError::Malformed { line: 1 })));
    }

    #[test]
    fn numbers_are_checked() {
        let c = Configuration::parse("store.lease_ms=abc").unwrap();
        assert!(matches!(c.get_u64("store.lease_ms"), Err(ConfigError::BadValue { .. })));
    }
}
