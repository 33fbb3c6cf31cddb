//! Operating an instance: properties files, the command language, network
//! files, and the management HTTP service with its event stream.

pub mod client;
pub mod command;
pub mod config;
pub mod error;
pub mod manager;
pub mod network;
pub mod service;

pub use client::Client;
pub use command::{parse_command, Command};
pub use config::Configuration;
pub use error::{ConfigError, MgmtError, ParseError};
pub use manager::{Fault, Manager, Outcome};
pub use network::{read_network, save_network, NetworkFile};
pub use service::{serve, ServiceHandle};
