use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use eduction_mgmt::config::CONFIG_ENV;
use eduction_mgmt::{parse_command, serve, Client, Command, Configuration, Manager, MgmtError};
use eduction_pipeline::storage::decode_binary;
use eduction_pipeline::PipelineConfig;
use eduction_resilience::logger::LineLogger;
use eduction_runtime::{Cluster, NodeDescriptor, TierType};

/// Operates an eduction runtime instance.
///
/// `start GMT <file>` launches an instance from a properties file and serves
/// its management API; every other command is sent to a running service.
#[derive(Parser)]
#[command(name = "eduction-rt", version)]
struct Cli {
    /// Properties file (defaults to $EDUCTION_CONFIG).
    #[arg(long)]
    config: Option<PathBuf>,
    /// The command, e.g. `deallocate N1 DWT T1 T2`.
    #[arg(required = true, trailing_var_arg = true, allow_hyphen_values = true)]
    command: Vec<String>,
}

fn tiers(spec: &str) -> Result<Vec<TierType>, MgmtError> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(MgmtError::BadRequest))
        .collect()
}

fn start(file: &str) -> Result<(), MgmtError> {
    let props = Configuration::load(file)?;
    let log_file = props.get("log.file").map(PathBuf::from);
    if let Ok(logger) = LineLogger::new(log_file.as_deref(), log::LevelFilter::Info) {
        logger.install();
    }
    let mut config = props.cluster_config()?;
    let training = match props.get("pipeline.training") {
        Some(path) => Some(decode_binary(&std::fs::read(path)?).map_err(eduction_runtime::RuntimeError::from)?),
        None => None,
    };
    if training.is_some() {
        config = config.with_pipeline(PipelineConfig::default());
    }
    let cluster = Cluster::new(config);
    let node = props.get_or("gmt.node_id", "gmt");
    let address = props.bind_address().to_owned();
    cluster.gmt().register_node(NodeDescriptor::new(node, &address))?;
    for t in tiers(props.get_or("gmt.tiers", "DST,GMT"))? {
        cluster.gmt().allocate_tier(node, t)?;
    }
    cluster.gmt().start_node(node)?;
    for path in props.get_or("programs", "").split(',').map(str::trim).filter(|p| !p.is_empty()) {
        cluster.register_program(&std::fs::read_to_string(path)?)?;
    }
    let manager = Manager::new(cluster);
    if let Some(ts) = training {
        let wal = PathBuf::from(props.get_or("pipeline.wal", "eduction-client.wal"));
        manager.set_pipeline(PipelineConfig::default(), ts, wal);
    }
    let handle = serve(manager, &address)?;
    log::info!("management service on {}", handle.url());
    println!("{}", handle.url());
    handle.wait();
    Ok(())
}

fn run(cli: Cli) -> Result<(), MgmtError> {
    let line = cli.command.join(" ");
    let command = parse_command(&line)?;
    if let Command::StartGmt { file } = &command {
        return start(file);
    }
    let props = match cli.config.or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from)) {
        Some(p) => Configuration::load(p)?,
        None => Configuration::default(),
    };
    let out = Client::new(&props.service_url()).command(&command.to_string())?;
    println!("{}", serde_json::to_string_pretty(&out).unwrap_or_default());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
