use std::time::Duration;

use clap::Parser;
use eduction_transport::{MacKey, TcpBroker, DEFAULT_MAX_PAYLOAD};

/// Runs a standalone TCP message broker.
#[derive(Parser)]
#[command(name = "eduction-broker", version)]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:7600")]
    listen: String,
    #[arg(long, default_value = "primary")]
    name: String,
    /// Shared instance secret used to authenticate frames.
    #[arg(long, env = "EDUCTION_SECRET", default_value = "default")]
    secret: String,
    /// Address of a standby broker that receives every change.
    #[arg(long)]
    mirror_to: Option<String>,
    #[arg(long, default_value_t = DEFAULT_MAX_PAYLOAD)]
    max_frame: usize,
}

fn main() {
    let args = Args::parse();
    let broker = match TcpBroker::start(&args.listen, &args.name, MacKey::from_secret(&args.secret), args.max_frame) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("cannot listen on {}: {e}", args.listen);
            std::process::exit(1);
        }
    };
    if let Some(standby) = &args.mirror_to {
        if let Err(e) = broker.mirror_to(standby) {
            eprintln!("cannot reach standby {standby}: {e}");
            std::process::exit(1);
        }
    }
    println!("broker {} listening on {}", args.name, broker.local_addr());
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}
