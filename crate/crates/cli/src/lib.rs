//! Drivers behind the `icare`, `gateway` and `sensors` binaries.

pub mod emit;
pub mod live;
pub mod node;
pub mod sim;

use std::path::Path;

use icare_core::harness::demo_scenario;
use icare_core::sensors::{load_scenario, Scenario};

/// Logs to stderr; `RUST_LOG` overrides the default `info`.
pub fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

/// A scenario file, or a shipped demo when `source` names one and no such
/// file exists.
pub fn scenario_from(source: &str) -> Result<Scenario, String> {
    if !Path::new(source).exists() {
        if let Some(demo) = demo_scenario(source) {
            return demo.map_err(|e| format!("demo {source}: {e}"));
        }
    }
    load_scenario(Path::new(source)).map_err(|e| format!("{source}: {e}"))
}
