//! Command-line front end and HTTP service for `promptknn-core`.

pub mod cli;
pub mod service;

/// Initializes logging from `PROMPTKNN_LOG` (error, warn, info or debug).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("PROMPTKNN_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp_millis().try_init();
}
