//! Command-line front door for the multi-agent ICD-9 coding engine: ingest
//! corpora, convert notes to SOAP, run MAC-I/MAC-II workflows, evaluate, and
//! sweep ablation grids — all from one declarative config file.

pub mod commands;
pub mod config;
pub mod lock;
pub mod provider;

pub use commands::ablate::cmd_ablate;
pub use commands::eval::cmd_eval;
pub use commands::ingest::cmd_ingest;
pub use commands::report::cmd_report;
pub use commands::run::cmd_run;
pub use commands::soap::cmd_soap_convert;
pub use commands::CommandStatus;
pub use config::{load_config, RunConfigFile};
