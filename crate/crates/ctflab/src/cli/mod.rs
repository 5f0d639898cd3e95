//! Command-line front end: configuration files, binary checkpoints, and
//! the experiment subcommands built on them.

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
};
pub use commands::{
    cmd_ablate_reset, cmd_ablate_window, cmd_burnin, cmd_dpc_consistency, cmd_eval,
    cmd_export_plots, cmd_train, load_config, read_metrics_log, resolve_out_dir, resolve_threads,
    run_cli, Cli, Command, TrainOpts,
};
pub use config::{parse_config, AugPreset, ExperimentConfig};
