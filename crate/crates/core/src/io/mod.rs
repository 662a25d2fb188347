//! Config files, report serialization and the binary matrix exchange format.

mod config;
mod matrix_file;
mod report;

pub use config::{parse_config, parse_config_str, Experiment, RunConfig};
pub use matrix_file::{decode_matrix, encode_matrix, read_matrix, write_matrix, MATRIX_MAGIC};
pub use report::{format_float, report_csv, report_json, write_report};
