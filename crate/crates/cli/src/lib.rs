pub mod bench;
pub mod config;
pub mod embed;
pub mod ingest;
pub mod run;
pub mod toy;
