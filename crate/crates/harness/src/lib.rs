//! Harness around `semleak-core`: suite and config files, the run store,
//! model and embedding clients, stub servers, the annotation server and the
//! `semleak` command line.

pub mod annotate;
pub mod bundle_io;
pub mod chat;
pub mod cli;
pub mod collect;
pub mod config;
pub mod embed;
pub mod http;
pub mod lint;
pub mod pipeline;
pub mod scoring;
pub mod store;
pub mod stub;
pub mod suite_io;
