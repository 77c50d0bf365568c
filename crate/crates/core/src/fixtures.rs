//! Bundled feeders.

use crate::io::{parse_feeder_str, Feeder, IoError};

pub const TWONODE: &str = include_str!("../fixtures/twonode.json");
pub const IEEE13: &str = include_str!("../fixtures/ieee13.json");

pub const NAMES: [&str; 2] = ["twonode", "ieee13"];

/// Raw JSON of a bundled feeder.
pub fn source(name: &str) -> Option<&'static str> {
    match name {
        "twonode" => Some(TWONODE),
        "ieee13" => Some(IEEE13),
        _ => None,
    }
}

pub fn load(name: &str) -> Option<Result<Feeder, IoError>> {
    source(name).map(parse_feeder_str)
}
