//! Measured gains and QBERs of a 10 km reference run, shipped as a
//! versioned fixture, plus the values reported for that run.

use crate::io::{parse_tallies_csv, TallyFile};
use crate::tally::RateMatrix;

pub const REFERENCE_TABLES_CSV: &str = include_str!("../../fixtures/reference_tables_v1.csv");

/// Values reported alongside the reference tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedValues {
    pub y11_z_lower: f64,
    pub e11_x_upper: f64,
    pub rate: f64,
    pub key_length: u64,
}

pub const PUBLISHED: PublishedValues = PublishedValues {
    y11_z_lower: 4.1e-4,
    e11_x_upper: 0.151,
    rate: 9.8e-9,
    key_length: 1600,
};

pub fn reference_rates() -> RateMatrix {
    match parse_tallies_csv(REFERENCE_TABLES_CSV).expect("reference fixture parses") {
        TallyFile::Rates { rates, .. } => rates,
        TallyFile::Counts(_) => unreachable!("reference fixture is in rate form"),
    }
}
