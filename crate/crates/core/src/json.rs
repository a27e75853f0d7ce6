//! Serialization helpers for reproducible JSON output.

use serde::Serializer;

/// Rounds to nine significant digits.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Serializes a score with nine significant digits so that golden files do
/// not depend on the last bits of floating-point accumulation.
pub fn sig9<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig9(*x))
}
