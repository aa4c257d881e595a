//! Model files shipped with the binary, addressable as `builtin:NAME`.

use metapop_core::ModelSpec;

pub const MODELS: &[(&str, &str)] = &[
    ("logistic", include_str!("../models/logistic.json")),
    ("logistic_slow", include_str!("../models/logistic_slow.json")),
    ("logistic_fast", include_str!("../models/logistic_fast.json")),
    ("logistic_lossy", include_str!("../models/logistic_lossy.json")),
    ("constant_reversible", include_str!("../models/constant_reversible.json")),
    ("constant_subcritical", include_str!("../models/constant_subcritical.json")),
    ("unbounded_growth", include_str!("../models/unbounded_growth.json")),
    ("ricker", include_str!("../models/ricker.json")),
];

/// Bundled models that satisfy both hypotheses.
pub const WELL_POSED: &[&str] =
    &["logistic", "logistic_slow", "logistic_fast", "logistic_lossy", "constant_reversible", "constant_subcritical"];

/// The logistic-death models used for the concavity checks.
pub const LOGISTIC: &[&str] = &["logistic", "logistic_slow", "logistic_fast"];

pub fn source(name: &str) -> Option<&'static str> {
    MODELS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Parses a bundled model; panics only if a shipped file is malformed.
pub fn spec(name: &str) -> ModelSpec {
    let text = source(name).unwrap_or_else(|| panic!("no bundled model named {name}"));
    ModelSpec::from_json(text).expect("bundled model parses")
}

pub fn names() -> impl Iterator<Item = &'static str> {
    MODELS.iter().map(|(n, _)| *n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_model_builds() {
        for name in names() {
            spec(name).build().unwrap();
        }
        for name in WELL_POSED.iter().chain(LOGISTIC) {
            assert!(source(name).is_some(), "{name}");
        }
        assert!(source("missing").is_none());
    }
}
