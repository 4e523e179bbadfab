//! Cross-crate acceptance suite; see `tests/acceptance.rs`.
