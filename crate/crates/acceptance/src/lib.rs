//! Empty: the acceptance criteria live in `tests/acceptance.rs`.
