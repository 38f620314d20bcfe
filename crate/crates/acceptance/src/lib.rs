//! Acceptance criteria for `replay-guard`, run by `cargo test -p replay-guard-acceptance`.
//! The library is empty; see `tests/acceptance.rs`.
