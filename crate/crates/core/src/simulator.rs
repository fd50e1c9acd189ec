//! Event-driven simulation (to be filled in).
