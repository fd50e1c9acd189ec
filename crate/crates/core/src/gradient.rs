//! Gradient decomposition (to be filled in).
