//! PDE reference solver (to be filled in).
