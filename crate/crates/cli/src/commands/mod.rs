//! Subcommand implementations. Each module owns its flag struct, the
//! matching JSON config mirror, and the execute entry point.

pub mod evaluate;
pub mod explain;
pub mod gen_data;
pub mod train;
pub mod transform;
