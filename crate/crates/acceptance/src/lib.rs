//! Paths shared by the acceptance run.

use std::path::PathBuf;

/// Agent trained on the default 57-lap race.
pub fn default_checkpoint() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../checkpoints/sac_57.json")
}
