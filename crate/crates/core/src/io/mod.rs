//! On-disk formats and test scenes.
//!
//! Hyperspectral images are stored as a JSON header next to a raw
//! band-sequential little-endian `f32` payload; label maps (ground truth and
//! change maps) are binary PGM files.

mod cube;
mod pgm;
mod synth;

use std::io::Write;
use std::path::Path;

pub use cube::{drop_zero_entropy_bands, load_cube, normalize_bands, save_cube, CubeHeader, HyperCube};
pub use pgm::{load_ground_truth, load_pgm, save_pgm, BinaryMap, ChangeMap, GroundTruth};
pub use synth::{synthesize_pair, SceneSpec, SyntheticPair};

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file beside `path` and renames it into
/// place, so readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
