//! On-disk formats: a small binary tensor container and 8-bit PPM images.

mod fdt;
mod ppm;

pub use fdt::{decode_fdt, encode_fdt, read_fdt, write_fdt, FDT_MAGIC};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
