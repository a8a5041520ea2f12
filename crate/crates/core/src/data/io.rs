//! Split files: little-endian `u32` header `(height, width, classes, count)`,
//! then `count·3·h·w` `f32` image values, then `count·h·w` `u8` labels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, IMAGE_CHANNELS};
use crate::error::{Error, Result};

pub fn write_split(path: &Path, set: &Dataset) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for v in [set.height, set.width, set.classes, set.len()] {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
        out.write_all(&v.to_le_bytes())?;
    }
    for &x in set.images() {
        out.write_all(&x.to_le_bytes())?;
    }
    out.write_all(set.labels())?;
    out.flush()?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(Error::Format("dataset header truncated".into()));
    }
    let header: Vec<usize> = bytes[..16]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let (h, w, k, n) = (header[0], header[1], header[2], header[3]);
    let n_img = n * IMAGE_CHANNELS * h * w;
    let n_lab = n * h * w;
    if bytes.len() != 16 + 4 * n_img + n_lab {
        return Err(Error::Format(format!(
            "dataset file has {} bytes, header implies {}",
            bytes.len(),
            16 + 4 * n_img + n_lab
        )));
    }
    let images = bytes[16..16 + 4 * n_img]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = bytes[16 + 4 * n_img..].to_vec();
    Dataset::new(h, w, k, images, labels)
}
