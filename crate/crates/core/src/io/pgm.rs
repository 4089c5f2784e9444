use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};

/// Per-pixel binary label image: 0 = unchanged, 1 = changed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

pub type GroundTruth = BinaryMap;
pub type ChangeMap = BinaryMap;

impl BinaryMap {
    /// Any nonzero label is stored as 1.
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimensions(format!(
                "label map must be non-empty, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::Dimensions(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        let labels = labels.into_iter().map(|v| u8::from(v != 0)).collect();
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn unchanged(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn changed_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            labels: self.labels.iter().map(|&l| 1 - l).collect(),
            ..*self
        }
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.labels.iter().map(|&l| if l == 1 { 255 } else { 0 }));
        out
    }
}

/// Writes a P5 image with 0 = unchanged and 255 = changed.
pub fn save_pgm(map: &BinaryMap, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &map.to_pgm_bytes())
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<BinaryMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, pixels) = parse_p5(&bytes)?;
    BinaryMap::new(height, width, pixels.into_iter().map(|v| u8::from(v != 0)).collect())
}

/// Loads a P5 label image, merging every nonzero class into "changed".
/// With `expected = Some((height, width))` the size is checked as well.
pub fn load_ground_truth(path: impl AsRef<Path>, expected: Option<(usize, usize)>) -> Result<GroundTruth> {
    let gt = load_pgm(path)?;
    if let Some((h, w)) = expected {
        if (gt.height, gt.width) != (h, w) {
            return Err(Error::Dimensions(format!(
                "ground truth is {}x{}, expected {h}x{w}",
                gt.height, gt.width
            )));
        }
    }
    Ok(gt)
}

fn parse_p5(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::Pgm("missing P5 magic".into()));
    }
    let width = parse_number(next_token(bytes, &mut pos)?)?;
    let height = parse_number(next_token(bytes, &mut pos)?)?;
    let maxval = parse_number(next_token(bytes, &mut pos)?)?;
    if width == 0 || height == 0 {
        return Err(Error::Pgm(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Pgm(format!("maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Pgm("truncated header".into()));
    }
    pos += 1;

    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let needed = width * height * sample_bytes;
    let raster = &bytes[pos..];
    if raster.len() < needed {
        return Err(Error::Pgm(format!(
            "truncated payload: {} of {needed} bytes",
            raster.len()
        )));
    }
    let pixels = if sample_bytes == 1 {
        raster[..needed].iter().map(|&v| u16::from(v)).collect()
    } else {
        raster[..needed]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok((width, height, pixels))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Pgm("truncated header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(token: &[u8]) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Pgm(format!("bad header field {:?}", String::from_utf8_lossy(token))))
}
