use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Hyperspectral image of `height × width` pixels, each a vector of `bands`
/// reflectance values. Stored band-interleaved-by-pixel in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
}

impl HyperCube {
    /// `data` is indexed `(row * width + col) * bands + band`.
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Dimensions(format!(
                "cube must be non-empty, got {height}x{width}x{bands}"
            )));
        }
        if data.len() != height * width * bands {
            return Err(Error::Dimensions(format!(
                "{} values for a {height}x{width}x{bands} cube",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dimensions(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[(row * self.width + col) * self.bands + band]
    }

    /// Spectral vector of one pixel.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.data[start..start + self.bands]
    }

    pub fn band(&self, band: usize) -> impl Iterator<Item = f32> + '_ {
        self.data.iter().skip(band).step_by(self.bands).copied()
    }

    pub fn same_dimensions(&self, other: &HyperCube) -> bool {
        (self.height, self.width, self.bands) == (other.height, other.width, other.bands)
    }

    /// Copy restricted to the listed bands, in the given order.
    pub fn select_bands(&self, bands: &[usize]) -> Result<HyperCube> {
        if let Some(&bad) = bands.iter().find(|&&k| k >= self.bands) {
            return Err(Error::Dimensions(format!("band {bad} out of 0..{}", self.bands)));
        }
        let mut data = Vec::with_capacity(self.height * self.width * bands.len());
        for px in self.data.chunks_exact(self.bands) {
            data.extend(bands.iter().map(|&k| px[k]));
        }
        HyperCube::new(self.height, self.width, bands.len(), data)
    }

    /// True when every pixel holds the same value in `band`.
    pub fn is_constant_band(&self, band: usize) -> bool {
        let first = self.data[band];
        self.band(band).all(|v| v == first)
    }

    pub fn to_tensor(&self) -> Tensor {
        let values = self.data.iter().map(|&v| f64::from(v)).collect();
        Tensor::from_vec(self.height, self.width, self.bands, values)
            .expect("cube invariants guarantee the tensor shape")
    }
}

/// JSON header of a band-sequential container.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubeHeader {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub dtype: String,
    pub interleave: String,
    /// Payload path, relative to the header's directory.
    pub data: String,
}

pub fn load_cube(header_path: impl AsRef<Path>) -> Result<HyperCube> {
    let header_path = header_path.as_ref();
    let text = std::fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: CubeHeader = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: header_path.into(),
        message: e.to_string(),
    })?;
    let bad_header = |message: String| Error::Header {
        path: header_path.into(),
        message,
    };
    if header.dtype != "f32" {
        return Err(bad_header(format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.interleave != "bsq" {
        return Err(bad_header(format!(
            "unsupported interleave {:?}",
            header.interleave
        )));
    }
    if header.width == 0 || header.height == 0 || header.bands == 0 {
        return Err(bad_header("zero-sized dimension".into()));
    }

    let payload_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.data);
    let bytes = std::fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    let (h, w, b) = (header.height, header.width, header.bands);
    let plane = h * w;
    let expected = (plane * b * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::PayloadSize {
            expected,
            found: bytes.len() as u64,
        });
    }

    let mut data = vec![0f32; plane * b];
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let band = i / plane;
        let p = i % plane;
        data[p * b + band] = f32::from_le_bytes(chunk.try_into().unwrap());
    }
    HyperCube::new(h, w, b, data)
}

/// Writes `<stem>.raw` next to the header and then the header itself.
pub fn save_cube(cube: &HyperCube, header_path: impl AsRef<Path>) -> Result<()> {
    let header_path = header_path.as_ref();
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Header {
            path: header_path.into(),
            message: "header path has no usable file name".into(),
        })?;
    let payload_name = format!("{stem}.raw");
    let payload_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new(""))
        .join(&payload_name);

    let mut bytes = Vec::with_capacity(cube.data.len() * 4);
    for band in 0..cube.bands {
        for v in cube.band(band) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(&payload_path, &bytes)?;

    let header = CubeHeader {
        width: cube.width,
        height: cube.height,
        bands: cube.bands,
        dtype: "f32".into(),
        interleave: "bsq".into(),
        data: payload_name,
    };
    let mut text = serde_json::to_string_pretty(&header)?;
    text.push('\n');
    write_atomic(header_path, text.as_bytes())
}

/// Min-max scales every band to `[0, 1]` independently; constant bands
/// become all zeros.
pub fn normalize_bands(cube: &HyperCube) -> HyperCube {
    let b = cube.bands;
    let mut lo = vec![f64::INFINITY; b];
    let mut hi = vec![f64::NEG_INFINITY; b];
    for px in cube.data.chunks_exact(b) {
        for (k, &v) in px.iter().enumerate() {
            let v = f64::from(v);
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let mut data = cube.data.clone();
    for px in data.chunks_exact_mut(b) {
        for (k, v) in px.iter_mut().enumerate() {
            let range = hi[k] - lo[k];
            *v = if range > 0.0 {
                ((f64::from(*v) - lo[k]) / range) as f32
            } else {
                0.0
            };
        }
    }
    HyperCube { data, ..*cube }
}

/// Removes bands that hold a single value over the whole image, returning
/// the reduced cube and the surviving band indices in their original order.
pub fn drop_zero_entropy_bands(cube: &HyperCube) -> Result<(HyperCube, Vec<usize>)> {
    let kept: Vec<usize> = (0..cube.bands).filter(|&k| !cube.is_constant_band(k)).collect();
    if kept.is_empty() {
        return Err(Error::NoInformativeBands);
    }
    Ok((cube.select_bands(&kept)?, kept))
}
