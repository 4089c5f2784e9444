use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BinaryMap, GroundTruth, HyperCube};
use crate::error::{Error, Result};

/// Parameters of a synthetic bi-temporal scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Target share of changed pixels, strictly inside (0, 1).
    pub change_fraction: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            bands: 32,
            change_fraction: 0.15,
            noise_sigma: 0.02,
            seed: 7,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.change_fraction > 0.0 && self.change_fraction < 1.0) {
            return Err(Error::Config(format!(
                "change_fraction {} must lie strictly between 0 and 1",
                self.change_fraction
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma {} must be finite and non-negative",
                self.noise_sigma
            )));
        }
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::Config("scene dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub image1: HyperCube,
    pub image2: HyperCube,
    pub ground_truth: GroundTruth,
}

const ENDMEMBERS: usize = 4;
const SIGNATURE_ATTEMPTS: usize = 200;
const ABUNDANCE_SHARPNESS: f64 = 3.0;
const TEXTURE_AMPLITUDE: f64 = 0.01;
const PLACEMENT_ATTEMPTS: usize = 16;

/// Smooth random spectrum: a baseline plus three Gaussian absorption /
/// reflectance features over the normalized wavelength axis.
fn random_signature(rng: &mut ChaCha8Rng, bands: usize) -> Vec<f64> {
    let base = rng.random_range(0.05..0.2);
    let features: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.3..0.9),
                rng.random_range(0.0..1.0),
                rng.random_range(0.08..0.3),
            )
        })
        .collect();
    (0..bands)
        .map(|k| {
            let t = if bands > 1 {
                k as f64 / (bands - 1) as f64
            } else {
                0.5
            };
            base + features
                .iter()
                .map(|&(amp, mu, s)| amp * (-(t - mu).powi(2) / (2.0 * s * s)).exp())
                .sum::<f64>()
        })
        .collect()
}

/// Low-frequency field: a sum of three random plane waves.
fn smooth_field(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut field = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let y = r as f64 / height as f64;
            let x = c as f64 / width as f64;
            field.push(
                waves
                    .iter()
                    .map(|&(fy, fx, phase)| (std::f64::consts::TAU * (fy * y + fx * x) + phase).sin())
                    .sum(),
            );
        }
    }
    field
}

/// Rectangle size `(rows, cols)` whose area is as close to `fraction` of the
/// image as the grid allows.
fn rectangle_size(rng: &mut ChaCha8Rng, height: usize, width: usize, fraction: f64) -> (usize, usize) {
    let target = fraction * (height * width) as f64;
    let aspect: f64 = rng.random_range(0.5..2.0);
    let mut rows = ((target * aspect).sqrt().round() as usize).clamp(1, height);
    let mut cols = ((target / rows as f64).round() as usize).clamp(1, width);
    // Grow along whichever side still has room while that moves the area
    // closer to the target.
    loop {
        let area = (rows * cols) as f64;
        let grow_rows = rows < height && ((rows + 1) * cols) as f64 - target < target - area;
        let grow_cols = cols < width && (rows * (cols + 1)) as f64 - target < target - area;
        if grow_cols {
            cols += 1;
        } else if grow_rows {
            rows += 1;
        } else {
            break;
        }
    }
    (rows, cols)
}

/// Generates a reproducible image pair with one planted changed rectangle.
///
/// Image 1 is a smooth mixture of random endmember spectra. Image 2 is image 1
/// plus i.i.d. Gaussian noise, except inside the rectangle, where the
/// spectrum is replaced by a new smooth signature drawn inside image 1's
/// per-band range, so the planted region does not move the band extrema. Of
/// the sampled signatures, the one farthest from the pixels it replaces
/// (minimum RMS distance after per-band scaling) is used.
pub fn synthesize_pair(spec: &SceneSpec) -> Result<SyntheticPair> {
    spec.validate()?;
    let SceneSpec {
        height,
        width,
        bands,
        ..
    } = *spec;
    let pixels = height * width;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let endmembers: Vec<Vec<f64>> = (0..ENDMEMBERS)
        .map(|_| random_signature(&mut rng, bands))
        .collect();
    let fields: Vec<Vec<f64>> = (0..ENDMEMBERS)
        .map(|_| smooth_field(&mut rng, height, width))
        .collect();

    let mut clean = vec![0.0f64; pixels * bands];
    for p in 0..pixels {
        // Softmax over the fields gives smoothly varying abundances.
        let weights: Vec<f64> = fields.iter().map(|f| (ABUNDANCE_SHARPNESS * f[p]).exp()).collect();
        let total: f64 = weights.iter().sum();
        for (e, wgt) in endmembers.iter().zip(&weights) {
            for k in 0..bands {
                clean[p * bands + k] += wgt / total * e[k];
            }
        }
    }

    let (rows, cols) = rectangle_size(&mut rng, height, width, spec.change_fraction);
    // Of a few random placements, take the one over the most uniform ground.
    let spread = |row0: usize, col0: usize| {
        let mut sum = vec![0.0; bands];
        let mut sq = 0.0;
        for r in row0..row0 + rows {
            for c in col0..col0 + cols {
                let px = &clean[(r * width + c) * bands..(r * width + c + 1) * bands];
                for (acc, &v) in sum.iter_mut().zip(px) {
                    *acc += v;
                }
                sq += px.iter().map(|v| v * v).sum::<f64>();
            }
        }
        let n = (rows * cols) as f64;
        sq / n - sum.iter().map(|s| (s / n).powi(2)).sum::<f64>()
    };
    let (row0, col0) = (0..PLACEMENT_ATTEMPTS)
        .map(|_| {
            (
                rng.random_range(0..=height - rows),
                rng.random_range(0..=width - cols),
            )
        })
        .map(|(r, c)| (spread(r, c), r, c))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, r, c)| (r, c))
        .expect("at least one placement");
    let inside = |p: usize| {
        let (r, c) = (p / width, p % width);
        (row0..row0 + rows).contains(&r) && (col0..col0 + cols).contains(&c)
    };

    let mut lo = vec![f64::INFINITY; bands];
    let mut hi = vec![f64::NEG_INFINITY; bands];
    for px in clean.chunks_exact(bands) {
        for (k, &v) in px.iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    // Allow for the texture modulation applied inside the region.
    let swing = 3.0 * TEXTURE_AMPLITUDE;
    let in_range = |sig: &[f64]| {
        sig.iter()
            .enumerate()
            .all(|(k, &v)| v * (1.0 - swing) >= lo[k] && v * (1.0 + swing) <= hi[k])
    };
    // Distance measured on the per-band normalized scale.
    let separation = |sig: &[f64]| {
        (0..pixels)
            .filter(|&p| inside(p))
            .map(|p| {
                let px = &clean[p * bands..(p + 1) * bands];
                let ss: f64 = (0..bands)
                    .map(|k| ((sig[k] - px[k]) / (hi[k] - lo[k]).max(f64::EPSILON)).powi(2))
                    .sum();
                (ss / bands as f64).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    };
    // Best in-range candidate first, best overall as a fallback.
    let mut best: Option<(bool, f64, Vec<f64>)> = None;
    for _ in 0..SIGNATURE_ATTEMPTS {
        let shape = random_signature(&mut rng, bands);
        let (smin, smax) = shape
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let spread = (smax - smin).max(f64::EPSILON);
        let candidate: Vec<f64> = shape
            .iter()
            .enumerate()
            .map(|(k, &v)| lo[k] + (0.02 + 0.96 * (v - smin) / spread) * (hi[k] - lo[k]))
            .collect();
        let key = (in_range(&candidate), separation(&candidate));
        if best.as_ref().is_none_or(|(r, s, _)| key > (*r, *s)) {
            best = Some((key.0, key.1, candidate));
        }
    }
    let (_, _, changed_signature) = best.expect("at least one signature attempt");
    let texture = smooth_field(&mut rng, height, width);

    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut second = clean.clone();
    let mut labels = vec![0u8; pixels];
    for p in 0..pixels {
        if inside(p) {
            labels[p] = 1;
            let scale = 1.0 + TEXTURE_AMPLITUDE * texture[p];
            for k in 0..bands {
                second[p * bands + k] = changed_signature[k] * scale;
            }
        }
        if let Some(noise) = &noise {
            for k in 0..bands {
                second[p * bands + k] += noise.sample(&mut rng);
            }
        }
    }

    let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
    Ok(SyntheticPair {
        image1: HyperCube::new(height, width, bands, to_f32(clean))?,
        image2: HyperCube::new(height, width, bands, to_f32(second))?,
        ground_truth: BinaryMap::new(height, width, labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SceneSpec {
        SceneSpec {
            height: 24,
            width: 20,
            bands: 6,
            change_fraction: 0.1,
            noise_sigma: 0.02,
            seed,
        }
    }

    #[test]
    fn same_seed_reproduces() {
        assert_eq!(synthesize_pair(&small(7)).unwrap(), synthesize_pair(&small(7)).unwrap());
        assert_ne!(synthesize_pair(&small(7)).unwrap(), synthesize_pair(&small(8)).unwrap());
    }

    #[test]
    fn noiseless_pair_differs_only_in_region() {
        let spec = SceneSpec {
            noise_sigma: 0.0,
            change_fraction: 0.02,
            ..small(3)
        };
        let pair = synthesize_pair(&spec).unwrap();
        let gt = &pair.ground_truth;
        assert!(gt.changed_count() > 0);
        for r in 0..spec.height {
            for c in 0..spec.width {
                let same = pair.image1.pixel(r, c) == pair.image2.pixel(r, c);
                assert_eq!(same, gt.get(r, c) == 0, "pixel ({r}, {c})");
            }
        }
    }

    #[test]
    fn changed_fraction_is_close_to_target() {
        // Oracle: count the planted pixels directly for a sweep of specs.
        for (seed, (h, w, f)) in [(32, 32, 0.15), (64, 64, 0.15), (40, 25, 0.05), (17, 50, 0.3), (64, 48, 0.5)]
            .into_iter()
            .enumerate()
        {
            let spec = SceneSpec {
                height: h,
                width: w,
                bands: 3,
                change_fraction: f,
                noise_sigma: 0.01,
                seed: seed as u64,
            };
            let pair = synthesize_pair(&spec).unwrap();
            let frac = pair.ground_truth.changed_count() as f64 / (h * w) as f64;
            assert!((frac - f).abs() <= 0.2 * f, "{h}x{w} target {f} got {frac}");
        }
    }

    #[test]
    fn planted_region_is_a_rectangle() {
        let pair = synthesize_pair(&small(11)).unwrap();
        let gt = &pair.ground_truth;
        let cells: Vec<(usize, usize)> = (0..gt.height())
            .flat_map(|r| (0..gt.width()).map(move |c| (r, c)))
            .filter(|&(r, c)| gt.get(r, c) == 1)
            .collect();
        let rmin = cells.iter().map(|c| c.0).min().unwrap();
        let rmax = cells.iter().map(|c| c.0).max().unwrap();
        let cmin = cells.iter().map(|c| c.1).min().unwrap();
        let cmax = cells.iter().map(|c| c.1).max().unwrap();
        assert_eq!(cells.len(), (rmax - rmin + 1) * (cmax - cmin + 1));
    }

    #[test]
    fn fraction_bounds_enforced() {
        for f in [0.0, 1.0, 1.5, -0.1, f64::NAN] {
            let spec = SceneSpec {
                change_fraction: f,
                ..small(1)
            };
            assert!(matches!(synthesize_pair(&spec), Err(Error::Config(_))));
        }
    }
}
