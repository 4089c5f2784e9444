//! Feature selection, difference images and the changed / unchanged decision.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{BinaryMap, ChangeMap};
use crate::nn::Tensor;

/// Maps whose difference has entropy at or below this many bits are treated
/// as carrying no change information.
pub const DEFAULT_ENTROPY_THRESHOLD: f64 = 1e-6;

pub const HISTOGRAM_BINS: usize = 256;

/// Shannon entropy (bits) of a map's 256-bin histogram after min-max
/// scaling. A constant map has entropy exactly 0.
pub fn image_entropy(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if values.is_empty() || !(range > 0.0) {
        return 0.0;
    }
    let mut counts = [0usize; HISTOGRAM_BINS];
    for &v in values {
        let bin = (((v - lo) / range) * HISTOGRAM_BINS as f64) as usize;
        counts[bin.min(HISTOGRAM_BINS - 1)] += 1;
    }
    let n = values.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Selected deep feature maps of both images.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedFeatures {
    pub sel1: Tensor,
    pub sel2: Tensor,
    /// Original channel indices, strictly increasing.
    pub kept: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Features(SelectedFeatures),
    /// Every channel difference was constant: the images look identical to
    /// the feature extractor.
    NoDiscriminativeFeatures { height: usize, width: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSelection {
    /// Entropy of `dfm1[k] - dfm2[k]` for every channel `k`.
    pub entropies: Vec<f64>,
    pub threshold: f64,
    pub outcome: Selection,
}

impl FeatureSelection {
    pub fn kept(&self) -> &[usize] {
        match &self.outcome {
            Selection::Features(f) => &f.kept,
            Selection::NoDiscriminativeFeatures { .. } => &[],
        }
    }

    /// `channel,entropy,kept` rows.
    pub fn to_csv(&self) -> String {
        let kept = self.kept();
        let mut out = String::from("channel,entropy,kept\n");
        for (k, e) in self.entropies.iter().enumerate() {
            out.push_str(&format!("{k},{e:.6},{}\n", u8::from(kept.contains(&k))));
        }
        out
    }
}

pub fn select_feature_maps(dfm1: &Tensor, dfm2: &Tensor) -> Result<FeatureSelection> {
    select_feature_maps_with_threshold(dfm1, dfm2, DEFAULT_ENTROPY_THRESHOLD)
}

/// Keeps channel `k` iff the entropy of `dfm1[k] - dfm2[k]` exceeds `threshold`.
pub fn select_feature_maps_with_threshold(
    dfm1: &Tensor,
    dfm2: &Tensor,
    threshold: f64,
) -> Result<FeatureSelection> {
    dfm1.ensure_same_shape(dfm2, "feature maps")?;
    let channels = dfm1.channels();
    let pixels = dfm1.pixel_count();
    let entropies: Vec<f64> = (0..channels)
        .map(|k| {
            let diff: Vec<f64> = (0..pixels)
                .map(|p| dfm1.pixel(p)[k] - dfm2.pixel(p)[k])
                .collect();
            image_entropy(&diff)
        })
        .collect();
    let kept: Vec<usize> = (0..channels).filter(|&k| entropies[k] > threshold).collect();
    let outcome = if kept.is_empty() {
        Selection::NoDiscriminativeFeatures {
            height: dfm1.height(),
            width: dfm1.width(),
        }
    } else {
        Selection::Features(SelectedFeatures {
            sel1: dfm1.select_channels(&kept)?,
            sel2: dfm2.select_channels(&kept)?,
            kept,
        })
    };
    Ok(FeatureSelection {
        entropies,
        threshold,
        outcome,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifferenceOperator {
    /// Channel-wise absolute difference.
    Ad,
    /// Spectral angle between the two pixels' feature vectors.
    Sam,
}

impl fmt::Display for DifferenceOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DifferenceOperator::Ad => "ad",
            DifferenceOperator::Sam => "sam",
        })
    }
}

impl FromStr for DifferenceOperator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ad" => Ok(DifferenceOperator::Ad),
            "sam" => Ok(DifferenceOperator::Sam),
            other => Err(Error::Config(format!("unknown difference operator {other:?}"))),
        }
    }
}

/// How an AD image is presented to the clustering step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdReduction {
    /// Cluster the per-pixel vector of channel differences.
    #[default]
    Vector,
    /// Collapse each pixel's differences to their Euclidean norm first.
    Norm,
}

/// Non-negative per-pixel dissimilarity between two feature stacks.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceImage {
    operator: DifferenceOperator,
    data: Tensor,
}

impl DifferenceImage {
    pub fn operator(&self) -> DifferenceOperator {
        self.operator
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.height()
    }

    pub fn width(&self) -> usize {
        self.data.width()
    }

    pub fn channels(&self) -> usize {
        self.data.channels()
    }

    /// Single-channel image of per-pixel Euclidean norms.
    pub fn collapse_norm(&self) -> DifferenceImage {
        let (h, w, _) = self.data.shape();
        let values = (0..self.data.pixel_count())
            .map(|p| self.data.pixel(p).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        DifferenceImage {
            operator: self.operator,
            data: Tensor::from_vec(h, w, 1, values).expect("one value per pixel"),
        }
    }
}

fn check_pair(sel1: &Tensor, sel2: &Tensor) -> Result<()> {
    sel1.ensure_same_shape(sel2, "difference operands")?;
    if sel1.channels() == 0 {
        return Err(Error::Shape("difference of zero-channel tensors".into()));
    }
    Ok(())
}

pub fn diff_ad(sel1: &Tensor, sel2: &Tensor) -> Result<DifferenceImage> {
    check_pair(sel1, sel2)?;
    let (h, w, c) = sel1.shape();
    let values = sel1
        .values()
        .iter()
        .zip(sel2.values())
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(DifferenceImage {
        operator: DifferenceOperator::Ad,
        data: Tensor::from_vec(h, w, c, values)?,
    })
}

/// Angle in `[0, π]` between two vectors. Two zero vectors are at angle 0;
/// a zero and a non-zero vector are orthogonal.
pub fn spectral_angle(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => std::f64::consts::FRAC_PI_2,
        (false, false) => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (dot / (na * nb)).clamp(-1.0, 1.0).acos()
        }
    }
}

pub fn diff_sam(sel1: &Tensor, sel2: &Tensor) -> Result<DifferenceImage> {
    check_pair(sel1, sel2)?;
    let (h, w, _) = sel1.shape();
    let values = (0..sel1.pixel_count())
        .map(|p| spectral_angle(sel1.pixel(p), sel2.pixel(p)))
        .collect();
    Ok(DifferenceImage {
        operator: DifferenceOperator::Sam,
        data: Tensor::from_vec(h, w, 1, values)?,
    })
}

pub fn difference(sel1: &Tensor, sel2: &Tensor, operator: DifferenceOperator) -> Result<DifferenceImage> {
    match operator {
        DifferenceOperator::Ad => diff_ad(sel1, sel2),
        DifferenceOperator::Sam => diff_sam(sel1, sel2),
    }
}

pub const KMEANS_MAX_ITERATIONS: usize = 100;
pub const KMEANS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans2 {
    /// Cluster index (0 or 1) per sample.
    pub assignments: Vec<usize>,
    pub centroids: [Vec<f64>; 2],
    pub iterations: usize,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(sample: &[f64], centroids: &[Vec<f64>; 2]) -> usize {
    usize::from(squared_distance(sample, &centroids[1]) < squared_distance(sample, &centroids[0]))
}

/// Two-cluster k-means over `samples` (row-major, `dim` values per sample).
///
/// Seeding is k-means++ from a ChaCha8 stream seeded with `seed`; Lloyd
/// iterations stop once neither centroid moves more than
/// [`KMEANS_TOLERANCE`] or after [`KMEANS_MAX_ITERATIONS`]. A cluster that
/// empties is reseeded with the sample farthest from the other centroid.
pub fn kmeans2(samples: &[f64], dim: usize, seed: u64) -> Result<KMeans2> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!(
            "{} values do not split into samples of dimension {dim}",
            samples.len()
        )));
    }
    let rows: Vec<&[f64]> = samples.chunks_exact(dim).collect();
    let n = rows.len();
    if n < 2 || rows.iter().all(|r| *r == rows[0]) {
        return Err(Error::DegenerateClustering);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rows[rng.random_range(0..n)].to_vec();
    let weights: Vec<f64> = rows.iter().map(|r| squared_distance(r, &first)).collect();
    let total: f64 = weights.iter().sum();
    let mut target = rng.random::<f64>() * total;
    let mut second_idx = n - 1;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 && target < *w {
            second_idx = i;
            break;
        }
        target -= w;
    }
    if weights[second_idx] == 0.0 {
        second_idx = weights
            .iter()
            .enumerate()
            .fold(0, |best, (i, &w)| if w > weights[best] { i } else { best });
    }
    let mut result = lloyd(&rows, [first, rows[second_idx].to_vec()]);
    if dim == 1 {
        // Scalars: also start from the best split of the sorted values, the
        // global optimum, so a poor seeding cannot strand the result.
        let split = lloyd(&rows, best_scalar_split(samples));
        if split.inertia < result.inertia {
            result = split;
        }
    }
    Ok(result)
}

/// Centroids of the lowest-cost two-group split of sorted scalars.
fn best_scalar_split(values: &[f64]) -> [Vec<f64>; 2] {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let total: f64 = sorted.iter().sum();
    let (mut best, mut best_cost) = ([vec![sorted[0]], vec![sorted[n - 1]]], f64::INFINITY);
    let mut left = 0.0;
    for i in 1..n {
        left += sorted[i - 1];
        if sorted[i - 1] == sorted[i] {
            continue;
        }
        let (ml, mr) = (left / i as f64, (total - left) / (n - i) as f64);
        let cost = -(i as f64) * ml * ml - (n - i) as f64 * mr * mr;
        if cost < best_cost {
            best_cost = cost;
            best = [vec![ml], vec![mr]];
        }
    }
    best
}

fn lloyd(rows: &[&[f64]], mut centroids: [Vec<f64>; 2]) -> KMeans2 {
    let dim = centroids[0].len();
    let n = rows.len();

    let mut assignments = vec![0usize; n];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERATIONS {
        iterations += 1;
        for (a, r) in assignments.iter_mut().zip(rows) {
            *a = nearest(r, &centroids);
        }
        let mut sums = [vec![0.0; dim], vec![0.0; dim]];
        let mut counts = [0usize; 2];
        for (&a, r) in assignments.iter().zip(rows) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(r.iter()) {
                *s += v;
            }
        }
        let mut updated = sums;
        for c in 0..2 {
            if counts[c] > 0 {
                for s in updated[c].iter_mut() {
                    *s /= counts[c] as f64;
                }
            }
        }
        for c in 0..2 {
            if counts[c] == 0 {
                let other = &updated[1 - c];
                let far = rows
                    .iter()
                    .enumerate()
                    .fold((0, -1.0), |(bi, bd), (i, r)| {
                        let d = squared_distance(r, other);
                        if d > bd {
                            (i, d)
                        } else {
                            (bi, bd)
                        }
                    })
                    .0;
                updated[c] = rows[far].to_vec();
            }
        }
        let movement = (0..2)
            .map(|c| squared_distance(&centroids[c], &updated[c]).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if movement < KMEANS_TOLERANCE {
            break;
        }
    }

    let mut inertia = 0.0;
    for (a, r) in assignments.iter_mut().zip(rows) {
        *a = nearest(r, &centroids);
        inertia += squared_distance(r, &centroids[*a]);
    }
    KMeans2 {
        assignments,
        centroids,
        iterations,
        inertia,
    }
}

/// Clusters the difference image's pixel vectors into two groups and labels
/// the group whose centroid has the larger norm as changed.
///
/// A difference image in which every pixel carries the same vector holds no
/// evidence for a split and yields an all-unchanged map.
pub fn decide_change(di: &DifferenceImage, seed: u64) -> Result<ChangeMap> {
    let data = di.data();
    let first = data.pixel(0);
    if (1..data.pixel_count()).all(|p| data.pixel(p) == first) {
        return BinaryMap::unchanged(di.height(), di.width());
    }
    let km = kmeans2(data.values(), data.channels(), seed)?;
    let norm = |c: &[f64]| c.iter().map(|v| v * v).sum::<f64>();
    let changed = usize::from(norm(&km.centroids[1]) > norm(&km.centroids[0]));
    let labels = km
        .assignments
        .iter()
        .map(|&a| u8::from(a == changed))
        .collect();
    BinaryMap::new(di.height(), di.width(), labels)
}

/// Difference + decision on a feature selection; the no-feature outcome
/// maps straight to an all-unchanged map.
pub fn detect_changes(
    selection: &FeatureSelection,
    operator: DifferenceOperator,
    reduction: AdReduction,
    seed: u64,
) -> Result<(ChangeMap, Option<DifferenceImage>)> {
    match &selection.outcome {
        Selection::NoDiscriminativeFeatures { height, width } => {
            Ok((BinaryMap::unchanged(*height, *width)?, None))
        }
        Selection::Features(f) => {
            let mut di = difference(&f.sel1, &f.sel2, operator)?;
            if operator == DifferenceOperator::Ad && reduction == AdReduction::Norm {
                di = di.collapse_norm();
            }
            let map = decide_change(&di, seed)?;
            Ok((map, Some(di)))
        }
    }
}
