//! Saliency maps: aggregate input gradients of selected channels, normalize
//! to `[0, 1]`, and threshold into a sparse set of retained pixels.

use std::path::Path;

use crate::backbone::GradientMap;
use crate::error::{Error, Result};
use crate::grid::{write_image, Image};

/// A nonnegative per-pixel importance map.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl SaliencyMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.cols + x]
    }

    /// Quantizes the map to an 8-bit grayscale image (`round(255 * v)` per
    /// pixel) for visual inspection; requires a normalized map.
    pub fn to_image(&self) -> Result<Image> {
        if !self.normalized {
            return Err(Error::invalid("saliency export requires a normalized map"));
        }
        let data = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round() / 255.0)
            .collect();
        Image::new(self.rows, self.cols, 1, data)
    }

    /// Writes the quantized map as a PGM file.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_image(path, &self.to_image()?)
    }
}

/// Pixels that survived thresholding, with the threshold that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSaliency {
    /// `(x, y, value)` per retained pixel, in row-major pixel order.
    points: Vec<(usize, usize, f32)>,
    rows: usize,
    cols: usize,
    threshold: f32,
}

impl SparseSaliency {
    /// Builds a sparse map after validating bounds, the value floor, and
    /// coordinate uniqueness.
    pub fn new(
        points: Vec<(usize, usize, f32)>,
        rows: usize,
        cols: usize,
        threshold: f32,
    ) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &(x, y, v) in &points {
            if x >= cols || y >= rows {
                return Err(Error::invalid(format!(
                    "retained pixel ({x}, {y}) outside {cols}x{rows}"
                )));
            }
            if v < threshold {
                return Err(Error::invalid(format!(
                    "retained value {v} below threshold {threshold}"
                )));
            }
            if !seen.insert((x, y)) {
                return Err(Error::invalid(format!("duplicate retained pixel ({x}, {y})")));
            }
        }
        Ok(SparseSaliency {
            points,
            rows,
            cols,
            threshold,
        })
    }

    pub fn points(&self) -> &[(usize, usize, f32)] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }
}

/// How the sparse map is derived from the normalized map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMethod {
    /// Retain pixels at or above the arithmetic mean.
    Mean,
    /// 256-bin histogram threshold maximizing between-class variance;
    /// retains pixels strictly above the threshold bin.
    Otsu,
}

impl std::fmt::Display for ThresholdMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ThresholdMethod::Mean => "mean",
            ThresholdMethod::Otsu => "otsu",
        })
    }
}

impl std::str::FromStr for ThresholdMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ThresholdMethod::Mean),
            "otsu" => Ok(ThresholdMethod::Otsu),
            other => Err(Error::config(format!(
                "threshold must be 'mean' or 'otsu', got {other:?}"
            ))),
        }
    }
}

/// Averages per-channel absolute input gradients over the given maps.
///
/// Each gradient map is first reduced over its color channels by the
/// maximum absolute value, then the reductions are averaged, so the result
/// is invariant to the order of the maps.
pub fn compute_saliency(grads: &[GradientMap]) -> Result<SaliencyMap> {
    let first = grads
        .first()
        .ok_or_else(|| Error::invalid("saliency needs at least one gradient map"))?;
    let (h, w) = (first.height(), first.width());
    if grads
        .iter()
        .any(|g| g.height() != h || g.width() != w || g.channels() != first.channels())
    {
        return Err(Error::invalid("gradient maps must share the image shape"));
    }
    let mut data = vec![0.0f32; h * w];
    for g in grads {
        for y in 0..h {
            for x in 0..w {
                let mut m = 0.0f32;
                for c in 0..g.channels() {
                    m = m.max(g.value(y, x, c).abs());
                }
                data[y * w + x] += m;
            }
        }
    }
    let inv = 1.0 / grads.len() as f32;
    data.iter_mut().for_each(|v| *v *= inv);
    Ok(SaliencyMap {
        rows: h,
        cols: w,
        data,
        normalized: false,
    })
}

/// Min-max scales the map to `[0, 1]`. A constant map (including all-zero)
/// becomes all-zero.
pub fn normalize(m: &SaliencyMap) -> SaliencyMap {
    let min = m.data.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = m.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let data = if max > min {
        let span = max - min;
        m.data.iter().map(|&v| (v - min) / span).collect()
    } else {
        vec![0.0; m.data.len()]
    };
    SaliencyMap {
        rows: m.rows,
        cols: m.cols,
        data,
        normalized: true,
    }
}

/// Thresholds a normalized map into its sparse form.
///
/// An all-zero map yields an empty result rather than an error.
pub fn threshold(m: &SaliencyMap, method: ThresholdMethod) -> Result<SparseSaliency> {
    if !m.normalized {
        return Err(Error::invalid("threshold requires a normalized map"));
    }
    if m.data.iter().all(|&v| v == 0.0) {
        return Ok(SparseSaliency {
            points: Vec::new(),
            rows: m.rows,
            cols: m.cols,
            threshold: f32::INFINITY,
        });
    }
    let (thresh, keep): (f32, Box<dyn Fn(f32) -> bool>) = match method {
        ThresholdMethod::Mean => {
            let mean =
                (m.data.iter().map(|&v| v as f64).sum::<f64>() / m.data.len() as f64) as f32;
            (mean, Box::new(move |v| v >= mean))
        }
        ThresholdMethod::Otsu => {
            let bin = otsu_bin(&m.data);
            let t = (bin as f32 + 1.0) / 256.0;
            // Retained iff the pixel's bin exceeds the threshold bin,
            // i.e. v >= (bin + 1) / 256.
            (t, Box::new(move |v| quantize_bin(v) > bin))
        }
    };
    let mut points = Vec::new();
    for y in 0..m.rows {
        for x in 0..m.cols {
            let v = m.get(y, x);
            if keep(v) {
                points.push((x, y, v));
            }
        }
    }
    Ok(SparseSaliency {
        points,
        rows: m.rows,
        cols: m.cols,
        threshold: thresh,
    })
}

#[inline]
fn quantize_bin(v: f32) -> usize {
    ((v * 256.0) as usize).min(255)
}

/// The histogram bin maximizing between-class variance.
fn otsu_bin(values: &[f32]) -> usize {
    let mut hist = [0u64; 256];
    for &v in values {
        hist[quantize_bin(v)] += 1;
    }
    let total = values.len() as f64;
    let total_sum: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();

    let mut best_bin = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    let mut w_back = 0.0f64;
    let mut sum_back = 0.0f64;
    for (t, &h) in hist.iter().enumerate() {
        w_back += h as f64;
        if w_back == 0.0 {
            continue;
        }
        let w_fore = total - w_back;
        if w_fore == 0.0 {
            break;
        }
        sum_back += t as f64 * h as f64;
        let mean_back = sum_back / w_back;
        let mean_fore = (total_sum - sum_back) / w_fore;
        let var = w_back * w_fore * (mean_back - mean_fore) * (mean_back - mean_fore);
        if var > best_var {
            best_var = var;
            best_bin = t;
        }
    }
    best_bin
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grad(h: usize, w: usize, c: usize, values: &[f32]) -> GradientMap {
        GradientMap::new(h, w, c, values.to_vec()).unwrap()
    }

    fn map(rows: usize, cols: usize, values: &[f32]) -> SaliencyMap {
        SaliencyMap {
            rows,
            cols,
            data: values.to_vec(),
            normalized: false,
        }
    }

    #[test]
    fn single_map_is_absolute_value() {
        let g = grad(2, 2, 1, &[1.0, -3.0, 0.0, 2.0]);
        let s = compute_saliency(&[g]).unwrap();
        assert_eq!(s.data(), &[1.0, 3.0, 0.0, 2.0]);
    }

    #[test]
    fn two_maps_average() {
        let a = grad(1, 1, 1, &[2.0]);
        let b = grad(1, 1, 1, &[4.0]);
        let s = compute_saliency(&[a, b]).unwrap();
        assert_eq!(s.data(), &[3.0]);
    }

    #[test]
    fn identity_backbone_gives_uniform_quarter() {
        use crate::backbone::{input_gradient, BackboneParams};
        use crate::grid::Image;
        let params = BackboneParams::identity(1, (2, 2));
        let img = Image::new(2, 2, 1, vec![0.3, 0.9, 0.2, 0.6]).unwrap();
        let g = input_gradient(&img, &params, 0).unwrap();
        let s = compute_saliency(&[g]).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn rgb_reduction_takes_max_abs() {
        let g = grad(1, 1, 3, &[0.2, -0.5, 0.1]);
        let s = compute_saliency(&[g]).unwrap();
        assert_eq!(s.data(), &[0.5]);
    }

    #[test]
    fn empty_channel_set_is_error() {
        assert!(compute_saliency(&[]).is_err());
    }

    #[test]
    fn mismatched_dims_is_error() {
        let a = grad(1, 2, 1, &[0.0, 0.0]);
        let b = grad(2, 1, 1, &[0.0, 0.0]);
        assert!(compute_saliency(&[a, b]).is_err());
    }

    #[test]
    fn saliency_invariant_to_channel_order() {
        let a = grad(2, 1, 1, &[0.7, 0.1]);
        let b = grad(2, 1, 1, &[0.2, 0.9]);
        let s1 = compute_saliency(&[a.clone(), b.clone()]).unwrap();
        let s2 = compute_saliency(&[b, a]).unwrap();
        assert_eq!(s1.data(), s2.data());
    }

    #[test]
    fn normalize_min_max() {
        let s = normalize(&map(2, 2, &[1.0, 3.0, 0.0, 2.0]));
        assert_eq!(s.data(), &[1.0 / 3.0, 1.0, 0.0, 2.0 / 3.0]);
        assert!(s.is_normalized());
    }

    #[test]
    fn normalize_constant_map_to_zero() {
        let s = normalize(&map(1, 3, &[0.7, 0.7, 0.7]));
        assert!(s.data().iter().all(|&v| v == 0.0));
        assert!(s.is_normalized());
    }

    #[test]
    fn mean_threshold_splits_at_mean() {
        let s = SaliencyMap {
            rows: 2,
            cols: 2,
            data: vec![0.1, 0.2, 0.8, 0.9],
            normalized: true,
        };
        let sparse = threshold(&s, ThresholdMethod::Mean).unwrap();
        assert_eq!(sparse.points(), &[(0, 1, 0.8), (1, 1, 0.9)]);
        assert_eq!(sparse.threshold(), 0.5);
    }

    #[test]
    fn all_zero_map_gives_empty_sparse() {
        let s = SaliencyMap {
            rows: 2,
            cols: 2,
            data: vec![0.0; 4],
            normalized: true,
        };
        for method in [ThresholdMethod::Mean, ThresholdMethod::Otsu] {
            assert!(threshold(&s, method).unwrap().is_empty());
        }
    }

    #[test]
    fn threshold_requires_normalized_map() {
        let s = map(1, 2, &[0.5, 1.5]);
        assert!(threshold(&s, ThresholdMethod::Mean).is_err());
    }

    #[test]
    fn otsu_separates_bimodal_map() {
        let mut values = vec![0.1f32; 50];
        values.extend(vec![0.9f32; 50]);
        let s = SaliencyMap {
            rows: 10,
            cols: 10,
            data: values,
            normalized: true,
        };
        let sparse = threshold(&s, ThresholdMethod::Otsu).unwrap();
        assert_eq!(sparse.len(), 50);
        assert!(sparse.points().iter().all(|&(_, _, v)| v == 0.9));

        // Brute-force oracle: try all 256 split bins, maximize
        // between-class variance computed directly from the pixels.
        let mut best = (0usize, f64::NEG_INFINITY);
        for t in 0..256usize {
            let (mut n0, mut n1, mut s0, mut s1) = (0f64, 0f64, 0f64, 0f64);
            for &v in s.data() {
                let bin = quantize_bin(v) as f64;
                if quantize_bin(v) <= t {
                    n0 += 1.0;
                    s0 += bin;
                } else {
                    n1 += 1.0;
                    s1 += bin;
                }
            }
            if n0 == 0.0 || n1 == 0.0 {
                continue;
            }
            let d = s0 / n0 - s1 / n1;
            let var = n0 * n1 * d * d;
            if var > best.1 {
                best = (t, var);
            }
        }
        assert_eq!(otsu_bin(s.data()), best.0);
    }

    proptest! {
        // Normalized non-constant maps end with max 1 and min 0.
        #[test]
        fn normalize_hits_bounds(values in proptest::collection::vec(0.0f32..10.0, 2..64)) {
            prop_assume!(values.iter().any(|&v| v != values[0]));
            let s = normalize(&map(1, values.len(), &values));
            let max = s.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let min = s.data().iter().cloned().fold(f32::INFINITY, f32::min);
            prop_assert_eq!(max, 1.0);
            prop_assert_eq!(min, 0.0);
        }

        // Scaling all gradients by a positive constant leaves the
        // normalized map unchanged (scale chosen exactly representable).
        #[test]
        fn normalized_map_scale_invariant(
            values in proptest::collection::vec(-4.0f32..4.0, 4..32),
            pow in -3i32..6,
        ) {
            prop_assume!(values.iter().any(|&v| v.abs() != values[0].abs()));
            let scale = 2.0f32.powi(pow);
            let g1 = grad(1, values.len(), 1, &values);
            let scaled: Vec<f32> = values.iter().map(|&v| v * scale).collect();
            let g2 = grad(1, values.len(), 1, &scaled);
            let n1 = normalize(&compute_saliency(&[g1]).unwrap());
            let n2 = normalize(&compute_saliency(&[g2]).unwrap());
            prop_assert_eq!(n1.data(), n2.data());
        }

        // The mean threshold always retains the global maximum of a
        // non-constant map.
        #[test]
        fn mean_threshold_keeps_global_max(values in proptest::collection::vec(0.0f32..1.0, 4..64)) {
            prop_assume!(values.iter().any(|&v| v != values[0]));
            let s = normalize(&map(1, values.len(), &values));
            let sparse = threshold(&s, ThresholdMethod::Mean).unwrap();
            prop_assert!(!sparse.is_empty());
            let max = s.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            prop_assert!(sparse.points().iter().any(|&(_, _, v)| v == max));
        }
    }
}
