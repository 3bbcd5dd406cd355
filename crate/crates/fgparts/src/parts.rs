//! From sparse saliency to ranked part bounding boxes: greedy non-maximum
//! suppression picks peaks, Lloyd's algorithm clusters the retained pixels
//! in a 6-D feature space seeded at those peaks, and each cluster becomes
//! an axis-aligned box covering (almost) all of its pixels.

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::saliency::SparseSaliency;

/// Boxes are grown to this side length (clipped to the image) so a crop
/// survives resizing to the extractor input without degenerating.
pub const MIN_BOX_SIDE: usize = 8;

/// Per-dimension weights for the clustering feature space
/// `(x/width, y/height, saliency, r, g, b)`.
pub type FeatureWeights = [f32; 6];

pub const UNIT_WEIGHTS: FeatureWeights = [1.0; 6];

/// Default suppression radius for an `h` x `w` image.
pub fn default_nms_radius(h: usize, w: usize) -> usize {
    (h.max(w) / 8).max(3)
}

/// A local saliency maximum, ranked by descending value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub x: usize,
    pub y: usize,
    pub saliency: f32,
    /// 1-based index in descending saliency order.
    pub rank: usize,
}

/// One retained pixel with its cluster id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterPoint {
    pub x: usize,
    pub y: usize,
    pub saliency: f32,
    pub rgb: [f32; 3],
    pub cluster: usize,
}

/// The result of clustering retained pixels around the peaks.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    points: Vec<ClusterPoint>,
    k: usize,
    centroids: Vec<[f64; 6]>,
    rows: usize,
    cols: usize,
}

impl ClusterAssignment {
    pub fn points(&self) -> &[ClusterPoint] {
        &self.points
    }

    pub fn cluster_count(&self) -> usize {
        self.k
    }

    pub fn centroids(&self) -> &[[f64; 6]] {
        &self.centroids
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// An axis-aligned part box with inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    /// Saliency order of the seed peak, 1-based.
    pub rank: usize,
    /// Fraction of the cluster's pixels inside the box.
    pub recall: f32,
}

impl PartBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    /// Intersection over union with another box.
    pub fn iou(&self, other: &PartBox) -> f32 {
        let ix0 = self.x0.max(other.x0);
        let iy0 = self.y0.max(other.y0);
        let ix1 = self.x1.min(other.x1);
        let iy1 = self.y1.min(other.y1);
        if ix0 > ix1 || iy0 > iy1 {
            return 0.0;
        }
        let inter = ((ix1 - ix0 + 1) * (iy1 - iy0 + 1)) as f32;
        let a = (self.width() * self.height()) as f32;
        let b = (other.width() * other.height()) as f32;
        inter / (a + b - inter)
    }
}

/// Greedy non-maximum suppression over the retained pixels.
///
/// Repeatedly takes the highest remaining pixel (ties: smaller y, then
/// smaller x) and suppresses everything within Chebyshev distance
/// `radius`, until `k` peaks are found or the pixels run out. An empty
/// sparse map yields an empty list.
pub fn find_peaks(s: &SparseSaliency, k: usize, radius: usize) -> Result<Vec<Peak>> {
    if k == 0 {
        return Err(Error::invalid("peak count must be at least 1"));
    }
    if radius == 0 {
        return Err(Error::invalid("suppression radius must be at least 1"));
    }
    let mut candidates: Vec<&(usize, usize, f32)> = s.points().iter().collect();
    // Points come in (y, x) scan order; a stable sort by descending value
    // leaves ties ordered by smaller y then smaller x.
    candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
    let mut peaks: Vec<Peak> = Vec::new();
    for &&(x, y, v) in &candidates {
        if peaks.len() == k {
            break;
        }
        let suppressed = peaks
            .iter()
            .any(|p| chebyshev(p.x, p.y, x, y) <= radius);
        if !suppressed {
            peaks.push(Peak {
                x,
                y,
                saliency: v,
                rank: peaks.len() + 1,
            });
        }
    }
    Ok(peaks)
}

#[inline]
fn chebyshev(x0: usize, y0: usize, x1: usize, y1: usize) -> usize {
    x0.abs_diff(x1).max(y0.abs_diff(y1))
}

/// Clusters retained pixels with Lloyd's algorithm in the 6-D space
/// `(x/width, y/height, saliency, r, g, b)`, centroids seeded at the
/// peaks' feature vectors. Unit feature weights.
pub fn cluster_pixels(
    s: &SparseSaliency,
    img: &Image,
    peaks: &[Peak],
) -> Result<ClusterAssignment> {
    cluster_pixels_weighted(s, img, peaks, &UNIT_WEIGHTS).map(|(a, _)| a)
}

/// [`cluster_pixels`] with explicit per-dimension weights; also returns the
/// within-cluster cost recorded after every iteration.
pub fn cluster_pixels_weighted(
    s: &SparseSaliency,
    img: &Image,
    peaks: &[Peak],
    weights: &FeatureWeights,
) -> Result<(ClusterAssignment, Vec<f64>)> {
    if peaks.is_empty() {
        return Err(Error::invalid("clustering needs at least one peak"));
    }
    if s.is_empty() {
        return Err(Error::invalid("clustering needs retained pixels"));
    }
    if img.height() != s.rows() || img.width() != s.cols() {
        return Err(Error::invalid("image and sparse map dims disagree"));
    }
    for p in peaks {
        if !s.points().iter().any(|&(x, y, _)| x == p.x && y == p.y) {
            return Err(Error::invalid(format!(
                "peak ({}, {}) is not a retained pixel",
                p.x, p.y
            )));
        }
    }

    let w = weights.map(|v| v as f64);
    let feats: Vec<[f64; 6]> = s
        .points()
        .iter()
        .map(|&(x, y, v)| feature_vector(x, y, v, img))
        .collect();
    let mut centroids: Vec<[f64; 6]> = peaks
        .iter()
        .map(|p| {
            let v = s
                .points()
                .iter()
                .find(|&&(x, y, _)| x == p.x && y == p.y)
                .unwrap()
                .2;
            feature_vector(p.x, p.y, v, img)
        })
        .collect();
    let k = centroids.len();

    let mut assign = vec![0usize; feats.len()];
    let mut costs: Vec<f64> = Vec::new();
    for _ in 0..100 {
        // Assignment step; ties go to the lowest cluster id.
        let mut new_assign = vec![0usize; feats.len()];
        for (i, f) in feats.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = weighted_sq_dist(f, &centroids[0], &w);
            for (c, cent) in centroids.iter().enumerate().skip(1) {
                let d = weighted_sq_dist(f, cent, &w);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            new_assign[i] = best;
        }
        let converged = !costs.is_empty() && new_assign == assign;
        assign = new_assign;

        // Update step: plain means, empty clusters reseeded at the pixel
        // farthest from every current centroid.
        let mut sums = vec![[0.0f64; 6]; k];
        let mut counts = vec![0usize; k];
        for (f, &c) in feats.iter().zip(&assign) {
            counts[c] += 1;
            for j in 0..6 {
                sums[c][j] += f[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..6 {
                    centroids[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = feats
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| {
                        let da = min_dist_to_centroids(a, &centroids, &w);
                        let db = min_dist_to_centroids(b, &centroids, &w);
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[c] = feats[far];
            }
        }

        let cost: f64 = feats
            .iter()
            .zip(&assign)
            .map(|(f, &c)| weighted_sq_dist(f, &centroids[c], &w))
            .sum();
        if let Some(&last) = costs.last() {
            debug_assert!(
                cost <= last + 1e-9 * last.max(1.0),
                "clustering cost increased: {last} -> {cost}"
            );
        }
        costs.push(cost);
        if converged {
            break;
        }
    }

    let points = s
        .points()
        .iter()
        .zip(&assign)
        .map(|(&(x, y, v), &c)| ClusterPoint {
            x,
            y,
            saliency: v,
            rgb: img.rgb(y, x),
            cluster: c,
        })
        .collect();
    Ok((
        ClusterAssignment {
            points,
            k,
            centroids,
            rows: s.rows(),
            cols: s.cols(),
        },
        costs,
    ))
}

fn feature_vector(x: usize, y: usize, v: f32, img: &Image) -> [f64; 6] {
    let rgb = img.rgb(y, x);
    [
        x as f64 / img.width() as f64,
        y as f64 / img.height() as f64,
        v as f64,
        rgb[0] as f64,
        rgb[1] as f64,
        rgb[2] as f64,
    ]
}

#[inline]
fn weighted_sq_dist(a: &[f64; 6], b: &[f64; 6], w: &[f64; 6]) -> f64 {
    let mut acc = 0.0;
    for j in 0..6 {
        let d = a[j] - b[j];
        acc += w[j] * d * d;
    }
    acc
}

fn min_dist_to_centroids(f: &[f64; 6], centroids: &[[f64; 6]], w: &[f64; 6]) -> f64 {
    centroids
        .iter()
        .map(|c| weighted_sq_dist(f, c, w))
        .fold(f64::INFINITY, f64::min)
}

/// Turns each cluster into a part box.
///
/// With `q = 1` the box is the tight min/max hull of the cluster's pixels
/// (recall exactly 1). With `q < 1` it is the smallest-area box whose
/// pixels hold at least `q` of the cluster's saliency mass, scanning
/// candidate bounds over the cluster's coordinates (ties: smaller area,
/// then smaller x0, then smaller y0). Boxes are then expanded to a minimum
/// side of [`MIN_BOX_SIDE`] pixels, centered and clipped to the image, and
/// returned in seed-peak rank order.
pub fn boxes_from_clusters(a: &ClusterAssignment, q: f64) -> Result<Vec<PartBox>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("mass quantile must be in (0, 1], got {q}")));
    }
    if a.points.is_empty() {
        return Err(Error::invalid("box estimation needs at least one pixel"));
    }
    let mut boxes = Vec::new();
    for c in 0..a.k {
        let members: Vec<&ClusterPoint> = a.points.iter().filter(|p| p.cluster == c).collect();
        if members.is_empty() {
            continue;
        }
        let (x0, y0, x1, y1) = tight_box(&members, q);
        let (x0, x1) = expand_axis(x0, x1, a.cols);
        let (y0, y1) = expand_axis(y0, y1, a.rows);
        let inside = members
            .iter()
            .filter(|p| p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1)
            .count();
        boxes.push(PartBox {
            x0,
            y0,
            x1,
            y1,
            rank: c + 1,
            recall: inside as f32 / members.len() as f32,
        });
    }
    Ok(boxes)
}

/// Minimal box holding at least `q` of the cluster's saliency mass; the
/// full min/max hull when `q = 1`.
fn tight_box(members: &[&ClusterPoint], q: f64) -> (usize, usize, usize, usize) {
    let hull = (
        members.iter().map(|p| p.x).min().unwrap(),
        members.iter().map(|p| p.y).min().unwrap(),
        members.iter().map(|p| p.x).max().unwrap(),
        members.iter().map(|p| p.y).max().unwrap(),
    );
    if q >= 1.0 {
        return hull;
    }
    let mut xs: Vec<usize> = members.iter().map(|p| p.x).collect();
    let mut ys: Vec<usize> = members.iter().map(|p| p.y).collect();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    let total: f64 = members.iter().map(|p| p.saliency as f64).sum();
    let target = q * total;

    let mut best: Option<(usize, usize, usize, usize, usize)> = None; // area, x0, y0, x1, y1
    for (yi0, &y0) in ys.iter().enumerate() {
        for &y1 in &ys[yi0..] {
            // Saliency mass per unique x within the y-band.
            let mut col_mass = vec![0.0f64; xs.len()];
            for p in members {
                if p.y >= y0 && p.y <= y1 {
                    let xi = xs.binary_search(&p.x).unwrap();
                    col_mass[xi] += p.saliency as f64;
                }
            }
            let mut prefix = vec![0.0f64; xs.len() + 1];
            for (i, &m) in col_mass.iter().enumerate() {
                prefix[i + 1] = prefix[i] + m;
            }
            for (xi0, &x0) in xs.iter().enumerate() {
                for (xi1, &x1) in xs.iter().enumerate().skip(xi0) {
                    let mass = prefix[xi1 + 1] - prefix[xi0];
                    if mass + 1e-12 >= target {
                        let area = (x1 - x0 + 1) * (y1 - y0 + 1);
                        let cand = (area, x0, y0, x1, y1);
                        if best.map_or(true, |b| cand < b) {
                            best = Some(cand);
                        }
                        break; // wider x1 only grows the area
                    }
                }
            }
        }
    }
    best.map(|(_, x0, y0, x1, y1)| (x0, y0, x1, y1)).unwrap_or(hull)
}

/// Grows `[lo, hi]` to at least [`MIN_BOX_SIDE`], centered and clipped to
/// `[0, limit)`.
fn expand_axis(lo: usize, hi: usize, limit: usize) -> (usize, usize) {
    let side = hi - lo + 1;
    if side >= MIN_BOX_SIDE {
        return (lo, hi);
    }
    if limit <= MIN_BOX_SIDE {
        return (0, limit - 1);
    }
    let deficit = MIN_BOX_SIDE - side;
    let lo = lo.saturating_sub(deficit / 2);
    if lo + MIN_BOX_SIDE > limit {
        (limit - MIN_BOX_SIDE, limit - 1)
    } else {
        (lo, lo + MIN_BOX_SIDE - 1)
    }
}
