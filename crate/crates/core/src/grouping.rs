//! Near/far camera grouping and camera-distance statistics.

use crate::error::{Error, Result};
use crate::scene::CameraSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionMethod {
    MedianRadial,
    /// Nearest-rank percentile threshold, `p` in percent.
    Percentile(f64),
    KMeans2,
}

/// Assignment of cameras to a near and a far group.
///
/// Every near camera has `r <= r_med` and every far camera `r > r_med`; for
/// percentile and k-means splits `r_med` is the threshold actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePartition {
    pub near_ids: Vec<u32>,
    pub far_ids: Vec<u32>,
    pub r_med: f64,
    pub method: PartitionMethod,
}

impl RegimePartition {
    pub fn is_near(&self, id: u32) -> bool {
        self.near_ids.binary_search(&id).is_ok()
    }

    pub fn is_far(&self, id: u32) -> bool {
        self.far_ids.binary_search(&id).is_ok()
    }

    /// Regime of a camera not in the partition, by the threshold.
    pub fn classify_distance(&self, r: f64) -> Regime {
        if r <= self.r_med {
            Regime::Near
        } else {
            Regime::Far
        }
    }

    pub fn regime_of(&self, cam: &CameraSpec) -> Regime {
        if self.is_near(cam.id) {
            Regime::Near
        } else if self.is_far(cam.id) {
            Regime::Far
        } else {
            self.classify_distance(cam.r)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Near,
    Far,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Near => "near",
            Regime::Far => "far",
        }
    }
}

fn check_cameras(cams: &[CameraSpec]) -> Result<()> {
    if cams.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 cameras to partition, got {}",
            cams.len()
        )));
    }
    let mut ids: Vec<u32> = cams.iter().map(|c| c.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("camera ids must be unique"));
    }
    Ok(())
}

fn sorted_distances(cams: &[CameraSpec]) -> Vec<f64> {
    let mut r: Vec<f64> = cams.iter().map(|c| c.r).collect();
    r.sort_by(f64::total_cmp);
    r
}

/// Splits at `threshold` with ties going near. If that leaves the far group
/// empty, the threshold drops to the largest distance below the maximum.
fn split_at(cams: &[CameraSpec], threshold: f64, method: PartitionMethod) -> Result<RegimePartition> {
    let sorted = sorted_distances(cams);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if min == max {
        return Err(Error::degenerate(format!(
            "all {} cameras are at distance {min}",
            cams.len()
        )));
    }
    let threshold = if threshold >= max {
        sorted.iter().rev().copied().find(|&r| r < max).unwrap_or(min)
    } else {
        threshold
    };
    let mut near_ids = Vec::new();
    let mut far_ids = Vec::new();
    for c in cams {
        if c.r <= threshold {
            near_ids.push(c.id);
        } else {
            far_ids.push(c.id);
        }
    }
    near_ids.sort_unstable();
    far_ids.sort_unstable();
    Ok(RegimePartition {
        near_ids,
        far_ids,
        r_med: threshold,
        method,
    })
}

/// Median radial split using the lower median.
pub fn median_split(cams: &[CameraSpec]) -> Result<RegimePartition> {
    check_cameras(cams)?;
    let sorted = sorted_distances(cams);
    let r_med = sorted[(sorted.len() - 1) / 2];
    split_at(cams, r_med, PartitionMethod::MedianRadial)
}

/// Threshold at the nearest-rank `p`-th percentile of the distances.
pub fn percentile_split(cams: &[CameraSpec], p: f64) -> Result<RegimePartition> {
    check_cameras(cams)?;
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::invalid(format!("percentile must be in (0, 100), got {p}")));
    }
    let sorted = sorted_distances(cams);
    let n = sorted.len();
    // p * n first so integral products stay exact.
    let rank = ((p * n as f64) / 100.0).ceil().clamp(1.0, n as f64) as usize;
    split_at(cams, sorted[rank - 1], PartitionMethod::Percentile(p))
}

/// One-dimensional 2-means on distance, seeded with the min and max.
pub fn kmeans2_split(cams: &[CameraSpec]) -> Result<RegimePartition> {
    check_cameras(cams)?;
    let r: Vec<f64> = cams.iter().map(|c| c.r).collect();
    let sorted = sorted_distances(cams);
    let (mut lo, mut hi) = (sorted[0], sorted[sorted.len() - 1]);
    if lo == hi {
        return Err(Error::degenerate(format!(
            "all {} cameras are at distance {lo}",
            cams.len()
        )));
    }
    let mut assign: Vec<bool> = vec![false; r.len()];
    // Lloyd's iterations on a line terminate; the cap only guards against
    // floating-point cycling.
    for _ in 0..1000 {
        let next: Vec<bool> = r.iter().map(|&v| (v - hi).abs() < (v - lo).abs()).collect();
        let changed = next != assign;
        assign = next;
        let mean = |far: bool| {
            let (s, n) = r
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == far)
                .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
            (n > 0).then(|| s / n as f64)
        };
        if let (Some(l), Some(h)) = (mean(false), mean(true)) {
            lo = l;
            hi = h;
        }
        if !changed {
            break;
        }
    }
    let threshold = r
        .iter()
        .zip(&assign)
        .filter(|(_, &far)| !far)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    split_at(cams, threshold, PartitionMethod::KMeans2)
}

pub fn split(cams: &[CameraSpec], method: PartitionMethod) -> Result<RegimePartition> {
    match method {
        PartitionMethod::MedianRadial => median_split(cams),
        PartitionMethod::Percentile(p) => percentile_split(cams, p),
        PartitionMethod::KMeans2 => kmeans2_split(cams),
    }
}

/// Plain sample moments of camera distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceStats {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    /// Standardized fourth moment (not excess).
    pub kurtosis: f64,
    /// Sarle's coefficient `(skewness^2 + 1) / kurtosis`.
    pub bimodality: f64,
}

pub fn distance_stats(cams: &[CameraSpec]) -> Result<DistanceStats> {
    let r: Vec<f64> = cams.iter().map(|c| c.r).collect();
    moment_stats(&r)
}

/// Population moments (divide by n) and Sarle's bimodality coefficient.
pub fn moment_stats(values: &[f64]) -> Result<DistanceStats> {
    if values.len() < 4 {
        return Err(Error::invalid(format!(
            "need at least 4 values for kurtosis, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if !(m2 > 0.0) {
        return Err(Error::UndefinedMoments("distance variance is zero".into()));
    }
    let skewness = m3 / m2.powf(1.5);
    let kurtosis = m4 / (m2 * m2);
    Ok(DistanceStats {
        mean,
        variance: m2,
        skewness,
        kurtosis,
        bimodality: (skewness * skewness + 1.0) / kurtosis,
    })
}
