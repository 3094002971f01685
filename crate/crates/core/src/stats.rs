//! Population statistics of adversarial images: color-histogram KL divergence,
//! L2 distance samples and Gaussian kernel density estimates of both.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{JndError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const HISTOGRAM_BINS: usize = 256;
/// Added to every histogram bin before renormalizing.
pub const KL_SMOOTHING: f64 = 1e-10;
/// The KDE grid extends this many bandwidths beyond the sample range.
pub const KDE_TAIL_BANDWIDTHS: f64 = 4.0;
pub const KDE_DEFAULT_POINTS: usize = 512;

/// Normalized 256-bin histogram per channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorHistogram {
    pub channels: Vec<Vec<f64>>,
}

pub fn color_histogram<T: Scalar>(image: &Tensor<T>) -> Result<ColorHistogram> {
    let c = match *image.shape() {
        [h, w, c] if h * w > 0 && c > 0 => c,
        ref s => return Err(JndError::Dimension(format!("histogram needs a non-empty [H, W, C] image, got {s:?}"))),
    };
    let mut channels = vec![vec![0.0; HISTOGRAM_BINS]; c];
    for (i, v) in image.data().iter().enumerate() {
        let p = v.as_f64();
        if !(0.0..=255.0).contains(&p) {
            return Err(JndError::Input(format!("pixel {p} at index {i} is outside [0, 255]; clamp first")));
        }
        channels[i % c][(p.floor() as usize).min(HISTOGRAM_BINS - 1)] += 1.0;
    }
    let per_channel = (image.len() / c) as f64;
    for ch in &mut channels {
        ch.iter_mut().for_each(|b| *b /= per_channel);
    }
    Ok(ColorHistogram { channels })
}

fn smoothed(bins: &[f64]) -> Vec<f64> {
    let total: f64 = bins.iter().map(|b| b + KL_SMOOTHING).sum();
    bins.iter().map(|b| (b + KL_SMOOTHING) / total).collect()
}

/// `Σ_channels Σ_r p(r)·ln(p(r)/q(r))` in nats, both histograms smoothed.
pub fn kl_divergence(p: &ColorHistogram, q: &ColorHistogram) -> Result<f64> {
    if p.channels.len() != q.channels.len() {
        return Err(JndError::Dimension(format!(
            "histograms have {} and {} channels",
            p.channels.len(),
            q.channels.len()
        )));
    }
    let mut total = 0.0;
    for (pc, qc) in p.channels.iter().zip(&q.channels) {
        if pc.len() != qc.len() {
            return Err(JndError::Dimension(format!("histogram bin counts differ: {} vs {}", pc.len(), qc.len())));
        }
        let (ps, qs) = (smoothed(pc), smoothed(qc));
        total += ps.iter().zip(&qs).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum::<f64>();
    }
    // rounding can leave a tiny negative value for identical inputs
    Ok(total.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Bandwidth {
    /// `1.06·σ·n^(−1/5)`.
    Silverman,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityEstimate {
    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
            .sum()
    }

    /// Grid point of maximum density (first one on ties).
    pub fn mode(&self) -> f64 {
        let mut best = 0;
        for (i, &d) in self.density.iter().enumerate() {
            if d > self.density[best] {
                best = i;
            }
        }
        self.grid[best]
    }
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len().max(1) as f64
}

/// Sample standard deviation (`n − 1` denominator); 0 for fewer than two samples.
pub fn std_dev(samples: &[f64]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let m = mean(samples);
    (samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (samples.len() - 1) as f64).sqrt()
}

pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let sigma = std_dev(samples);
    if sigma > 0.0 {
        1.06 * sigma * (samples.len() as f64).powf(-0.2)
    } else {
        // degenerate population: a narrow kernel relative to the value itself
        1e-3 * mean(samples).abs().max(1.0)
    }
}

/// Gaussian KDE on `points` evenly spaced values over `[min − 4h, max + 4h]`.
/// The grid is refined if needed so its spacing never exceeds `h / 4`.
pub fn kde(samples: &[f64], bandwidth: Bandwidth, points: usize) -> Result<DensityEstimate> {
    if samples.len() < 2 {
        return Err(JndError::Input(format!("KDE needs at least 2 samples, got {}", samples.len())));
    }
    if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
        return Err(JndError::Input(format!("KDE sample {bad} is not finite")));
    }
    let h = match bandwidth {
        Bandwidth::Silverman => silverman_bandwidth(samples),
        Bandwidth::Fixed(h) if h.is_finite() && h > 0.0 => h,
        Bandwidth::Fixed(h) => return Err(JndError::Config(format!("KDE bandwidth must be positive, got {h}"))),
    };
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - KDE_TAIL_BANDWIDTHS * h;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + KDE_TAIL_BANDWIDTHS * h;
    let needed = ((hi - lo) / (h / 4.0)).ceil() as usize + 1;
    let n = points.max(needed).max(2);
    let step = (hi - lo) / (n - 1) as f64;
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    let density = grid
        .iter()
        .map(|&x| norm * samples.iter().map(|s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    Ok(DensityEstimate { grid, density, bandwidth: h })
}

/// Original / adversarial pair of one successful attack.
#[derive(Clone, Debug)]
pub struct AdversarialPair<'a, T> {
    pub image_id: String,
    pub original: &'a Tensor<T>,
    pub adversarial: &'a Tensor<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: String,
    pub image_ids: Vec<String>,
    pub kl_samples: Vec<f64>,
    pub l2_samples: Vec<f64>,
    pub kl_mean: f64,
    pub kl_std: f64,
    pub l2_mean: f64,
    pub l2_std: f64,
    /// Absent when the population is too small or degenerate for a KDE.
    pub kl_kde: Option<DensityEstimate>,
    pub l2_kde: Option<DensityEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub histogram_convention: String,
    pub kl_smoothing: f64,
    pub bandwidth: Bandwidth,
    pub methods: Vec<MethodStats>,
    /// Method with the smallest mean L2.
    pub closest_method: String,
}

/// KL and L2 samples of one method, keyed by image id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodSamples {
    pub image_ids: Vec<String>,
    pub kl: Vec<f64>,
    pub l2: Vec<f64>,
}

impl MethodSamples {
    pub fn push(&mut self, image_id: impl Into<String>, kl: f64, l2: f64) {
        self.image_ids.push(image_id.into());
        self.kl.push(kl);
        self.l2.push(l2);
    }
}

/// KL divergence of the color histograms and L2 distance of one pair.
pub fn pair_samples<T: Scalar>(original: &Tensor<T>, adversarial: &Tensor<T>) -> Result<(f64, f64)> {
    let kl = kl_divergence(&color_histogram(original)?, &color_histogram(adversarial)?)?;
    Ok((kl, original.sub(adversarial)?.norm_l2().as_f64()))
}

/// Per-method KL and L2 populations with their KDEs. Output is sorted by method
/// name and, within a method, by image id, so input order does not matter.
pub fn population_compare<T: Scalar>(
    populations: &BTreeMap<String, Vec<AdversarialPair<'_, T>>>,
    bandwidth: Bandwidth,
    points: usize,
) -> Result<StatsReport> {
    let mut samples = BTreeMap::new();
    for (name, pairs) in populations {
        let mut s = MethodSamples::default();
        for pair in pairs {
            let (kl, l2) = pair_samples(pair.original, pair.adversarial)?;
            s.push(pair.image_id.clone(), kl, l2);
        }
        samples.insert(name.clone(), s);
    }
    compare_samples(&samples, bandwidth, points)
}

/// [`population_compare`] on precomputed samples.
pub fn compare_samples(
    populations: &BTreeMap<String, MethodSamples>,
    bandwidth: Bandwidth,
    points: usize,
) -> Result<StatsReport> {
    if populations.is_empty() {
        return Err(JndError::Input("no methods to compare".into()));
    }
    let mut methods = Vec::with_capacity(populations.len());
    for (name, s) in populations {
        if s.image_ids.is_empty() {
            return Err(JndError::Input(format!("method `{name}` has no successful attacks")));
        }
        if s.kl.len() != s.image_ids.len() || s.l2.len() != s.image_ids.len() {
            return Err(JndError::Dimension(format!("method `{name}` has ragged sample lists")));
        }
        let mut rows: Vec<(String, f64, f64)> =
            (0..s.image_ids.len()).map(|i| (s.image_ids[i].clone(), s.kl[i], s.l2[i])).collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        let kl_samples: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let l2_samples: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let density = |s: &[f64]| if s.len() >= 2 { kde(s, bandwidth, points).ok() } else { None };
        methods.push(MethodStats {
            method: name.clone(),
            image_ids: rows.into_iter().map(|r| r.0).collect(),
            kl_mean: mean(&kl_samples),
            kl_std: std_dev(&kl_samples),
            l2_mean: mean(&l2_samples),
            l2_std: std_dev(&l2_samples),
            kl_kde: density(&kl_samples),
            l2_kde: density(&l2_samples),
            kl_samples,
            l2_samples,
        });
    }
    let closest_method = methods
        .iter()
        .min_by(|a, b| a.l2_mean.total_cmp(&b.l2_mean))
        .map(|m| m.method.clone())
        .expect("at least one method");
    Ok(StatsReport {
        histogram_convention: "per-channel 256-bin histograms, KL summed over channels".into(),
        kl_smoothing: KL_SMOOTHING,
        bandwidth,
        methods,
        closest_method,
    })
}
