//! Full-reference image quality and perturbation size: PSNR, SSIM, UQI, SCC,
//! VIFP and L1/L2/L-inf distances.
//!
//! Every structural metric is computed per channel on `f64` planes and
//! averaged over channels. Windows are applied in "valid" mode (no padding).

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, JndError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Constants of every metric. Echoed into reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub max_value: f64,
    /// PSNR clamps the MSE from below at this value.
    pub mse_floor: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub uqi_window: usize,
    pub scc_window: usize,
    pub scc_kernel: [[f64; 3]; 3],
    pub vifp_scales: usize,
    pub vifp_sigma_nsq: f64,
    pub vifp_eps: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            max_value: 255.0,
            mse_floor: 1e-15,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_k1: 0.01,
            ssim_k2: 0.03,
            uqi_window: 8,
            scc_window: 8,
            scc_kernel: [[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]],
            vifp_scales: 4,
            vifp_sigma_nsq: 2.0,
            vifp_eps: 1e-10,
        }
    }
}

impl MetricConfig {
    /// PSNR of identical images.
    pub fn psnr_cap(&self) -> f64 {
        10.0 * (self.max_value * self.max_value / self.mse_floor).log10()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpDistances {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

impl LpDistances {
    /// `(mean |Δ|, rms Δ)` over the `n` scalar entries.
    pub fn per_pixel(&self, n: usize) -> (f64, f64) {
        let n = n.max(1) as f64;
        (self.l1 / n, self.l2 / n.sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub psnr: f64,
    pub ssim: f64,
    pub uqi: f64,
    pub scc: f64,
    pub vifp: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    /// L1 divided by the number of scalar entries.
    pub l1_per_pixel: f64,
    /// L2 divided by the square root of the number of scalar entries.
    pub l2_per_pixel: f64,
}

impl QualityReport {
    /// `reference` first: VIFP is directional.
    pub fn compute<T: Scalar>(reference: &Tensor<T>, distorted: &Tensor<T>, config: &MetricConfig) -> Result<Self> {
        let lp = lp_distances(reference, distorted)?;
        let (l1_per_pixel, l2_per_pixel) = lp.per_pixel(reference.len());
        Ok(Self {
            psnr: psnr_with(reference, distorted, config)?,
            ssim: ssim_with(reference, distorted, config)?,
            uqi: uqi_with(reference, distorted, config)?,
            scc: scc_with(reference, distorted, config)?,
            vifp: vifp_with(reference, distorted, config)?,
            l1: lp.l1,
            l2: lp.l2,
            linf: lp.linf,
            l1_per_pixel,
            l2_per_pixel,
        })
    }
}

#[derive(Clone, Debug)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    fn zip(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane { h: self.h, w: self.w, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    /// Separable correlation with `k ⊗ k`, valid region only.
    fn filter_valid(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let (oh, ow) = (self.h + 1 - n, self.w + 1 - n);
        let mut rows = vec![0.0; self.h * ow];
        for y in 0..self.h {
            for x in 0..ow {
                rows[y * ow + x] = (0..n).map(|i| k[i] * self.data[y * self.w + x + i]).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
            }
        }
        Plane { h: oh, w: ow, data: out }
    }

    fn downsample2(&self) -> Plane {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut data = Vec::with_capacity(h * w);
        for y in (0..self.h).step_by(2) {
            for x in (0..self.w).step_by(2) {
                data.push(self.at(y, x));
            }
        }
        Plane { h, w, data }
    }
}

fn image_dims<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    a.check_same_shape(b)?;
    match *a.shape() {
        [h, w, c] if h > 0 && w > 0 && c > 0 => Ok((h, w, c)),
        ref s => dim_err(format!("quality metrics need a non-empty [H, W, C] image, got {s:?}")),
    }
}

fn planes<T: Scalar>(img: &Tensor<T>, (h, w, c): (usize, usize, usize)) -> Vec<Plane> {
    (0..c)
        .map(|ch| Plane { h, w, data: img.data().iter().skip(ch).step_by(c).map(|v| v.as_f64()).collect() })
        .collect()
}

fn per_channel<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(&Plane, &Plane) -> f64) -> Result<f64> {
    let dims = image_dims(a, b)?;
    let (pa, pb) = (planes(a, dims), planes(b, dims));
    Ok(pa.iter().zip(&pb).map(|(x, y)| f(x, y)).sum::<f64>() / dims.2 as f64)
}

fn require_window(what: &str, dims: (usize, usize, usize), window: usize) -> Result<()> {
    if window == 0 || dims.0 < window || dims.1 < window {
        return Err(JndError::Input(format!(
            "{what} needs images of at least {window}x{window}, got {}x{}",
            dims.0, dims.1
        )));
    }
    Ok(())
}

fn gaussian_kernel(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..n).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    psnr_with(a, b, &MetricConfig::default())
}

/// `10·log10(MAX² / max(MSE, floor))` in dB.
pub fn psnr_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, config: &MetricConfig) -> Result<f64> {
    a.check_same_shape(b)?;
    if a.is_empty() {
        return dim_err("PSNR of empty images");
    }
    let sse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
    let mse = (sse / a.len() as f64).max(config.mse_floor);
    Ok(10.0 * (config.max_value * config.max_value / mse).log10())
}

pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ssim_with(a, b, &MetricConfig::default())
}

/// Mean SSIM over Gaussian-weighted windows.
pub fn ssim_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, config: &MetricConfig) -> Result<f64> {
    require_window("SSIM", image_dims(a, b)?, config.ssim_window)?;
    let k = gaussian_kernel(config.ssim_window, config.ssim_sigma);
    let c1 = (config.ssim_k1 * config.max_value).powi(2);
    let c2 = (config.ssim_k2 * config.max_value).powi(2);
    per_channel(a, b, |x, y| {
        let mx = x.filter_valid(&k);
        let my = y.filter_valid(&k);
        let xx = x.zip(x, |p, q| p * q).filter_valid(&k);
        let yy = y.zip(y, |p, q| p * q).filter_valid(&k);
        let xy = x.zip(y, |p, q| p * q).filter_valid(&k);
        let map: Vec<f64> = (0..mx.data.len())
            .map(|i| {
                let (ma, mb) = (mx.data[i], my.data[i]);
                let va = xx.data[i] - ma * ma;
                let vb = yy.data[i] - mb * mb;
                let cov = xy.data[i] - ma * mb;
                ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
            })
            .collect();
        map.iter().sum::<f64>() / map.len() as f64
    })
}

/// Window statistics `(mean_a, mean_b, var_a, var_b, cov, flat_a, flat_b)`, two-pass.
fn window_stats(a: &Plane, b: &Plane, y0: usize, x0: usize, n: usize) -> (f64, f64, f64, f64, f64, bool, bool) {
    let cnt = (n * n) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    let (mut lo_a, mut hi_a, mut lo_b, mut hi_b) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for y in y0..y0 + n {
        for x in x0..x0 + n {
            let (p, q) = (a.at(y, x), b.at(y, x));
            sa += p;
            sb += q;
            lo_a = lo_a.min(p);
            hi_a = hi_a.max(p);
            lo_b = lo_b.min(q);
            hi_b = hi_b.max(q);
        }
    }
    let (ma, mb) = (sa / cnt, sb / cnt);
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for y in y0..y0 + n {
        for x in x0..x0 + n {
            let (p, q) = (a.at(y, x) - ma, b.at(y, x) - mb);
            va += p * p;
            vb += q * q;
            cov += p * q;
        }
    }
    (ma, mb, va / cnt, vb / cnt, cov / cnt, lo_a == hi_a, lo_b == hi_b)
}

fn windowed_mean(a: &Plane, b: &Plane, n: usize, score: impl Fn(&Plane, &Plane, usize, usize) -> f64) -> f64 {
    let (oh, ow) = (a.h + 1 - n, a.w + 1 - n);
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            total += score(a, b, y, x);
        }
    }
    total / (oh * ow) as f64
}

/// Both windows flat: 1 when equal, 0 otherwise.
fn flat_pair_score(a: &Plane, b: &Plane, y0: usize, x0: usize, n: usize) -> f64 {
    let equal = (y0..y0 + n).all(|y| (x0..x0 + n).all(|x| a.at(y, x) == b.at(y, x)));
    if equal {
        1.0
    } else {
        0.0
    }
}

pub fn uqi<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    uqi_with(a, b, &MetricConfig::default())
}

/// Universal quality index `4·σab·μa·μb / ((σa² + σb²)(μa² + μb²))` over square windows.
pub fn uqi_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, config: &MetricConfig) -> Result<f64> {
    let n = config.uqi_window;
    require_window("UQI", image_dims(a, b)?, n)?;
    per_channel(a, b, |pa, pb| {
        windowed_mean(pa, pb, n, |pa, pb, y, x| {
            let (ma, mb, va, vb, cov, flat_a, flat_b) = window_stats(pa, pb, y, x, n);
            if flat_a && flat_b {
                return flat_pair_score(pa, pb, y, x, n);
            }
            let den = (va + vb) * (ma * ma + mb * mb);
            if den == 0.0 {
                0.0
            } else {
                4.0 * cov * ma * mb / den
            }
        })
    })
}

pub fn scc<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    scc_with(a, b, &MetricConfig::default())
}

fn high_pass(p: &Plane, k: &[[f64; 3]; 3]) -> Plane {
    let (h, w) = (p.h - 2, p.w - 2);
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (dy, row) in k.iter().enumerate() {
                for (dx, kv) in row.iter().enumerate() {
                    s += kv * p.at(y + dy, x + dx);
                }
            }
            data.push(s);
        }
    }
    Plane { h, w, data }
}

/// Spatial correlation coefficient: windowed correlation of Laplacian-filtered images.
pub fn scc_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, config: &MetricConfig) -> Result<f64> {
    let n = config.scc_window;
    let dims = image_dims(a, b)?;
    require_window("SCC", (dims.0.saturating_sub(2), dims.1.saturating_sub(2), dims.2), n)?;
    per_channel(a, b, |pa, pb| {
        let (ha, hb) = (high_pass(pa, &config.scc_kernel), high_pass(pb, &config.scc_kernel));
        windowed_mean(&ha, &hb, n, |pa, pb, y, x| {
            let (_, _, va, vb, cov, flat_a, flat_b) = window_stats(pa, pb, y, x, n);
            if flat_a && flat_b {
                return flat_pair_score(pa, pb, y, x, n);
            }
            let den = va.sqrt() * vb.sqrt();
            if den == 0.0 {
                0.0
            } else {
                cov / den
            }
        })
    })
}

pub fn vifp<T: Scalar>(reference: &Tensor<T>, distorted: &Tensor<T>) -> Result<f64> {
    vifp_with(reference, distorted, &MetricConfig::default())
}

/// Pixel-domain visual information fidelity. Scales whose window no longer fits
/// the (downsampled) image are skipped. A reference with no variance at any
/// scale carries no information: the score is 1 for an identical pair, else 0.
pub fn vifp_with<T: Scalar>(reference: &Tensor<T>, distorted: &Tensor<T>, config: &MetricConfig) -> Result<f64> {
    image_dims(reference, distorted)?;
    per_channel(reference, distorted, |r, d| vifp_plane(r, d, config))
}

fn vifp_plane(reference: &Plane, distorted: &Plane, config: &MetricConfig) -> f64 {
    let eps = config.vifp_eps;
    let nsq = config.vifp_sigma_nsq;
    let (mut num, mut den) = (0.0, 0.0);
    let (mut r, mut d) = (reference.clone(), distorted.clone());
    for scale in 1..=config.vifp_scales {
        let n = (1usize << (config.vifp_scales - scale + 1)) + 1;
        let k = gaussian_kernel(n, n as f64 / 5.0);
        if scale > 1 {
            if r.h < n || r.w < n {
                break;
            }
            r = r.filter_valid(&k).downsample2();
            d = d.filter_valid(&k).downsample2();
        }
        if r.h < n || r.w < n {
            continue;
        }
        let mr = r.filter_valid(&k);
        let md = d.filter_valid(&k);
        let rr = r.zip(&r, |p, q| p * q).filter_valid(&k);
        let dd = d.zip(&d, |p, q| p * q).filter_valid(&k);
        let rd = r.zip(&d, |p, q| p * q).filter_valid(&k);
        for i in 0..mr.data.len() {
            let mut s_r = (rr.data[i] - mr.data[i] * mr.data[i]).max(0.0);
            let s_d = (dd.data[i] - md.data[i] * md.data[i]).max(0.0);
            let s_rd = rd.data[i] - mr.data[i] * md.data[i];
            let mut g = s_rd / (s_r + eps);
            let mut sv = s_d - g * s_rd;
            if s_r < eps {
                g = 0.0;
                sv = s_d;
                s_r = 0.0;
            }
            if s_d < eps {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = s_d;
                g = 0.0;
            }
            if sv <= eps {
                sv = eps;
            }
            num += (1.0 + g * g * s_r / (sv + nsq)).log10();
            den += (1.0 + s_r / nsq).log10();
        }
    }
    if den == 0.0 {
        return if reference.data == distorted.data { 1.0 } else { 0.0 };
    }
    num / den
}

/// `(Σ|Δ|, sqrt(ΣΔ²), max|Δ|)` in raw pixel units.
pub fn lp_distances<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<LpDistances> {
    a.check_same_shape(b)?;
    let (mut l1, mut sq, mut linf) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = (x.as_f64() - y.as_f64()).abs();
        l1 += d;
        sq += d * d;
        linf = linf.max(d);
    }
    Ok(LpDistances { l1, l2: sq.sqrt(), linf })
}

/// Mean over a population.
pub fn mean_report(reports: &[QualityReport]) -> Option<QualityReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&QualityReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(QualityReport {
        psnr: avg(|r| r.psnr),
        ssim: avg(|r| r.ssim),
        uqi: avg(|r| r.uqi),
        scc: avg(|r| r.scc),
        vifp: avg(|r| r.vifp),
        l1: avg(|r| r.l1),
        l2: avg(|r| r.l2),
        linf: avg(|r| r.linf),
        l1_per_pixel: avg(|r| r.l1_per_pixel),
        l2_per_pixel: avg(|r| r.l2_per_pixel),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(shape: [usize; 3], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(&shape, (0..n).map(|_| rng.gen_range(0.0..255.0)).collect()).unwrap()
    }

    /// Smooth image plus bounded noise, clamped.
    fn distorted(x: &Tensor<f64>, amp: f64, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = x.data().iter().map(|v| (v + rng.gen_range(-amp..amp)).clamp(0.0, 255.0)).collect();
        Tensor::from_vec(x.shape(), data).unwrap()
    }

    fn smooth_image(shape: [usize; 3], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [h, w, c] = shape;
        let f: Vec<(f64, f64, f64)> = (0..c).map(|_| (rng.gen_range(0.1..0.5), rng.gen_range(0.1..0.5), rng.gen_range(0.0..6.0))).collect();
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for &(fy, fx, ph) in &f {
                    data.push(128.0 + 90.0 * (fy * y as f64 + ph).sin() * (fx * x as f64).cos());
                }
            }
        }
        Tensor::from_vec(&shape, data).unwrap()
    }

    // ---- independent loop references -------------------------------------------------

    fn chan(x: &Tensor<f64>, ch: usize) -> (usize, usize, Vec<f64>) {
        let s = x.shape();
        (s[0], s[1], x.data().iter().skip(ch).step_by(s[2]).copied().collect())
    }

    fn ref_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let c = a.shape()[2];
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let mut wts = [[0.0; 11]; 11];
        let mut tot = 0.0;
        for (i, row) in wts.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                tot += *v;
            }
        }
        let mut acc = 0.0;
        for ch in 0..c {
            let (h, w, pa) = chan(a, ch);
            let (_, _, pb) = chan(b, ch);
            let mut s = 0.0;
            let mut cnt = 0;
            for y in 0..=h - 11 {
                for x in 0..=w - 11 {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let wv = wts[i][j] / tot;
                            ma += wv * pa[(y + i) * w + x + j];
                            mb += wv * pb[(y + i) * w + x + j];
                        }
                    }
                    let (mut va, mut vb, mut cv) = (0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let wv = wts[i][j] / tot;
                            let (p, q) = (pa[(y + i) * w + x + j] - ma, pb[(y + i) * w + x + j] - mb);
                            va += wv * p * p;
                            vb += wv * q * q;
                            cv += wv * p * q;
                        }
                    }
                    s += ((2.0 * ma * mb + c1) * (2.0 * cv + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    cnt += 1;
                }
            }
            acc += s / cnt as f64;
        }
        acc / c as f64
    }

    /// Sum-form UQI over 8x8 windows for non-degenerate data.
    fn ref_uqi(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let c = a.shape()[2];
        let n = 8usize;
        let nn = (n * n) as f64;
        let mut acc = 0.0;
        for ch in 0..c {
            let (h, w, pa) = chan(a, ch);
            let (_, _, pb) = chan(b, ch);
            let mut s = 0.0;
            let mut cnt = 0;
            for y in 0..=h - n {
                for x in 0..=w - n {
                    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..n {
                        for j in 0..n {
                            let (p, q) = (pa[(y + i) * w + x + j], pb[(y + i) * w + x + j]);
                            sa += p;
                            sb += q;
                            saa += p * p;
                            sbb += q * q;
                            sab += p * q;
                        }
                    }
                    let num = 4.0 * (nn * sab - sa * sb) * sa * sb;
                    let den = (nn * (saa + sbb) - sa * sa - sb * sb) * (sa * sa + sb * sb);
                    s += num / den;
                    cnt += 1;
                }
            }
            acc += s / cnt as f64;
        }
        acc / c as f64
    }

    fn ref_scc(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let c = a.shape()[2];
        let lap = |p: &[f64], w: usize, y: usize, x: usize| {
            let mut s = 8.0 * p[(y + 1) * w + x + 1];
            for i in 0..3 {
                for j in 0..3 {
                    if (i, j) != (1, 1) {
                        s -= p[(y + i) * w + x + j];
                    }
                }
            }
            s
        };
        let mut acc = 0.0;
        for ch in 0..c {
            let (h, w, pa) = chan(a, ch);
            let (_, _, pb) = chan(b, ch);
            let (hh, hw) = (h - 2, w - 2);
            let ha: Vec<f64> = (0..hh * hw).map(|i| lap(&pa, w, i / hw, i % hw)).collect();
            let hb: Vec<f64> = (0..hh * hw).map(|i| lap(&pb, w, i / hw, i % hw)).collect();
            let mut s = 0.0;
            let mut cnt = 0;
            for y in 0..=hh - 8 {
                for x in 0..=hw - 8 {
                    let idx: Vec<usize> = (0..64).map(|k| (y + k / 8) * hw + x + k % 8).collect();
                    let ma = idx.iter().map(|&i| ha[i]).sum::<f64>() / 64.0;
                    let mb = idx.iter().map(|&i| hb[i]).sum::<f64>() / 64.0;
                    let cv: f64 = idx.iter().map(|&i| (ha[i] - ma) * (hb[i] - mb)).sum();
                    let va: f64 = idx.iter().map(|&i| (ha[i] - ma).powi(2)).sum();
                    let vb: f64 = idx.iter().map(|&i| (hb[i] - mb).powi(2)).sum();
                    s += cv / (va * vb).sqrt();
                    cnt += 1;
                }
            }
            acc += s / cnt as f64;
        }
        acc / c as f64
    }

    /// Direct-window VIFP (2-D kernels, no separability), non-degenerate inputs.
    fn ref_vifp(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        #[allow(clippy::needless_range_loop)]
        fn kernel(n: usize) -> Vec<Vec<f64>> {
            let sigma = n as f64 / 5.0;
            let c = (n / 2) as f64;
            let mut k = vec![vec![0.0; n]; n];
            let mut tot = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let (di, dj) = (i as f64 - c, j as f64 - c);
                    k[i][j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
                    tot += k[i][j];
                }
            }
            k.iter().map(|r| r.iter().map(|v| v / tot).collect()).collect()
        }
        fn filt(p: &[f64], h: usize, w: usize, k: &[Vec<f64>]) -> (usize, usize, Vec<f64>) {
            let n = k.len();
            let (oh, ow) = (h - n + 1, w - n + 1);
            let mut out = vec![0.0; oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    for i in 0..n {
                        for j in 0..n {
                            out[y * ow + x] += k[i][j] * p[(y + i) * w + x + j];
                        }
                    }
                }
            }
            (oh, ow, out)
        }
        let c = a.shape()[2];
        let mut acc = 0.0;
        for ch in 0..c {
            let (mut h, mut w, mut pr) = chan(a, ch);
            let (_, _, mut pd) = chan(b, ch);
            let (mut num, mut den) = (0.0, 0.0);
            for scale in 1..=4usize {
                let n = (1usize << (4 - scale + 1)) + 1;
                let k = kernel(n);
                if scale > 1 {
                    if h < n || w < n {
                        break;
                    }
                    let (fh, fw, fr) = filt(&pr, h, w, &k);
                    let (_, _, fd) = filt(&pd, h, w, &k);
                    let keep = |v: &[f64]| {
                        let mut o = Vec::new();
                        for y in (0..fh).step_by(2) {
                            for x in (0..fw).step_by(2) {
                                o.push(v[y * fw + x]);
                            }
                        }
                        o
                    };
                    pr = keep(&fr);
                    pd = keep(&fd);
                    h = fh.div_ceil(2);
                    w = fw.div_ceil(2);
                }
                if h < n || w < n {
                    continue;
                }
                let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).collect::<Vec<_>>();
                let (_, _, mr) = filt(&pr, h, w, &k);
                let (_, _, md) = filt(&pd, h, w, &k);
                let (_, _, rr) = filt(&sq(&pr, &pr), h, w, &k);
                let (_, _, dd) = filt(&sq(&pd, &pd), h, w, &k);
                let (_, _, rd) = filt(&sq(&pr, &pd), h, w, &k);
                for i in 0..mr.len() {
                    let sr = (rr[i] - mr[i] * mr[i]).max(0.0);
                    let sd = (dd[i] - md[i] * md[i]).max(0.0);
                    let srd = rd[i] - mr[i] * md[i];
                    let mut g = srd / (sr + 1e-10);
                    let mut sv = sd - g * srd;
                    if g < 0.0 {
                        g = 0.0;
                        sv = sd;
                    }
                    sv = sv.max(1e-10);
                    num += (1.0 + g * g * sr / (sv + 2.0)).log10();
                    den += (1.0 + sr / 2.0).log10();
                }
            }
            acc += num / den;
        }
        acc / c as f64
    }

    // ---- fixed points and examples ---------------------------------------------------

    #[test]
    fn self_similarity_fixed_points() {
        let cfg = MetricConfig::default();
        for seed in 0..5 {
            for x in [random_image([32, 32, 3], seed), smooth_image([24, 20, 3], seed)] {
                let r = QualityReport::compute(&x, &x, &cfg).unwrap();
                assert_eq!(r.psnr, cfg.psnr_cap());
                for v in [r.ssim, r.uqi, r.scc, r.vifp] {
                    assert!((v - 1.0).abs() < 1e-9, "{r:?}");
                }
                assert_eq!((r.l1, r.l2, r.linf), (0.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn flat_images_are_self_similar() {
        let x = Tensor::filled(&[16, 16, 3], 90.0);
        let cfg = MetricConfig::default();
        let r = QualityReport::compute(&x, &x, &cfg).unwrap();
        for v in [r.ssim, r.uqi, r.scc, r.vifp] {
            assert_eq!(v, 1.0);
        }
        let y = Tensor::filled(&[16, 16, 3], 91.0);
        assert_eq!(uqi(&x, &y).unwrap(), 0.0);
        assert_eq!(scc(&x, &y).unwrap(), 1.0, "Laplacian of two flat images is identical");
        assert_eq!(vifp(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn psnr_cap_value() {
        assert!((MetricConfig::default().psnr_cap() - 198.1308).abs() < 1e-4);
    }

    #[test]
    fn psnr_of_unit_difference() {
        let x = random_image([8, 8, 3], 1).map(|v| v.min(250.0));
        let p = psnr(&x, &x.map(|v| v + 1.0)).unwrap();
        assert!((p - 48.13).abs() < 0.01, "{p}");
    }

    #[test]
    fn psnr_matches_two_pass_reference() {
        let (a, b) = (random_image([9, 7, 3], 2), random_image([9, 7, 3], 3));
        let mut sse = 0.0;
        for (x, y) in a.data().iter().zip(b.data()) {
            sse += (x - y) * (x - y);
        }
        let expect = 10.0 * (255.0f64 * 255.0 / (sse / a.len() as f64)).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let x = Tensor::filled(&[8, 8, 3], 100.0);
        let values: Vec<f64> = [1.0, 2.0, 4.0, 8.0].iter().map(|a| psnr(&x, &x.map(|v| v + a)).unwrap()).collect();
        assert!(values.windows(2).all(|w| w[0] > w[1]), "{values:?}");
    }

    #[test]
    fn ssim_matches_loop_reference_and_is_symmetric() {
        for seed in 0..3 {
            let a = smooth_image([20, 23, 3], seed);
            let b = distorted(&a, 30.0, seed + 10);
            let s = ssim(&a, &b).unwrap();
            assert!((s - ref_ssim(&a, &b)).abs() < 1e-9);
            assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_of_inverted_image_is_low() {
        let a = smooth_image([32, 32, 3], 4);
        let inv = a.map(|v| 255.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 0.5);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = random_image([10, 30, 1], 0);
        assert!(matches!(ssim(&a, &a), Err(JndError::Input(_))));
        assert!(ssim(&a, &random_image([10, 31, 1], 0)).is_err());
    }

    #[test]
    fn uqi_scc_match_references_and_are_symmetric() {
        for seed in 0..3 {
            let a = random_image([16, 19, 3], seed);
            let b = distorted(&a, 40.0, seed + 20);
            let u = uqi(&a, &b).unwrap();
            assert!((u - ref_uqi(&a, &b)).abs() < 1e-6);
            assert!((u - uqi(&b, &a).unwrap()).abs() < 1e-12);
            let s = scc(&a, &b).unwrap();
            assert!((s - ref_scc(&a, &b)).abs() < 1e-6);
            assert!((s - scc(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn vifp_matches_reference_and_is_directional() {
        for seed in 0..3 {
            let a = smooth_image([40, 36, 2], seed);
            let b = distorted(&a, 25.0, seed + 30);
            let v = vifp(&a, &b).unwrap();
            assert!((v - ref_vifp(&a, &b)).abs() < 1e-6, "{v} vs {}", ref_vifp(&a, &b));
            assert!((v - vifp(&b, &a).unwrap()).abs() > 1e-6);
        }
    }

    #[test]
    fn lp_examples() {
        let a = Tensor::filled(&[2, 2, 3], 10.0);
        let mut b = a.clone();
        b.data_mut()[5] = 13.0;
        assert_eq!(lp_distances(&a, &b).unwrap(), LpDistances { l1: 3.0, l2: 3.0, linf: 3.0 });
        assert!(lp_distances(&a, &Tensor::zeros(&[2, 2, 2])).is_err());
    }

    #[test]
    fn lp_matches_loop_oracle() {
        let (a, b) = (random_image([5, 6, 3], 8), random_image([5, 6, 3], 9));
        let (mut l1, mut l2, mut li) = (0.0, 0.0, 0.0f64);
        for i in 0..a.len() {
            let d = (a.data()[i] - b.data()[i]).abs();
            l1 += d;
            l2 += d * d;
            li = li.max(d);
        }
        let r = lp_distances(&a, &b).unwrap();
        assert_eq!((r.l1, r.l2, r.linf), (l1, l2.sqrt(), li));
    }

    proptest! {
        #[test]
        fn lp_triangle_inequality(seed in 0u64..1000) {
            let a = random_image([4, 4, 3], seed);
            let b = random_image([4, 4, 3], seed + 1);
            let c = random_image([4, 4, 3], seed + 2);
            let ab = lp_distances(&a, &b).unwrap();
            let bc = lp_distances(&b, &c).unwrap();
            let ac = lp_distances(&a, &c).unwrap();
            prop_assert!(ac.l1 <= ab.l1 + bc.l1 + 1e-9);
            prop_assert!(ac.l2 <= ab.l2 + bc.l2 + 1e-9);
        }
    }
}
