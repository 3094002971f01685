//! Datasets and image I/O: CIFAR-10 binary batches, binary PPM/PGM, and a
//! seeded synthetic dataset of class-conditional Gaussian blobs.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{JndError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CIFAR10_CLASSES: [&str; 10] =
    ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"];
pub const CIFAR10_RECORD_BYTES: usize = 3073;
const CIFAR10_SIDE: usize = 32;
const CIFAR10_PLANE: usize = CIFAR10_SIDE * CIFAR10_SIDE;

/// Labelled images; pixels are `[0, 255]` reals in `[H, W, C]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Vec<Tensor<T>>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(JndError::Input(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_names.len()) {
            return Err(JndError::Input(format!("record {i}: label {l} has no class name")));
        }
        Ok(Self { images, labels, class_names })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// The first `n` records (or all, if fewer).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn concat(mut self, other: Self) -> Result<Self> {
        if self.class_names != other.class_names {
            return Err(JndError::Input("cannot concatenate datasets with different classes".into()));
        }
        self.images.extend(other.images);
        self.labels.extend(other.labels);
        Ok(self)
    }
}

/// Parses CIFAR-10 binary records: a label byte then R, G and B 32x32 planes.
pub fn parse_cifar10<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>> {
    if !bytes.len().is_multiple_of(CIFAR10_RECORD_BYTES) {
        return Err(JndError::Format(format!(
            "CIFAR-10 batch length {} is not a multiple of {CIFAR10_RECORD_BYTES}",
            bytes.len()
        )));
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR10_RECORD_BYTES);
    let mut labels = Vec::with_capacity(images.capacity());
    for (idx, rec) in bytes.chunks_exact(CIFAR10_RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR10_CLASSES.len() {
            return Err(JndError::Format(format!("record {idx}: label {label} is not a CIFAR-10 class")));
        }
        let planes = &rec[1..];
        let mut data = Vec::with_capacity(3 * CIFAR10_PLANE);
        for p in 0..CIFAR10_PLANE {
            for ch in 0..3 {
                data.push(T::from_u8(planes[ch * CIFAR10_PLANE + p]).expect("byte fits"));
            }
        }
        images.push(Tensor::from_vec(&[CIFAR10_SIDE, CIFAR10_SIDE, 3], data)?);
        labels.push(label);
    }
    Dataset::new(images, labels, CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect())
}

pub fn load_cifar10_batch<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    parse_cifar10(&fs::read(path)?)
}

/// Encodes 32x32x3 images back into CIFAR-10 records, rounding pixels to bytes.
pub fn cifar10_bytes<T: Scalar>(data: &Dataset<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(data.len() * CIFAR10_RECORD_BYTES);
    for (i, (img, &label)) in data.images.iter().zip(&data.labels).enumerate() {
        if img.shape() != [CIFAR10_SIDE, CIFAR10_SIDE, 3] {
            return Err(JndError::Dimension(format!("record {i}: CIFAR-10 images are 32x32x3, got {:?}", img.shape())));
        }
        if label > 255 {
            return Err(JndError::Input(format!("record {i}: label {label} does not fit a byte")));
        }
        out.push(label as u8);
        for ch in 0..3 {
            for p in 0..CIFAR10_PLANE {
                out.push(pixel_byte(img.data()[p * 3 + ch]));
            }
        }
    }
    Ok(out)
}

pub fn save_cifar10_batch<T: Scalar>(data: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, cifar10_bytes(data)?)?;
    Ok(())
}

/// Loads the first `train_count` training records and `test_count` test records
/// from a directory holding `data_batch_{1..5}.bin` and `test_batch.bin`.
pub fn load_cifar10_dir<T: Scalar>(
    dir: impl AsRef<Path>,
    train_count: usize,
    test_count: usize,
) -> Result<(Dataset<T>, Dataset<T>)> {
    let dir = dir.as_ref();
    let mut train: Option<Dataset<T>> = None;
    for b in 1..=5 {
        if train.as_ref().is_some_and(|t| t.len() >= train_count) {
            break;
        }
        let batch = load_cifar10_batch(dir.join(format!("data_batch_{b}.bin")))?;
        train = Some(match train {
            None => batch,
            Some(t) => t.concat(batch)?,
        });
    }
    let train = train.expect("at least one batch read").take(train_count);
    let test = load_cifar10_batch(dir.join("test_batch.bin"))?.take(test_count);
    Ok((train, test))
}

fn pixel_byte<T: Scalar>(v: T) -> u8 {
    v.as_f64().round().clamp(0.0, 255.0) as u8
}

/// Binary PPM (`P6`, 3 channels) or PGM (`P5`, 1 channel), maxval 255, pixels rounded to nearest.
pub fn ppm_bytes<T: Scalar>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w, c) = match *image.shape() {
        [h, w, c] => (h, w, c),
        ref s => return Err(JndError::Dimension(format!("image must be [H, W, C], got {s:?}"))),
    };
    let magic = match c {
        3 => "P6",
        1 => "P5",
        _ => return Err(JndError::Dimension(format!("PPM/PGM needs 3 or 1 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| pixel_byte(v)));
    Ok(out)
}

pub fn save_ppm<T: Scalar>(image: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ppm_bytes(image)?)?;
    Ok(())
}

pub fn parse_ppm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let fmt = |m: &str| JndError::Format(format!("PPM: {m}"));
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(fmt("missing P6/P5 magic")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(fmt("malformed header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fmt("header number out of range"))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(fmt("malformed header"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(fmt(&format!("unsupported maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(fmt("zero image extent"));
    }
    let n = w.checked_mul(h).and_then(|p| p.checked_mul(channels)).ok_or_else(|| fmt("image too large"))?;
    let body = &bytes[pos..];
    if body.len() != n {
        return Err(fmt(&format!("expected {n} pixel bytes, found {}", body.len())));
    }
    Tensor::from_vec(&[h, w, channels], body.iter().map(|&b| T::from_u8(b).expect("byte fits")).collect())
}

pub fn load_ppm<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    parse_ppm(&fs::read(path)?)
}

/// One Gaussian blob of a synthetic class pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 2],
    pub sigma: f64,
    pub color: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClass {
    pub blobs: Vec<Blob>,
    /// Per-channel mean of the noiseless class pattern.
    pub channel_means: Vec<f64>,
}

/// Knobs of the synthetic generator, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Blob colors are drawn uniformly from `±blob_amplitude` per channel.
    pub blob_amplitude: f64,
    /// Largest amplitude of each background plane wave.
    pub clutter: f64,
    pub noise_sigma: f64,
    /// Blob positions shift uniformly by up to this many pixels per image.
    pub jitter: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { blob_amplitude: 80.0, clutter: 15.0, noise_sigma: NOISE_SIGMA, jitter: 1.0 }
    }
}

/// Everything needed to regenerate a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub seed: u64,
    pub split: Split,
    pub classes: usize,
    pub per_class: usize,
    pub size: [usize; 3],
    pub config: SyntheticConfig,
    pub class_patterns: Vec<SyntheticClass>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    /// Held out for hyperparameter sweeps.
    Validation,
    Test,
}

const NOISE_SIGMA: f64 = 3.0;
const BLOBS_PER_CLASS: usize = 3;
const WAVES_PER_CHANNEL: usize = 2;
const BASE_LEVEL: (f64, f64) = (80.0, 170.0);
const MAX_WAVE_FREQUENCY: f64 = 0.3;

fn class_patterns(classes: usize, size: [usize; 3], amplitude: f64, seed: u64) -> Vec<SyntheticClass> {
    let [h, w, c] = size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = h.min(w) as f64;
    (0..classes)
        .map(|_| {
            let blobs: Vec<Blob> = (0..BLOBS_PER_CLASS)
                .map(|_| Blob {
                    center: [rng.gen_range(0.2..0.8) * h as f64, rng.gen_range(0.2..0.8) * w as f64],
                    sigma: rng.gen_range(0.1..0.2) * side,
                    color: (0..c).map(|_| rng.gen_range(-amplitude..=amplitude)).collect(),
                })
                .collect();
            let mut pattern = vec![0.0; h * w * c];
            add_blobs(&mut pattern, &blobs, size, [0.0, 0.0]);
            let channel_means =
                (0..c).map(|ch| pattern.iter().skip(ch).step_by(c).sum::<f64>() / (h * w) as f64).collect();
            SyntheticClass { blobs, channel_means }
        })
        .collect()
}

fn add_blobs(out: &mut [f64], blobs: &[Blob], [h, w, c]: [usize; 3], shift: [f64; 2]) {
    for y in 0..h {
        for x in 0..w {
            for b in blobs {
                let dy = y as f64 - b.center[0] - shift[0];
                let dx = x as f64 - b.center[1] - shift[1];
                let k = (-(dy * dy + dx * dx) / (2.0 * b.sigma * b.sigma)).exp();
                for ch in 0..c {
                    out[(y * w + x) * c + ch] += k * b.color[ch];
                }
            }
        }
    }
}

/// Per-image background: a random level per channel plus a few random plane waves.
fn background(rng: &mut ChaCha8Rng, [h, w, c]: [usize; 3], clutter: f64) -> Vec<f64> {
    let levels: Vec<f64> = (0..c).map(|_| rng.gen_range(BASE_LEVEL.0..BASE_LEVEL.1)).collect();
    let waves: Vec<[f64; 4]> = (0..c * WAVES_PER_CHANNEL)
        .map(|_| {
            [
                rng.gen_range(-MAX_WAVE_FREQUENCY..MAX_WAVE_FREQUENCY),
                rng.gen_range(-MAX_WAVE_FREQUENCY..MAX_WAVE_FREQUENCY),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..=clutter),
            ]
        })
        .collect();
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut v = levels[ch];
                for [fy, fx, phase, amp] in &waves[ch * WAVES_PER_CHANNEL..(ch + 1) * WAVES_PER_CHANNEL] {
                    v += amp * (fy * y as f64 + fx * x as f64 + phase).sin();
                }
                out.push(v);
            }
        }
    }
    out
}

/// Synthetic dataset and its manifest. Class patterns depend only on `seed`;
/// the train and test splits draw independent samples around them.
pub fn generate_synthetic_split<T: Scalar>(
    classes: usize,
    per_class: usize,
    size: [usize; 3],
    seed: u64,
    split: Split,
) -> Result<(Dataset<T>, SyntheticManifest)> {
    generate_synthetic_with(classes, per_class, size, seed, split, SyntheticConfig::default())
}

pub fn generate_synthetic_with<T: Scalar>(
    classes: usize,
    per_class: usize,
    size: [usize; 3],
    seed: u64,
    split: Split,
    config: SyntheticConfig,
) -> Result<(Dataset<T>, SyntheticManifest)> {
    if classes < 2 {
        return Err(JndError::Input(format!("synthetic data needs at least 2 classes, got {classes}")));
    }
    if size.contains(&0) {
        return Err(JndError::Input(format!("synthetic image size {size:?} has a zero extent")));
    }
    let knobs = [config.blob_amplitude, config.clutter, config.noise_sigma, config.jitter];
    if knobs.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(JndError::Config(format!("synthetic generator settings must be finite and non-negative: {config:?}")));
    }
    let patterns = class_patterns(classes, size, config.blob_amplitude, seed);
    let split_tag: u64 = match split {
        Split::Train => 0x5452_4149_4e00_0001,
        Split::Validation => 0x5641_4c49_4400_0003,
        Split::Test => 0x5445_5354_0000_0002,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ split_tag);
    let noise = Normal::new(0.0, config.noise_sigma).expect("valid sigma");
    let mut images = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (label, pattern) in patterns.iter().enumerate() {
            let mut px = background(&mut rng, size, config.clutter);
            let shift = [rng.gen_range(-config.jitter..=config.jitter), rng.gen_range(-config.jitter..=config.jitter)];
            add_blobs(&mut px, &pattern.blobs, size, shift);
            for v in px.iter_mut() {
                *v = (*v + noise.sample(&mut rng)).clamp(0.0, 255.0);
            }
            images.push(Tensor::from_vec(&size, px.into_iter().map(T::lit).collect())?);
            labels.push(label);
        }
    }
    let names = (0..classes).map(|c| format!("class{c}")).collect();
    let manifest = SyntheticManifest { seed, split, classes, per_class, size, config, class_patterns: patterns };
    Ok((Dataset::new(images, labels, names)?, manifest))
}

/// Training split of the synthetic dataset.
pub fn generate_synthetic<T: Scalar>(classes: usize, per_class: usize, size: [usize; 3], seed: u64) -> Result<Dataset<T>> {
    Ok(generate_synthetic_split(classes, per_class, size, seed, Split::Train)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_record(label: u8, fill: u8) -> Vec<u8> {
        let mut rec = vec![label];
        rec.extend(std::iter::repeat_n(fill, 3072));
        rec
    }

    #[test]
    fn single_constant_record() {
        let d: Dataset<f64> = parse_cifar10(&one_record(3, 128)).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.labels, vec![3]);
        assert_eq!(d.images[0].shape(), &[32, 32, 3]);
        assert!(d.images[0].data().iter().all(|&v| v == 128.0));
        assert_eq!(d.class_names[3], "cat");
    }

    #[test]
    fn plane_order_is_rgb() {
        let mut rec = one_record(0, 0);
        rec[1] = 10; // R plane, pixel 0
        rec[1 + 1024] = 20; // G plane, pixel 0
        rec[1 + 2048 + 33] = 30; // B plane, row 1 col 1
        let d: Dataset<f64> = parse_cifar10(&rec).unwrap();
        let img = &d.images[0];
        assert_eq!(&img.data()[0..3], &[10.0, 20.0, 0.0]);
        assert_eq!(img.data()[(32 + 1) * 3 + 2], 30.0);
    }

    #[test]
    fn truncated_batch_is_format_error() {
        let rec = one_record(3, 128);
        let err = parse_cifar10::<f64>(&rec[1..]).unwrap_err();
        assert!(matches!(err, JndError::Format(ref m) if m.contains("3073")));
    }

    #[test]
    fn bad_label_names_record() {
        let mut bytes = one_record(1, 0);
        bytes.extend(one_record(12, 0));
        let err = parse_cifar10::<f64>(&bytes).unwrap_err();
        assert!(matches!(err, JndError::Format(ref m) if m.contains("record 1")));
    }

    #[test]
    fn cifar_round_trip() {
        let mut bytes = one_record(7, 3);
        bytes.extend((0..3073).map(|i| (i % 10) as u8));
        let d: Dataset<f64> = parse_cifar10(&bytes).unwrap();
        assert_eq!(cifar10_bytes(&d).unwrap(), bytes);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        save_cifar10_batch(&d, &p).unwrap();
        assert_eq!(load_cifar10_batch::<f64>(&p).unwrap(), d);
    }

    #[test]
    fn white_pixel_ppm_bytes() {
        let img = Tensor::<f64>::filled(&[1, 1, 3], 255.0);
        let mut expected = b"P6\n1 1\n255\n".to_vec();
        expected.extend([0xFF, 0xFF, 0xFF]);
        assert_eq!(ppm_bytes(&img).unwrap(), expected);
    }

    #[test]
    fn ppm_rounds_to_nearest() {
        let img = Tensor::<f64>::from_vec(&[1, 1, 3], vec![127.6, 0.4, 254.5]).unwrap();
        let bytes = ppm_bytes(&img).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[128, 0, 255]);
    }

    #[test]
    fn ppm_round_trip_for_integer_images() {
        let data: Vec<f64> = (0..5 * 4 * 3).map(|i| ((i * 37) % 256) as f64).collect();
        let img = Tensor::from_vec(&[5, 4, 3], data).unwrap();
        let back: Tensor<f64> = parse_ppm(&ppm_bytes(&img).unwrap()).unwrap();
        assert_eq!(back, img);
        let gray = Tensor::from_vec(&[2, 3, 1], vec![0.0, 1.0, 2.0, 3.0, 254.0, 255.0]).unwrap();
        assert_eq!(parse_ppm::<f64>(&ppm_bytes(&gray).unwrap()).unwrap(), gray);
    }

    #[test]
    fn ppm_header_with_comment() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([1, 2, 3, 4, 5, 6]);
        let img: Tensor<f64> = parse_ppm(&bytes).unwrap();
        assert_eq!(img.shape(), &[1, 2, 3]);
        assert_eq!(img.data()[5], 6.0);
    }

    #[test]
    fn malformed_ppm_headers() {
        for bad in [&b"P3\n1 1\n255\n"[..], b"P6\n1\n255\n", b"P6\n1 1\n65535\n\0\0\0\0\0\0", b"P6\n1 1\n255\n\xff"] {
            assert!(matches!(parse_ppm::<f64>(bad), Err(JndError::Format(_))));
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a: Dataset<f64> = generate_synthetic(4, 5, [16, 16, 3], 9).unwrap();
        let b: Dataset<f64> = generate_synthetic(4, 5, [16, 16, 3], 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        for c in 0..4 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 5);
        }
        assert!(a.images.iter().all(|i| i.data().iter().all(|&v| (0.0..=255.0).contains(&v))));
        let other: Dataset<f64> = generate_synthetic(4, 5, [16, 16, 3], 10).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn synthetic_splits_share_patterns() {
        let (train, m1) = generate_synthetic_split::<f64>(3, 2, [8, 8, 1], 4, Split::Train).unwrap();
        let (test, m2) = generate_synthetic_split::<f64>(3, 2, [8, 8, 1], 4, Split::Test).unwrap();
        assert_eq!(m1.class_patterns, m2.class_patterns);
        assert_ne!(train.images, test.images);
        let json = serde_json::to_string(&m1).unwrap();
        assert_eq!(serde_json::from_str::<SyntheticManifest>(&json).unwrap(), m1);
    }

    #[test]
    fn synthetic_pixels_in_range_and_settings_checked() {
        let loud = SyntheticConfig { blob_amplitude: 200.0, clutter: 100.0, noise_sigma: 40.0, jitter: 2.0 };
        let (d, m) = generate_synthetic_with::<f64>(3, 4, [10, 12, 3], 1, Split::Test, loud).unwrap();
        assert!(d.images.iter().all(|x| x.data().iter().all(|&p| (0.0..=255.0).contains(&p))));
        assert_eq!(m.config, loud);
        let bad = SyntheticConfig { noise_sigma: -1.0, ..SyntheticConfig::default() };
        assert!(matches!(generate_synthetic_with::<f64>(2, 1, [8, 8, 1], 0, Split::Train, bad), Err(JndError::Config(_))));
    }

    #[test]
    fn noiseless_class_images_differ_only_by_background_level() {
        let quiet = SyntheticConfig { clutter: 0.0, noise_sigma: 0.0, jitter: 0.0, ..SyntheticConfig::default() };
        let (d, _) = generate_synthetic_with::<f64>(2, 2, [8, 8, 1], 3, Split::Train, quiet).unwrap();
        // images 0 and 2 share class 0
        let diff = d.images[0].sub(&d.images[2]).unwrap();
        let first = diff.data()[0];
        assert!(diff.data().iter().all(|v| (v - first).abs() < 1e-9 || d.images[0].data().iter().any(|&p| p == 0.0 || p == 255.0)));
    }

    #[test]
    fn synthetic_needs_two_classes() {
        assert!(generate_synthetic::<f64>(1, 5, [8, 8, 3], 0).is_err());
        assert!(generate_synthetic::<f64>(2, 0, [8, 8, 3], 0).unwrap().is_empty());
    }
}
