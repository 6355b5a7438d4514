//! Datasets: MNIST IDX files, labeled frame sequences, and a synthetic
//! 39-channel frame-classification task.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bptt::Example;
use crate::error::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
/// "SEQS"
pub const SEQ_MAGIC: u32 = 0x5345_5153;

/// Read access shared by image and sequence datasets.
pub trait LabeledData: Sync {
    fn n_in(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn len(&self) -> usize;
    fn example(&self, index: usize) -> Example<'_>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Side length when examples are square images (enables pixel-shift
    /// augmentation).
    fn image_side(&self) -> Option<usize> {
        None
    }
}

/// Grayscale images with pixels scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub rows: usize,
    pub cols: usize,
    /// `N x rows*cols`, row-major.
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub split: String,
}

impl ImageDataset {
    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i * self.pixels()..(i + 1) * self.pixels()]
    }

    /// The examples with indices in `range`, relabeled with `split`.
    pub fn slice(&self, range: std::ops::Range<usize>, split: &str) -> ImageDataset {
        let px = self.pixels();
        ImageDataset {
            rows: self.rows,
            cols: self.cols,
            images: self.images[range.start * px..range.end * px].to_vec(),
            labels: self.labels[range].to_vec(),
            n_classes: self.n_classes,
            split: split.to_string(),
        }
    }

    /// First `n` examples (or all, if fewer).
    pub fn take(&self, n: usize) -> ImageDataset {
        self.slice(0..n.min(self.len()), &self.split)
    }
}

impl LabeledData for ImageDataset {
    fn n_in(&self) -> usize {
        self.pixels()
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn example(&self, index: usize) -> Example<'_> {
        Example {
            inputs: self.image(index),
            labels: &self.labels[index..index + 1],
        }
    }

    fn image_side(&self) -> Option<usize> {
        (self.rows == self.cols).then_some(self.rows)
    }
}

/// File contents, decompressed when they carry the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Parses an IDX image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    if bytes.len() < 16 {
        return Err(Error::format(path, format!("expected at least 16 header bytes, found {}", bytes.len())));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::format(path, format!("bad image magic 0x{magic:08X}")));
    }
    let (n, rows, cols) = (be_u32(bytes, 4) as usize, be_u32(bytes, 8) as usize, be_u32(bytes, 12) as usize);
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::format(path, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    if bytes.len() < 8 {
        return Err(Error::format(path, format!("expected at least 8 header bytes, found {}", bytes.len())));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::format(path, format!("bad label magic 0x{magic:08X}")));
    }
    let n = be_u32(bytes, 4) as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(Error::format(path, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    Ok(bytes[8..].to_vec())
}

/// Loads an image/label IDX pair (optionally gzip-compressed). Pixels are
/// scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<ImageDataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path)?, labels_path)?;
    if labels.len() != n {
        return Err(Error::format(
            labels_path,
            format!("{} labels for {n} images", labels.len()),
        ));
    }
    let n_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(10);
    Ok(ImageDataset {
        rows,
        cols,
        images: pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        labels: labels.into_iter().map(usize::from).collect(),
        n_classes,
        split: images_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
    })
}

/// Serializes raw IDX image bytes.
pub fn idx_image_bytes(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

/// Serializes raw IDX label bytes.
pub fn idx_label_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Locates an MNIST split in `dir`, accepting plain or `.gz` files.
/// `split` is `"train"` or `"t10k"`.
pub fn load_mnist_split(dir: &Path, split: &str) -> Result<ImageDataset> {
    let find = |kind: &str| -> Result<std::path::PathBuf> {
        let base = format!("{split}-{kind}");
        for name in [base.clone(), format!("{base}.gz")] {
            let p = dir.join(&name);
            if p.exists() {
                return Ok(p);
            }
        }
        Err(Error::MissingArtifact(format!("{base}[.gz] not found in {}", dir.display())))
    };
    let mut data = load_idx(&find("images-idx3-ubyte")?, &find("labels-idx1-ubyte")?)?;
    data.split = split.to_string();
    Ok(data)
}

/// One labeled sequence: `L x N_in` frames (row-major) and `L` labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub frames: Vec<f64>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    pub sequences: Vec<Sequence>,
    pub n_in: usize,
    pub n_classes: usize,
}

impl SequenceDataset {
    pub fn new(sequences: Vec<Sequence>, n_in: usize, n_classes: usize) -> Result<Self> {
        for (i, s) in sequences.iter().enumerate() {
            if s.frames.len() != s.labels.len() * n_in {
                return Err(Error::Shape(format!(
                    "sequence {i}: {} frame values for {} labels",
                    s.frames.len(),
                    s.labels.len()
                )));
            }
            if s.labels.iter().any(|&l| l >= n_classes) || !s.frames.iter().all(|v| v.is_finite()) {
                return Err(Error::Shape(format!("sequence {i} has invalid labels or values")));
            }
        }
        Ok(SequenceDataset {
            sequences,
            n_in,
            n_classes,
        })
    }

    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.labels.len()).sum()
    }

    /// Splits off the last `n` sequences.
    pub fn split_tail(mut self, n: usize) -> (SequenceDataset, SequenceDataset) {
        let at = self.sequences.len().saturating_sub(n);
        let tail = self.sequences.split_off(at);
        let (n_in, n_classes) = (self.n_in, self.n_classes);
        (
            self,
            SequenceDataset {
                sequences: tail,
                n_in,
                n_classes,
            },
        )
    }

    /// Little-endian: `u32 magic, u64 count, u64 N_in, u64 n_classes`, then
    /// per sequence `u64 L`, `L * N_in` `f64` frames and `L` `u32` labels.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&SEQ_MAGIC.to_le_bytes());
        for v in [self.sequences.len(), self.n_in, self.n_classes] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for s in &self.sequences {
            out.extend_from_slice(&(s.labels.len() as u64).to_le_bytes());
            for v in &s.frames {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for &l in &s.labels {
                out.extend_from_slice(&(l as u32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut cursor = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(Error::format(path, "truncated sequence file"));
            }
            let (head, rest) = cursor.split_at(n);
            cursor = rest;
            Ok(head)
        };
        let magic = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if magic != SEQ_MAGIC {
            return Err(Error::format(path, format!("bad sequence magic 0x{magic:08X}")));
        }
        let mut word = || -> Result<usize> { Ok(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize) };
        let (count, n_in, n_classes) = (word()?, word()?, word()?);
        let mut sequences = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let frames = take(len * n_in * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let labels = take(len * 4)?
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
                .collect();
            sequences.push(Sequence { frames, labels });
        }
        if !cursor.is_empty() {
            return Err(Error::format(path, format!("{} trailing bytes", cursor.len())));
        }
        SequenceDataset::new(sequences, n_in, n_classes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        SequenceDataset::from_bytes(&bytes, path)
    }
}

impl LabeledData for SequenceDataset {
    fn n_in(&self) -> usize {
        self.n_in
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn len(&self) -> usize {
        self.sequences.len()
    }

    fn example(&self, index: usize) -> Example<'_> {
        let s = &self.sequences[index];
        Example {
            inputs: &s.frames,
            labels: &s.labels,
        }
    }
}

/// Generator settings for the synthetic frame-classification task.
///
/// A sticky Markov chain picks the class of each frame. Each class owns a
/// fixed prototype vector over `base_channels`; the observed static features
/// follow the prototypes through a first-order low-pass (`lag`), so a frame
/// still carries traces of earlier classes. Each class segment also carries
/// a random sign on a second, class-specific direction, which makes the
/// class-conditional distribution non-Gaussian. Noise (optionally AR(1)) is
/// added on top. Defaults keep single frames weak and segments long, so
/// accumulating evidence over time pays off. With `deltas`, first and second temporal differences are
/// appended, giving `3 * base_channels` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_sequences: usize,
    pub length: usize,
    pub base_channels: usize,
    pub n_classes: usize,
    /// Probability that the class persists to the next frame.
    pub stay: f64,
    /// Low-pass coefficient of the observed prototype track.
    pub lag: f64,
    /// Amplitude of the class mean direction.
    pub mean_gain: f64,
    /// Amplitude of the sign-flipped direction.
    pub sign_gain: f64,
    pub noise_sigma: f64,
    /// AR(1) coefficient of the noise.
    pub noise_memory: f64,
    pub deltas: bool,
    /// Seed for class prototypes (shared between train and test sets).
    pub prototype_seed: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sequences: 100,
            length: 50,
            base_channels: 13,
            n_classes: 8,
            stay: 0.95,
            lag: 0.5,
            mean_gain: 0.3,
            sign_gain: 0.5,
            noise_sigma: 1.0,
            noise_memory: 0.0,
            deltas: true,
            prototype_seed: 39,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn n_in(&self) -> usize {
        if self.deltas {
            3 * self.base_channels
        } else {
            self.base_channels
        }
    }
}

/// Generates the synthetic sequence task.
pub fn synth_timitlike(cfg: &SynthConfig) -> Result<SequenceDataset> {
    if cfg.n_sequences == 0 || cfg.length == 0 || cfg.base_channels == 0 || cfg.n_classes == 0 {
        return Err(Error::InvalidParams("synthetic task sizes must be positive".into()));
    }
    let base = cfg.base_channels;
    let mut proto_rng = ChaCha8Rng::seed_from_u64(cfg.prototype_seed);
    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..base).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x * (base as f64).sqrt() / norm).collect()
    };
    let means: Vec<Vec<f64>> = (0..cfg.n_classes).map(|_| unit(&mut proto_rng)).collect();
    let signs: Vec<Vec<f64>> = (0..cfg.n_classes).map(|_| unit(&mut proto_rng)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let innovation = (1.0 - cfg.noise_memory * cfg.noise_memory).max(0.0).sqrt();
    let mut sequences = Vec::with_capacity(cfg.n_sequences);
    for _ in 0..cfg.n_sequences {
        let mut class = rng.gen_range(0..cfg.n_classes);
        let mut sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let mut track = vec![0.0; base];
        let mut noise: Vec<f64> = (0..base).map(|_| cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut statics = Vec::with_capacity(cfg.length * base);
        let mut labels = Vec::with_capacity(cfg.length);
        for t in 0..cfg.length {
            if t > 0 && cfg.n_classes > 1 && rng.gen::<f64>() >= cfg.stay {
                let next = rng.gen_range(0..cfg.n_classes - 1);
                class = if next >= class { next + 1 } else { next };
                sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            }
            labels.push(class);
            for c in 0..base {
                let target = cfg.mean_gain * means[class][c] + cfg.sign_gain * sign * signs[class][c];
                track[c] = if t == 0 { target } else { cfg.lag * track[c] + (1.0 - cfg.lag) * target };
                let xi: f64 = rng.sample(StandardNormal);
                noise[c] = cfg.noise_memory * noise[c] + innovation * cfg.noise_sigma * xi;
                statics.push(track[c] + noise[c]);
            }
        }
        let frames = if cfg.deltas {
            let mut out = Vec::with_capacity(cfg.length * 3 * base);
            let at = |t: usize, c: usize| statics[t * base + c];
            for t in 0..cfg.length {
                for c in 0..base {
                    out.push(at(t, c));
                }
                for c in 0..base {
                    out.push(if t >= 1 { at(t, c) - at(t - 1, c) } else { 0.0 });
                }
                for c in 0..base {
                    out.push(if t >= 2 { at(t, c) - 2.0 * at(t - 1, c) + at(t - 2, c) } else { 0.0 });
                }
            }
            out
        } else {
            statics
        };
        sequences.push(Sequence { frames, labels });
    }
    SequenceDataset::new(sequences, cfg.n_in(), cfg.n_classes)
}

/// Uniform sampling with replacement.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(seed: u64) -> Self {
        BatchSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self, population: usize, batch_size: usize) -> Result<Vec<usize>> {
        if population == 0 {
            return Err(Error::Shape("cannot sample from an empty dataset".into()));
        }
        if batch_size > population {
            return Err(Error::Shape(format!(
                "batch of {batch_size} exceeds dataset of {population}"
            )));
        }
        Ok((0..batch_size).map(|_| self.rng.gen_range(0..population)).collect())
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(n: usize) -> (Vec<u8>, Vec<u8>) {
        let pixels: Vec<u8> = (0..n * 784).map(|i| (i * 7 % 256) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        (idx_image_bytes(28, 28, &pixels), idx_label_bytes(&labels))
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture(5);
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        std::fs::write(&ip, &img).unwrap();
        std::fs::write(&lp, &lab).unwrap();
        let data = load_idx(&ip, &lp).unwrap();
        assert_eq!(data.len(), 5);
        assert_eq!(data.labels, vec![0, 1, 2, 3, 4]);
        let bytes: Vec<u8> = data.images.iter().map(|&p| (p * 255.0).round() as u8).collect();
        assert_eq!(idx_image_bytes(28, 28, &bytes), img);
    }

    #[test]
    fn zero_images_parse() {
        let pixels = vec![0u8; 3 * 784];
        let data = parse_idx_images(&idx_image_bytes(28, 28, &pixels), Path::new("x")).unwrap();
        assert_eq!(data.0, 3);
        assert!(data.3.iter().all(|&p| p == 0));
    }

    #[test]
    fn truncated_file_reports_sizes() {
        let (img, _) = fixture(2);
        let err = parse_idx_images(&img[..img.len() - 10], Path::new("x")).unwrap_err().to_string();
        assert!(err.contains(&format!("expected {} bytes, found {}", img.len(), img.len() - 10)), "{err}");
    }

    #[test]
    fn magic_and_count_mismatch() {
        let (img, lab) = fixture(2);
        assert!(parse_idx_labels(&img, Path::new("x")).is_err());
        assert!(parse_idx_images(&lab, Path::new("x")).is_err());
        let dir = tempfile::tempdir().unwrap();
        let (_, lab3) = fixture(3);
        std::fs::write(dir.path().join("i"), &img).unwrap();
        std::fs::write(dir.path().join("l"), &lab3).unwrap();
        assert!(load_idx(&dir.path().join("i"), &dir.path().join("l")).is_err());
    }

    #[test]
    fn gzip_files_are_transparent() {
        use flate2::{write::GzEncoder, Compression};
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture(4);
        for (name, bytes) in [("train-images-idx3-ubyte.gz", &img), ("train-labels-idx1-ubyte.gz", &lab)] {
            let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
            enc.write_all(bytes).unwrap();
            std::fs::write(dir.path().join(name), enc.finish().unwrap()).unwrap();
        }
        let data = load_mnist_split(dir.path(), "train").unwrap();
        assert_eq!(data.len(), 4);
        assert!(load_mnist_split(dir.path(), "t10k").is_err());
    }

    #[test]
    fn single_class_labels_constant() {
        let cfg = SynthConfig {
            n_classes: 1,
            n_sequences: 3,
            ..SynthConfig::default()
        };
        let data = synth_timitlike(&cfg).unwrap();
        assert!(data.sequences.iter().all(|s| s.labels.iter().all(|&l| l == 0)));
        assert_eq!(data.n_in, 39);
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_timitlike(&cfg).unwrap(), synth_timitlike(&cfg).unwrap());
        let other = SynthConfig { seed: 2, ..cfg.clone() };
        assert_ne!(synth_timitlike(&cfg).unwrap(), synth_timitlike(&other).unwrap());
    }

    #[test]
    fn sequence_file_round_trip() {
        let data = synth_timitlike(&SynthConfig { n_sequences: 4, length: 7, ..SynthConfig::default() }).unwrap();
        let bytes = data.to_bytes();
        assert_eq!(SequenceDataset::from_bytes(&bytes, Path::new("x")).unwrap(), data);
        assert!(SequenceDataset::from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
    }

    #[test]
    fn sampler_semantics() {
        let mut a = BatchSampler::new(4);
        let mut b = BatchSampler::new(4);
        for _ in 0..10 {
            assert_eq!(a.sample(50, 20).unwrap(), b.sample(50, 20).unwrap());
        }
        assert!(a.sample(0, 0).is_err());
        assert!(a.sample(5, 6).is_err());
        // Sampling a full-size batch with replacement repeats items.
        let full = a.sample(30, 30).unwrap();
        let distinct: std::collections::HashSet<_> = full.iter().collect();
        assert!(distinct.len() < 30);
    }

    #[test]
    fn sampler_is_uniform() {
        // Chi-square goodness of fit over 10^5 draws from 20 bins.
        let mut s = BatchSampler::new(123);
        let bins = 20;
        let mut counts = vec![0usize; bins];
        for _ in 0..1000 {
            for i in s.sample(bins, 100.min(bins)).unwrap() {
                counts[i] += 1;
            }
        }
        let mut s2 = BatchSampler::new(321);
        for _ in 0..4000 {
            for i in s2.sample(bins, 20).unwrap() {
                counts[i] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        assert_eq!(total, 100_000);
        let expected = total as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // Critical value of chi^2 with 19 degrees of freedom at alpha = 0.01.
        assert!(chi2 < 36.191, "chi2 = {chi2}");
    }

    /// Frame features with `context - 1` preceding frames appended
    /// (zero-padded at sequence start).
    fn windowed(data: &SequenceDataset, context: usize) -> crate::train::FeatureSet {
        let n_in = data.n_in;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for s in &data.sequences {
            for (t, &label) in s.labels.iter().enumerate() {
                for lag in 0..context {
                    match t.checked_sub(lag) {
                        Some(u) => rows.extend_from_slice(&s.frames[u * n_in..(u + 1) * n_in]),
                        None => rows.extend(std::iter::repeat(0.0).take(n_in)),
                    }
                }
                labels.push(label);
            }
        }
        crate::train::FeatureSet {
            n_features: n_in * context,
            rows,
            labels,
        }
    }

    fn linear_error(train: &SequenceDataset, test: &SequenceDataset, context: usize) -> f64 {
        use crate::bptt::Encoding;
        use crate::masking::MaskSet;
        use crate::train::{evaluate_features, retrain_output, TrainSpec};
        let (tr, te) = (windowed(train, context), windowed(test, context));
        let mut model = MaskSet::zeros(tr.n_features, 0, train.n_classes);
        let spec = TrainSpec::new(Encoding::Streaming, 4000, 100, 0.05, 3);
        retrain_output(&mut model, &tr, &spec).unwrap();
        evaluate_features(&model, &te).unwrap().1
    }

    #[test]
    fn temporal_context_helps_a_linear_classifier() {
        let data = synth_timitlike(&SynthConfig {
            n_sequences: 300,
            ..SynthConfig::default()
        })
        .unwrap();
        let (train, test) = data.split_tail(60);
        let frame = linear_error(&train, &test, 1);
        let window = linear_error(&train, &test, 5);
        assert!(window < frame - 0.03, "context window {window}, single frame {frame}");
    }
}
