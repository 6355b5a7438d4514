//! Piecewise-constant input/output masks and the input encoding.
//!
//! A data instance `s` is turned into one masking period of drive values
//! `z_k = wrap(m0[k] + M[k,:] . s)`, one per masking step.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Magic number at the start of a binary mask file ("MASK").
pub const MASK_MAGIC: u64 = 0x4D41_534B;

/// Maps a phase into `[-pi/2, pi/2]` by adding or subtracting multiples of
/// pi. Rounding is half-to-even, so the result stays in the closed interval.
#[inline]
pub fn wrap(z: f64) -> f64 {
    z - PI * (z / PI).round_ties_even()
}

/// Trainable mask parameters.
///
/// `m` is `N_m x N_in` and `u` is `N_out x N_m`, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    n_mask: usize,
    n_in: usize,
    n_out: usize,
    pub m0: Vec<f64>,
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub y0: Vec<f64>,
}

impl MaskSet {
    pub fn zeros(n_mask: usize, n_in: usize, n_out: usize) -> Self {
        MaskSet {
            n_mask,
            n_in,
            n_out,
            m0: vec![0.0; n_mask],
            m: vec![0.0; n_mask * n_in],
            u: vec![0.0; n_out * n_mask],
            y0: vec![0.0; n_out],
        }
    }

    /// Assembles a mask set from its parts, checking shapes and finiteness.
    pub fn from_parts(
        n_mask: usize,
        n_in: usize,
        n_out: usize,
        m0: Vec<f64>,
        m: Vec<f64>,
        u: Vec<f64>,
        y0: Vec<f64>,
    ) -> Result<Self> {
        let masks = MaskSet {
            n_mask,
            n_in,
            n_out,
            m0,
            m,
            u,
            y0,
        };
        masks.check()?;
        Ok(masks)
    }

    /// Input masks i.i.d. uniform on `[-scale, scale]`, output zero.
    pub fn uniform<R: Rng + ?Sized>(
        n_mask: usize,
        n_in: usize,
        n_out: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut masks = MaskSet::zeros(n_mask, n_in, n_out);
        if scale > 0.0 {
            for v in masks.m0.iter_mut().chain(masks.m.iter_mut()) {
                *v = rng.gen_range(-scale..=scale);
            }
        }
        masks
    }

    pub fn n_mask(&self) -> usize {
        self.n_mask
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn input_row(&self, k: usize) -> &[f64] {
        &self.m[k * self.n_in..(k + 1) * self.n_in]
    }

    pub fn output_row(&self, o: usize) -> &[f64] {
        &self.u[o * self.n_mask..(o + 1) * self.n_mask]
    }

    /// Verifies shape consistency and that all entries are finite.
    pub fn check(&self) -> Result<()> {
        let expect = [
            ("m0", self.m0.len(), self.n_mask),
            ("M", self.m.len(), self.n_mask * self.n_in),
            ("U", self.u.len(), self.n_out * self.n_mask),
            ("y0", self.y0.len(), self.n_out),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Shape(format!("{name} has {got} entries, expected {want}")));
            }
        }
        if self.n_mask == 0 {
            return Err(Error::Shape("mask set has no masking steps".into()));
        }
        if !self.params().all(f64::is_finite) {
            return Err(Error::Shape("mask set contains non-finite entries".into()));
        }
        Ok(())
    }

    /// All parameters in storage order: m0, M, U, y0.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.m0
            .iter()
            .chain(&self.m)
            .chain(&self.u)
            .chain(&self.y0)
            .copied()
    }

    pub fn num_params(&self) -> usize {
        self.m0.len() + self.m.len() + self.u.len() + self.y0.len()
    }

    /// Mutable access to parameter `index` in the storage order of [`params`](Self::params).
    pub fn param_mut(&mut self, index: usize) -> &mut f64 {
        let mut i = index;
        for block in [&mut self.m0, &mut self.m, &mut self.u, &mut self.y0] {
            if i < block.len() {
                return &mut block[i];
            }
            i -= block.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// Pre-wrap drive value for one masking step.
    #[inline]
    pub fn pre_wrap(&self, s: &[f64], k: usize) -> f64 {
        self.m0[k] + dot(self.input_row(k), s)
    }

    /// Drive phase at masking step `k` for instance `s`.
    pub fn encode(&self, s: &[f64], k: usize) -> Result<f64> {
        if s.len() != self.n_in {
            return Err(Error::Shape(format!(
                "instance has {} inputs, mask expects {}",
                s.len(),
                self.n_in
            )));
        }
        if k >= self.n_mask {
            return Err(Error::Shape(format!(
                "masking step {k} out of range 0..{}",
                self.n_mask
            )));
        }
        Ok(wrap(self.pre_wrap(s, k)))
    }

    /// Drive values for a full masking period.
    pub fn encode_period(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.n_in {
            return Err(Error::Shape(format!(
                "instance has {} inputs, mask expects {}",
                s.len(),
                self.n_in
            )));
        }
        Ok((0..self.n_mask).map(|k| wrap(self.pre_wrap(s, k))).collect())
    }

    /// Applies a permutation to the masking steps: row `k` of the result is
    /// row `perm[k]` of `self`. Output weights are left untouched.
    pub fn permuted(&self, perm: &[usize]) -> Result<MaskSet> {
        check_permutation(perm, self.n_mask)?;
        let mut out = self.clone();
        for (k, &src) in perm.iter().enumerate() {
            out.m0[k] = self.m0[src];
            out.m[k * self.n_in..(k + 1) * self.n_in].copy_from_slice(self.input_row(src));
        }
        Ok(out)
    }

    /// SHA-256 over the binary serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        hex_digest(&self.to_bytes())
    }

    /// SHA-256 over the input side only (m0 and M).
    pub fn input_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.m0.iter().chain(&self.m) {
            hasher.update(v.to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Binary container: little-endian `u64` header
    /// `{magic, N_m, N_in, N_out}` followed by m0, M, U, y0 as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.num_params());
        for h in [MASK_MAGIC, self.n_mask as u64, self.n_in as u64, self.n_out as u64] {
            out.extend_from_slice(&h.to_le_bytes());
        }
        for v in self.params() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < 32 {
            return Err(Error::format(origin, "mask file shorter than header"));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        if word(0) != MASK_MAGIC {
            return Err(Error::format(
                origin,
                format!("bad magic 0x{:08X}, expected 0x{MASK_MAGIC:08X}", word(0)),
            ));
        }
        let (n_mask, n_in, n_out) = (word(1) as usize, word(2) as usize, word(3) as usize);
        let count = n_mask + n_mask * n_in + n_out * n_mask + n_out;
        let expected = 32 + 8 * count;
        if bytes.len() != expected {
            return Err(Error::format(
                origin,
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let mut values = bytes[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<_>>();
        let m0 = take(n_mask);
        let m = take(n_mask * n_in);
        let u = take(n_out * n_mask);
        let y0 = take(n_out);
        MaskSet::from_parts(n_mask, n_in, n_out, m0, m, u, y0)
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
        MaskSet::from_bytes(&bytes, path)
    }

    /// CSV export for inspection: one masking step per line,
    /// `step,m0,M[k,0..N_in],U[0..N_out,k]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["step".to_string(), "m0".to_string()];
        header.extend((0..self.n_in).map(|i| format!("m_{i}")));
        header.extend((0..self.n_out).map(|o| format!("u_{o}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.n_mask {
            let mut row = vec![k.to_string(), self.m0[k].to_string()];
            row.extend(self.input_row(k).iter().map(f64::to_string));
            row.extend((0..self.n_out).map(|o| self.u[o * self.n_mask + k].to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Drive phases for a whole run, one value per masking step.
#[derive(Clone, Debug, PartialEq)]
pub struct DriveSequence {
    n_mask: usize,
    /// Wrapped drive phases, length `periods * N_m`.
    pub z: Vec<f64>,
    /// Data instance driving each period.
    pub instance: Vec<usize>,
}

impl DriveSequence {
    pub fn new(n_mask: usize, z: Vec<f64>, instance: Vec<usize>) -> Result<Self> {
        if n_mask == 0 || z.len() % n_mask != 0 {
            return Err(Error::Shape(format!(
                "drive length {} is not a multiple of N_m = {n_mask}",
                z.len()
            )));
        }
        if instance.len() != z.len() / n_mask {
            return Err(Error::Shape(format!(
                "{} instance labels for {} periods",
                instance.len(),
                z.len() / n_mask
            )));
        }
        Ok(DriveSequence { n_mask, z, instance })
    }

    /// Drive built from raw phases, e.g. for validation runs. Values are used
    /// as given.
    pub fn from_phases(n_mask: usize, z: Vec<f64>) -> Result<Self> {
        let periods = if n_mask == 0 { 0 } else { z.len() / n_mask };
        DriveSequence::new(n_mask, z, (0..periods).collect())
    }

    /// The same instance presented for `repeats` consecutive periods.
    pub fn repeated(masks: &MaskSet, s: &[f64], repeats: usize) -> Result<Self> {
        let one = masks.encode_period(s)?;
        let mut z = Vec::with_capacity(one.len() * repeats);
        for _ in 0..repeats {
            z.extend_from_slice(&one);
        }
        DriveSequence::new(masks.n_mask(), z, vec![0; repeats])
    }

    /// One period per frame; `frames` is row-major `L x N_in`.
    pub fn streaming(masks: &MaskSet, frames: &[f64]) -> Result<Self> {
        let n_in = masks.n_in();
        if n_in == 0 || frames.len() % n_in != 0 {
            return Err(Error::Shape(format!(
                "frame buffer of {} values is not a multiple of N_in = {n_in}",
                frames.len()
            )));
        }
        let mut z = Vec::with_capacity(frames.len() / n_in * masks.n_mask());
        for frame in frames.chunks_exact(n_in) {
            z.extend(masks.encode_period(frame)?);
        }
        let periods = frames.len() / n_in;
        DriveSequence::new(masks.n_mask(), z, (0..periods).collect())
    }

    pub fn n_mask(&self) -> usize {
        self.n_mask
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn periods(&self) -> usize {
        self.z.len() / self.n_mask
    }

    /// Data instance driving step `j`.
    pub fn instance_of_step(&self, j: usize) -> usize {
        self.instance[j / self.n_mask]
    }
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Shape(format!(
            "permutation has {} entries, expected {n}",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Shape(format!("not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

/// Uniformly random permutation of `0..n`, reproducible from `seed`.
pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

/// Time-shuffled control: the masking steps of `masks` in a random order.
pub fn shuffle_mask(masks: &MaskSet, seed: u64) -> MaskSet {
    masks
        .permuted(&seeded_permutation(masks.n_mask(), seed))
        .expect("seeded permutation is valid")
}

/// Reservoir-style control: input masks i.i.d. uniform on `[-scale, scale]`.
pub fn random_mask(n_mask: usize, n_in: usize, n_out: usize, scale: f64, seed: u64) -> Result<MaskSet> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidParams(format!("mask scale must be positive, got {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(MaskSet::uniform(n_mask, n_in, n_out, scale, &mut rng))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
