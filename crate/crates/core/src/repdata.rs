//! Representation matrices: loading, validation, normalization, persistence and
//! seeded synthetic generators.
//!
//! A representation is an `n x k` matrix whose rows are the feature vectors of `n`
//! shared input samples. Every distance in this crate works on *normalized*
//! representations: columns are centered and the mean squared row norm is one, so
//! the empirical covariance has unit trace.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used by [`Representation::is_normalized`].
pub const NORMALIZED_TOL: f64 = 1e-10;

const REPM_MAGIC: &[u8; 4] = b"REPM";
const REPM_VERSION: u32 = 1;
const REPM_HEADER_LEN: usize = 4 + 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepState {
    Raw,
    Normalized,
}

/// A named `n x k` feature matrix over a fixed, ordered set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    name: String,
    data: DMatrix<f64>,
    state: RepState,
}

impl Representation {
    /// Wraps raw data after checking shape and finiteness.
    pub fn new(name: impl Into<String>, data: DMatrix<f64>) -> Result<Self> {
        check_shape_and_finite(&data)?;
        Ok(Self {
            name: name.into(),
            data,
            state: RepState::Raw,
        })
    }

    /// Builds a raw representation from row vectors.
    pub fn from_rows(name: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::TooFewSamples(n));
        }
        let k = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(Error::RaggedRows {
                    row: i + 1,
                    expected: k,
                    found: r.len(),
                });
            }
        }
        let data = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
        Self::new(name, data)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn state(&self) -> RepState {
        self.state
    }

    /// Number of samples (rows).
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Feature dimension (columns).
    pub fn k(&self) -> usize {
        self.data.ncols()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn is_normalized(&self) -> bool {
        self.state == RepState::Normalized
    }

    /// Checks the normalization invariants numerically, independent of the state flag.
    pub fn satisfies_normalization(&self) -> bool {
        let n = self.n() as f64;
        let max_abs = self.data.amax();
        let mean_tol = NORMALIZED_TOL * (1.0 + max_abs);
        let centered = self
            .data
            .column_iter()
            .all(|c| (c.sum() / n).abs() <= mean_tol);
        let msn = self.data.norm_squared() / n;
        centered && (msn - 1.0).abs() <= NORMALIZED_TOL
    }

    /// Centers every column and rescales so the mean squared row norm is one.
    pub fn normalize(&self) -> Result<Self> {
        let n = self.n() as f64;
        let max_abs = self.data.amax();
        let mut data = self.data.clone();
        for mut col in data.column_iter_mut() {
            let mean = col.sum() / n;
            col.add_scalar_mut(-mean);
        }
        let rms = (data.norm_squared() / n).sqrt();
        if rms == 0.0 || rms <= 64.0 * f64::EPSILON * max_abs {
            return Err(Error::Degenerate(format!(
                "{}: all rows are identical",
                self.name
            )));
        }
        data.unscale_mut(rms);
        Ok(Self {
            name: self.name.clone(),
            data,
            state: RepState::Normalized,
        })
    }

    /// Returns the representation `x -> M x` applied row-wise (data times `M^T`),
    /// in raw state.
    pub fn map_features(&self, name: impl Into<String>, m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != self.k() {
            return Err(Error::InvalidArgument(format!(
                "map has {} columns, representation has {} features",
                m.ncols(),
                self.k()
            )));
        }
        Self::new(name, &self.data * m.transpose())
    }

    /// Keeps the given rows (in the given order), in raw state.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(Error::InvalidArgument(format!(
                "row index {bad} out of range for n = {}",
                self.n()
            )));
        }
        Self::new(self.name.clone(), self.data.select_rows(rows))
    }
}

fn check_shape_and_finite(data: &DMatrix<f64>) -> Result<()> {
    if data.nrows() < 2 {
        return Err(Error::TooFewSamples(data.nrows()));
    }
    if data.ncols() < 1 {
        return Err(Error::NoFeatures);
    }
    for j in 0..data.ncols() {
        for i in 0..data.nrows() {
            if !data[(i, j)].is_finite() {
                return Err(Error::NonFinite {
                    row: i + 1,
                    column: j + 1,
                });
            }
        }
    }
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "rep".to_string())
}

/// Reads a comma-separated numeric matrix. Row numbers in errors are 1-based line
/// numbers in the file.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Representation> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());

    let mut values = Vec::new();
    let mut k = None;
    let mut n = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(n + 1);
        let expected = *k.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRows {
                row: line,
                expected,
                found: record.len(),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::NonNumeric {
                row: line,
                column: j + 1,
                field: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: line,
                    column: j + 1,
                });
            }
            values.push(v);
        }
        n += 1;
    }
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let k = k.unwrap_or(0);
    Representation::new(file_stem(path), DMatrix::from_row_slice(n, k, &values))
}

/// Renders the data as CSV text using shortest round-trip decimal formatting.
pub fn encode_csv(rep: &Representation) -> String {
    let mut out = String::with_capacity(rep.n() * rep.k() * 20);
    for row in rep.data.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn save_csv(rep: &Representation, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_csv(rep)).map_err(|e| Error::io(path, e))
}

/// Encodes a representation in the REPM binary layout: magic, `u32` version,
/// `u64` rows, `u64` columns, then row-major little-endian `f64` values.
pub fn encode_repm(rep: &Representation) -> Vec<u8> {
    let (n, k) = rep.data.shape();
    let mut buf = Vec::with_capacity(REPM_HEADER_LEN + 8 * n * k);
    buf.extend_from_slice(REPM_MAGIC);
    buf.extend_from_slice(&REPM_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(k as u64).to_le_bytes());
    for row in rep.data.row_iter() {
        for v in row.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_repm(name: impl Into<String>, bytes: &[u8]) -> Result<Representation> {
    if bytes.len() < 4 || &bytes[..4] != REPM_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < REPM_HEADER_LEN {
        return Err(Error::InvalidArgument(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != REPM_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let k = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let payload = &bytes[REPM_HEADER_LEN..];
    let expected = n
        .checked_mul(k)
        .ok_or_else(|| Error::InvalidArgument(format!("header dimensions {n} x {k} overflow")))?;
    if payload.len() < expected * 8 {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len() / 8,
        });
    }
    if payload.len() > expected * 8 {
        return Err(Error::InvalidArgument(format!(
            "trailing data after {expected} values"
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Representation::new(name, DMatrix::from_row_slice(n, k, &values))
}

pub fn load_repm(path: impl AsRef<Path>) -> Result<Representation> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_repm(file_stem(path), &bytes)
}

pub fn save_repm(rep: &Representation, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_repm(rep))
        .map_err(|e| Error::io(path, e))
}

/// Loads by extension: `.repm` is binary, anything else is parsed as CSV.
pub fn load_any(path: impl AsRef<Path>, has_header: bool) -> Result<Representation> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("repm") => load_repm(path),
        _ => load_csv(path, has_header),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthFamily {
    /// Pair of Gaussian representations with per-feature correlation `rho`.
    Gaussian,
    /// `(phi, U phi)` with `U` Haar-distributed orthogonal.
    RotatedCopy,
    /// `(phi, M phi)` with `M` invertible, condition number at most 100.
    LinearMap,
    /// `(phi, phi + noise * G)`.
    NoisyCopy,
    /// Single representation supported near a rank-`rank` subspace.
    Lowrank,
}

impl std::str::FromStr for SynthFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "rotated_copy" => Ok(Self::RotatedCopy),
            "linear_map" => Ok(Self::LinearMap),
            "noisy_copy" => Ok(Self::NoisyCopy),
            "lowrank" => Ok(Self::Lowrank),
            other => Err(Error::InvalidArgument(format!("unknown family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub k: usize,
    pub family: SynthFamily,
    pub seed: u64,
    /// Noise level for `noisy_copy`.
    pub noise: f64,
    /// Subspace rank for `lowrank`.
    pub rank: usize,
    /// Per-feature correlation for `gaussian`.
    pub rho: f64,
}

impl SynthSpec {
    pub fn new(family: SynthFamily, n: usize, k: usize, seed: u64) -> Self {
        Self {
            n,
            k,
            family,
            seed,
            noise: 0.0,
            rank: k.max(1),
            rho: 0.0,
        }
    }

    pub fn noise(mut self, sigma: f64) -> Self {
        self.noise = sigma;
        self
    }

    pub fn rank(mut self, r: usize) -> Self {
        self.rank = r;
        self
    }

    pub fn rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::TooFewSamples(self.n));
        }
        if self.k < 1 {
            return Err(Error::NoFeatures);
        }
        if self.rank < 1 || self.rank > self.k {
            return Err(Error::InvalidArgument(format!(
                "rank must lie in [1, {}], got {}",
                self.k, self.rank
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise must be finite and >= 0, got {}",
                self.noise
            )));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument(format!(
                "rho must lie in [-1, 1], got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Synth {
    Single(Representation),
    Pair(Representation, Representation),
}

impl Synth {
    pub fn into_vec(self) -> Vec<Representation> {
        match self {
            Synth::Single(r) => vec![r],
            Synth::Pair(a, b) => vec![a, b],
        }
    }
}

pub(crate) fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Filled row-major so the draw order does not depend on storage layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// Haar-distributed orthogonal matrix via sign-corrected QR of a Gaussian matrix.
pub fn haar_orthogonal(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, k, k).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random invertible matrix `U diag(s) V^T` with singular values in `[1, 100]`.
pub fn random_invertible(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let u = haar_orthogonal(rng, k);
    let v = haar_orthogonal(rng, k);
    let unit = Uniform::new_inclusive(0.0, 2.0).expect("valid range");
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(k, |_, _| {
        10f64.powf(unit.sample(rng))
    }));
    u * s * v.transpose()
}

/// Deterministic synthetic representations; every output is normalized.
pub fn synthesize(spec: &SynthSpec) -> Result<Synth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, k) = (spec.n, spec.k);
    let tag = match spec.family {
        SynthFamily::Gaussian => "gaussian",
        SynthFamily::RotatedCopy => "rotated_copy",
        SynthFamily::LinearMap => "linear_map",
        SynthFamily::NoisyCopy => "noisy_copy",
        SynthFamily::Lowrank => "lowrank",
    };
    let base_name = format!("{tag}_{}", spec.seed);
    let name_a = format!("{base_name}_a");
    let name_b = format!("{base_name}_b");

    match spec.family {
        SynthFamily::Gaussian => {
            let x = gaussian_matrix(&mut rng, n, k);
            let g = gaussian_matrix(&mut rng, n, k);
            let y = &x * spec.rho + g * (1.0 - spec.rho * spec.rho).sqrt();
            let a = Representation::new(name_a, x)?.normalize()?;
            let b = Representation::new(name_b, y)?.normalize()?;
            Ok(Synth::Pair(a, b))
        }
        SynthFamily::RotatedCopy => {
            let a = Representation::new(name_a, gaussian_matrix(&mut rng, n, k))?.normalize()?;
            let u = haar_orthogonal(&mut rng, k);
            let b = a.map_features(name_b, &u)?.normalize()?;
            Ok(Synth::Pair(a, b))
        }
        SynthFamily::LinearMap => {
            let a = Representation::new(name_a, gaussian_matrix(&mut rng, n, k))?.normalize()?;
            let m = random_invertible(&mut rng, k);
            let b = a.map_features(name_b, &m)?.normalize()?;
            Ok(Synth::Pair(a, b))
        }
        SynthFamily::NoisyCopy => {
            let x = gaussian_matrix(&mut rng, n, k);
            let a = Representation::new(name_a, x)?.normalize()?;
            let g = gaussian_matrix(&mut rng, n, k);
            let b = if spec.noise == 0.0 {
                a.clone().with_name(name_b)
            } else {
                Representation::new(name_b, a.data() + g * spec.noise)?.normalize()?
            };
            Ok(Synth::Pair(a, b))
        }
        SynthFamily::Lowrank => {
            let z = gaussian_matrix(&mut rng, n, spec.rank);
            let w = gaussian_matrix(&mut rng, spec.rank, k);
            let jitter = gaussian_matrix(&mut rng, n, k);
            let x = z * w + jitter * 1e-8;
            let a = Representation::new(base_name, x)?.normalize()?;
            Ok(Synth::Single(a))
        }
    }
}
