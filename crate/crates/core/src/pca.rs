//! Linear block codec: an orthonormal basis of mean-centered blocks.
//!
//! A code holds the block's scalar mean in slot 0 followed by the
//! coefficients of the centered block on the `k` leading principal directions.

use std::io::{Read, Write};

use faer::{Accum, Mat, Par, Side};

use crate::binio;
use crate::block::{Block, BLOCK_LEN};
use crate::codec::{BlockCodec, CodeVector, CodecKind};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PCAC";
const VERSION: u32 = 1;
/// Rows per chunk when accumulating the covariance matrix.
const COVARIANCE_CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaCodec {
    /// `k` rows of length 4096, row-major, ordered by descending singular value.
    basis: Vec<f32>,
    /// Zero marks a padded component that carries no variance of the fit data.
    singular_values: Vec<f32>,
}

impl PcaCodec {
    /// Fits `k` principal directions to the given blocks.
    ///
    /// Each block is centered by its own scalar mean. Directions are those of
    /// the largest singular values of the centered data matrix, with each
    /// direction's largest-magnitude entry made positive. The decomposition
    /// does not depend on `k`, so a smaller fit equals a prefix of a larger one.
    /// If the data has rank below `k`, the surplus rows are an orthonormal
    /// completion with singular value 0.
    pub fn fit(blocks: &[Block], k: usize) -> Result<Self> {
        let m = blocks.len();
        if k == 0 || k >= BLOCK_LEN {
            return Err(Error::Config(format!(
                "component count {k} outside 1..{BLOCK_LEN}"
            )));
        }
        if m <= k {
            return Err(Error::Config(format!(
                "PCA with {k} components needs more than {k} blocks, got {m}"
            )));
        }
        let (directions, sigma) = leading_directions(blocks, k);
        let rank = sigma.iter().filter(|&&s| s > 0.0).count();
        if rank < k {
            log::warn!(
                "data has rank {rank} < {k}; padding {} components",
                k - rank
            );
        }
        let basis = complete_basis(directions, k);
        let mut flat = Vec::with_capacity(k * BLOCK_LEN);
        for row in basis {
            flat.extend(row.iter().map(|&v| v as f32));
        }
        let mut singular_values: Vec<f32> = sigma.iter().map(|&s| s as f32).collect();
        singular_values.resize(k, 0.0);
        Ok(Self {
            basis: flat,
            singular_values,
        })
    }

    /// Builds a codec from stored parts, checking shape, ordering and orthonormality.
    pub fn from_parts(basis: Vec<f32>, singular_values: Vec<f32>) -> Result<Self> {
        let k = singular_values.len();
        if k == 0 || basis.len() != k * BLOCK_LEN {
            return Err(Error::Codec(format!(
                "basis of {} values does not hold {k} rows of {BLOCK_LEN}",
                basis.len()
            )));
        }
        if singular_values
            .iter()
            .any(|s| !(*s >= 0.0) || !s.is_finite())
        {
            return Err(Error::Codec(
                "singular values must be finite and non-negative".into(),
            ));
        }
        if singular_values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Codec(
                "singular values must be non-increasing".into(),
            ));
        }
        if basis.iter().any(|v| !v.is_finite()) {
            return Err(Error::Codec("non-finite basis entry".into()));
        }
        let codec = Self {
            basis,
            singular_values,
        };
        let err = codec.orthonormality_error();
        if err > 1e-4 {
            return Err(Error::Codec(format!(
                "basis rows not orthonormal (max error {err:e})"
            )));
        }
        Ok(codec)
    }

    pub fn k(&self) -> usize {
        self.singular_values.len()
    }

    pub fn singular_values(&self) -> &[f32] {
        &self.singular_values
    }

    pub fn basis_row(&self, i: usize) -> &[f32] {
        &self.basis[i * BLOCK_LEN..(i + 1) * BLOCK_LEN]
    }

    /// Per component: true when it was padded rather than fitted.
    pub fn padded(&self) -> Vec<bool> {
        self.singular_values.iter().map(|&s| s == 0.0).collect()
    }

    /// The codec restricted to its first `k` components.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k() {
            return Err(Error::Config(format!(
                "cannot truncate a {}-component codec to {k}",
                self.k()
            )));
        }
        Ok(Self {
            basis: self.basis[..k * BLOCK_LEN].to_vec(),
            singular_values: self.singular_values[..k].to_vec(),
        })
    }

    /// Largest deviation of the row Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let k = self.k();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..=i {
                let d = dot(self.basis_row(i), self.basis_row(j));
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        worst
    }

    /// Coefficients of `block - mean` on the basis rows, with the mean first.
    pub fn project(&self, block: &Block) -> Vec<f64> {
        let mean = block.mean();
        let centered: Vec<f64> = block.values().iter().map(|&v| v as f64 - mean).collect();
        let mut out = Vec::with_capacity(self.k() + 1);
        out.push(mean);
        for i in 0..self.k() {
            out.push(dot_mixed(self.basis_row(i), &centered));
        }
        out
    }

    /// `c[0] + Σ c[i+1] basis_i` without clamping.
    pub fn synthesize(&self, code: &[f32]) -> Vec<f64> {
        debug_assert_eq!(code.len(), self.k() + 1);
        let mut out = vec![code[0] as f64; BLOCK_LEN];
        for (i, &c) in code[1..].iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let c = c as f64;
            for (o, &b) in out.iter_mut().zip(self.basis_row(i)) {
                *o += c * b as f64;
            }
        }
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        binio::write_magic(w, MAGIC, VERSION)?;
        binio::write_u32(w, self.k() as u32)?;
        binio::write_f32s(w, &self.singular_values)?;
        binio::write_f32s(w, &self.basis)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        binio::read_magic(r, MAGIC, VERSION)?;
        let k = binio::read_u32(r)? as usize;
        if k == 0 || k >= BLOCK_LEN {
            return Err(Error::Format(format!(
                "PCA component count {k} out of range"
            )));
        }
        let singular_values = binio::read_f32s(r, k)?;
        let basis = binio::read_f32s(r, k * BLOCK_LEN)?;
        Self::from_parts(basis, singular_values).map_err(|e| Error::Format(e.to_string()))
    }
}

impl BlockCodec for PcaCodec {
    fn kind(&self) -> CodecKind {
        CodecKind::Pca
    }

    fn code_len(&self) -> usize {
        self.k() + 1
    }

    fn encode(&self, block: &Block) -> Result<CodeVector> {
        let values = self.project(block).into_iter().map(|v| v as f32).collect();
        Ok(CodeVector::new(CodecKind::Pca, values))
    }

    fn decode(&self, code: &CodeVector) -> Result<Block> {
        self.check_code(code)?;
        let values = self
            .synthesize(&code.values)
            .into_iter()
            .map(|v| v as f32)
            .collect();
        Block::from_clamped(values)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] as f64 * y[l] as f64;
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(&x, &y)| x as f64 * y as f64).sum();
    acc.iter().sum::<f64>() + tail
}

fn dot_mixed(a: &[f32], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] as f64 * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(&x, &y)| x as f64 * y).sum();
    acc.iter().sum::<f64>() + tail
}

fn centered_row(block: &Block) -> impl Iterator<Item = f64> + '_ {
    let mean = block.mean();
    block.values().iter().map(move |&v| v as f64 - mean)
}

/// Up to `k` right singular vectors of the centered data with non-negligible
/// singular values, in descending order, plus those singular values.
fn leading_directions(blocks: &[Block], k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let m = blocks.len();
    let n = BLOCK_LEN;
    // Eigen-decompose whichever of XᵀX (n×n) and XXᵀ (m×m) is smaller.
    let (eigenvalues, vectors): (Vec<f64>, Vec<Vec<f64>>) = if m >= n {
        let mut cov = Mat::<f64>::zeros(n, n);
        for chunk in blocks.chunks(COVARIANCE_CHUNK) {
            let mut x = Mat::<f64>::zeros(chunk.len(), n);
            for (r, b) in chunk.iter().enumerate() {
                for (c, v) in centered_row(b).enumerate() {
                    x[(r, c)] = v;
                }
            }
            faer::linalg::matmul::matmul(
                cov.as_mut(),
                Accum::Add,
                x.transpose(),
                x.as_ref(),
                1.0,
                Par::Seq,
            );
        }
        let evd = cov
            .self_adjoint_eigen(Side::Lower)
            .expect("symmetric eigendecomposition converges");
        let s = evd.S().column_vector();
        let u = evd.U();
        let order = descending(n, |i| s[i]);
        let take = &order[..k.min(n)];
        (
            take.iter().map(|&i| s[i]).collect(),
            take.iter()
                .map(|&i| (0..n).map(|r| u[(r, i)]).collect())
                .collect(),
        )
    } else {
        let mut x = Mat::<f64>::zeros(m, n);
        for (r, b) in blocks.iter().enumerate() {
            for (c, v) in centered_row(b).enumerate() {
                x[(r, c)] = v;
            }
        }
        let gram = &x * x.transpose();
        let evd = gram
            .self_adjoint_eigen(Side::Lower)
            .expect("symmetric eigendecomposition converges");
        let s = evd.S().column_vector();
        let u = evd.U();
        let order = descending(m, |i| s[i]);
        let take = &order[..k.min(m)];
        let uk = Mat::<f64>::from_fn(m, take.len(), |r, j| u[(r, take[j])]);
        let v = x.transpose() * &uk;
        let mut vecs = Vec::with_capacity(take.len());
        for (j, &i) in take.iter().enumerate() {
            let sigma = s[i].max(0.0).sqrt();
            let scale = if sigma > 0.0 { 1.0 / sigma } else { 0.0 };
            vecs.push((0..n).map(|c| v[(c, j)] * scale).collect());
        }
        (take.iter().map(|&i| s[i]).collect(), vecs)
    };
    let lambda_max = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let tol = m.max(n) as f64 * f64::EPSILON * lambda_max;
    let mut directions = Vec::new();
    let mut sigma = Vec::new();
    for (lambda, v) in eigenvalues.into_iter().zip(vectors) {
        if lambda_max > 0.0 && lambda > tol {
            sigma.push(lambda.sqrt());
            directions.push(v);
        } else {
            break;
        }
    }
    (directions, sigma)
}

fn descending(len: usize, key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    idx
}

/// Re-orthonormalizes the fitted directions, pads with unit-vector
/// completions orthogonal to the constant direction, and fixes signs.
fn complete_basis(directions: Vec<Vec<f64>>, k: usize) -> Vec<Vec<f64>> {
    let n = BLOCK_LEN;
    let ones = vec![1.0 / (n as f64).sqrt(); n];
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(k);
    for mut v in directions {
        orthogonalize(&mut v, std::iter::once(&ones).chain(accepted.iter()));
        normalize(&mut v);
        accepted.push(v);
    }
    let mut candidate = 0;
    while accepted.len() < k {
        let mut v = vec![0.0; n];
        v[candidate] = 1.0;
        candidate += 1;
        orthogonalize(&mut v, std::iter::once(&ones).chain(accepted.iter()));
        if norm(&v) > 0.5 {
            normalize(&mut v);
            accepted.push(v);
        }
    }
    for v in accepted.iter_mut() {
        fix_sign(v);
    }
    accepted
}

/// Two passes of modified Gram–Schmidt against the given unit vectors.
fn orthogonalize<'a>(v: &mut [f64], against: impl Iterator<Item = &'a Vec<f64>> + Clone) {
    for _ in 0..2 {
        for u in against.clone() {
            let p: f64 = v.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(u.iter()) {
                *a -= p * b;
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    for a in v.iter_mut() {
        *a /= n;
    }
}

/// Makes the first entry of largest magnitude positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, a) in v.iter().enumerate() {
        if a.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for a in v.iter_mut() {
            *a = -*a;
        }
    }
}
