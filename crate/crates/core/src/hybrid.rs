//! Combinations of the PCA and autoencoder codecs.
//!
//! The parallel codec encodes a block with both codecs and decodes to
//! `w·pca + (1-w)·ae`. The sequential codec encodes the block with PCA and the
//! PCA residual with a tanh-output autoencoder, decoding to `pca + w₂·residual`.

use std::io::{Read, Write};

use crate::autoencoder::{self, Activation, MlpAutoencoder, TrainConfig, TrainReport};
use crate::binio;
use crate::block::{Block, BLOCK_EDGE, BLOCK_LEN};
use crate::codec::{BlockCodec, CodeVector, CodecKind};
use crate::error::{Error, Result};
use crate::pca::PcaCodec;

const MAGIC: &[u8; 4] = b"HYBC";
const VERSION: u32 = 1;
const MODE_PARALLEL: u8 = 0;
const MODE_SEQUENTIAL: u8 = 1;
/// Golden-section stopping width on the weight interval.
pub const WEIGHT_TOLERANCE: f64 = 1e-3;

/// Outcome of a line search over a mixing weight in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightSearch {
    pub weight: f64,
    pub mse: f64,
    pub mse_at_zero: f64,
    pub mse_at_one: f64,
    /// Minimizer of the unclamped quadratic error model, clamped to `[0, 1]`.
    pub closed_form_weight: f64,
}

impl WeightSearch {
    /// True when the chosen weight sits at 0 or 1.
    pub fn at_endpoint(&self) -> bool {
        self.weight == 0.0 || self.weight == 1.0
    }
}

/// Golden-section search for the minimum of `f` on `[0, 1]` down to `tol`.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Picks the best of the golden-section result and both endpoints.
/// Ties go to `preferred`, then to the interior point.
fn settle(f: &mut impl FnMut(f64) -> f64, preferred: f64, closed_form_weight: f64) -> WeightSearch {
    let (w_gs, mse_gs) = golden_section(&mut *f, WEIGHT_TOLERANCE);
    let (mse_at_zero, mse_at_one) = (f(0.0), f(1.0));
    let other = 1.0 - preferred;
    let mse_pref = if preferred == 1.0 {
        mse_at_one
    } else {
        mse_at_zero
    };
    let mse_other = if preferred == 1.0 {
        mse_at_zero
    } else {
        mse_at_one
    };
    let mut best = (preferred, mse_pref);
    for cand in [(w_gs, mse_gs), (other, mse_other)] {
        if cand.1 < best.1 {
            best = cand;
        }
    }
    WeightSearch {
        weight: best.0,
        mse: best.1,
        mse_at_zero,
        mse_at_one,
        closed_form_weight,
    }
}

/// `w·p + (1-w)·a`, clamped into `[0, 1]`.
pub fn mix(pca: &[f32], ae: &[f32], w: f64) -> Vec<f32> {
    pca.iter()
        .zip(ae)
        .map(|(&p, &a)| (w * p as f64 + (1.0 - w) * a as f64).clamp(0.0, 1.0) as f32)
        .collect()
}

/// Line search of the parallel mixing weight given each block's two reconstructions.
///
/// The golden-section search runs on the voxel MSE of the mixed blocks; the
/// closed-form weight comes from the quadratic's coefficients. When the two
/// reconstructions coincide every weight ties and 1 is returned.
pub fn optimize_mix(originals: &[&[f32]], pca: &[Vec<f32>], ae: &[Vec<f32>]) -> WeightSearch {
    let voxels: usize = originals.iter().map(|o| o.len()).sum();
    let mut f = |w: f64| -> f64 {
        let mut sum = 0.0;
        for ((o, p), a) in originals.iter().zip(pca).zip(ae) {
            for ((&x, &p), &a) in o.iter().zip(p).zip(a) {
                let y = (w * p as f64 + (1.0 - w) * a as f64).clamp(0.0, 1.0);
                sum += (y - x as f64).powi(2);
            }
        }
        sum / voxels.max(1) as f64
    };
    // e(w) = (a - b) + w (p - a), so Σe² = A + 2wB + w²C.
    let (mut bsum, mut csum) = (0.0f64, 0.0f64);
    for ((o, p), a) in originals.iter().zip(pca).zip(ae) {
        for ((&x, &p), &a) in o.iter().zip(p).zip(a) {
            let diff = p as f64 - a as f64;
            bsum += (a as f64 - x as f64) * diff;
            csum += diff * diff;
        }
    }
    if csum == 0.0 {
        let mse = f(1.0);
        return WeightSearch {
            weight: 1.0,
            mse,
            mse_at_zero: mse,
            mse_at_one: mse,
            closed_form_weight: 1.0,
        };
    }
    let closed = (-bsum / csum).clamp(0.0, 1.0);
    settle(&mut f, 1.0, closed)
}

/// `clamp(first + w₂·residual)`.
pub fn sequential_combine(first: &[f32], residual: &[f32], w2: f64) -> Vec<f32> {
    first
        .iter()
        .zip(residual)
        .map(|(&p, &r)| (p as f64 + w2 * r as f64).clamp(0.0, 1.0) as f32)
        .collect()
}

/// Line search of the second-stage weight; ties go to `w₂ = 0`.
pub fn optimize_second_weight(
    originals: &[&[f32]],
    first: &[Vec<f32>],
    residual: &[Vec<f32>],
) -> WeightSearch {
    let voxels: usize = originals.iter().map(|o| o.len()).sum();
    let mut f = |w: f64| -> f64 {
        let mut sum = 0.0;
        for ((o, p), r) in originals.iter().zip(first).zip(residual) {
            for ((&x, &p), &r) in o.iter().zip(p).zip(r) {
                let y = (p as f64 + w * r as f64).clamp(0.0, 1.0);
                sum += (y - x as f64).powi(2);
            }
        }
        sum / voxels.max(1) as f64
    };
    let (mut bsum, mut csum) = (0.0f64, 0.0f64);
    for ((o, p), r) in originals.iter().zip(first).zip(residual) {
        for ((&x, &p), &r) in o.iter().zip(p).zip(r) {
            bsum += (p as f64 - x as f64) * r as f64;
            csum += (r as f64).powi(2);
        }
    }
    let closed = if csum > 0.0 {
        (-bsum / csum).clamp(0.0, 1.0)
    } else {
        0.0
    };
    settle(&mut f, 0.0, closed)
}

/// Concatenated PCA and autoencoder codes decoded as a weighted sum.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelCodec {
    pca: PcaCodec,
    ae: MlpAutoencoder,
    weight: f32,
}

impl ParallelCodec {
    pub fn new(pca: PcaCodec, ae: MlpAutoencoder, weight: f32) -> Result<Self> {
        check_weight(weight as f64)?;
        if ae.input_len() != BLOCK_LEN {
            return Err(Error::Codec("autoencoder does not take blocks".into()));
        }
        Ok(Self { pca, ae, weight })
    }

    pub fn pca(&self) -> &PcaCodec {
        &self.pca
    }

    pub fn autoencoder(&self) -> &MlpAutoencoder {
        &self.ae
    }

    /// The per-map weight used by [`BlockCodec::decode`].
    pub fn weight(&self) -> f32 {
        self.weight
    }

    pub fn set_weight(&mut self, weight: f32) -> Result<()> {
        check_weight(weight as f64)?;
        self.weight = weight;
        Ok(())
    }

    pub fn split_lengths(&self) -> (usize, usize) {
        (self.pca.code_len(), BlockCodec::code_len(&self.ae))
    }

    fn halves(&self, code: &CodeVector) -> Result<(CodeVector, CodeVector)> {
        self.check_code(code)?;
        let d1 = self.pca.code_len();
        Ok((
            CodeVector::new(CodecKind::Pca, code.values[..d1].to_vec()),
            CodeVector::new(CodecKind::Autoencoder, code.values[d1..].to_vec()),
        ))
    }

    /// Both reconstructions of a code.
    pub fn decode_parts(&self, code: &CodeVector) -> Result<(Block, Block)> {
        let (c1, c2) = self.halves(code)?;
        Ok((self.pca.decode(&c1)?, self.ae.decode(&c2)?))
    }

    pub fn decode_with_weight(&self, code: &CodeVector, w: f64) -> Result<Block> {
        check_weight(w)?;
        let (p, a) = self.decode_parts(code)?;
        Block::from_clamped(mix(p.values(), a.values(), w))
    }

    /// Best single weight for a set of blocks.
    pub fn optimize_weight(&self, blocks: &[Block]) -> Result<WeightSearch> {
        let mut pca = Vec::with_capacity(blocks.len());
        let mut ae = Vec::with_capacity(blocks.len());
        for b in blocks {
            let (p, a) = self.decode_parts(&self.encode(b)?)?;
            pca.push(p.into_values());
            ae.push(a.into_values());
        }
        let originals: Vec<&[f32]> = blocks.iter().map(|b| b.values()).collect();
        Ok(optimize_mix(&originals, &pca, &ae))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let (d1, d2) = self.split_lengths();
        write_header(w, MODE_PARALLEL, d1, d2, self.weight)?;
        self.pca.write_to(w)?;
        self.ae.write_to(w)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let (mode, d1, d2, weight) = read_header(r)?;
        if mode != MODE_PARALLEL {
            return Err(Error::Format("hybrid codec is not in parallel mode".into()));
        }
        let pca = PcaCodec::read_from(r)?;
        let ae = MlpAutoencoder::read_from(r)?;
        let codec = Self::new(pca, ae, weight).map_err(|e| Error::Format(e.to_string()))?;
        check_split(codec.split_lengths(), d1, d2)?;
        Ok(codec)
    }
}

impl BlockCodec for ParallelCodec {
    fn kind(&self) -> CodecKind {
        CodecKind::Parallel
    }

    fn code_len(&self) -> usize {
        let (d1, d2) = self.split_lengths();
        d1 + d2
    }

    fn encode(&self, block: &Block) -> Result<CodeVector> {
        let mut values = self.pca.encode(block)?.values;
        values.extend(self.ae.encode(block)?.values);
        Ok(CodeVector::new(CodecKind::Parallel, values))
    }

    fn decode(&self, code: &CodeVector) -> Result<Block> {
        self.decode_with_weight(code, self.weight as f64)
    }
}

/// Summary of the residuals a second stage is trained on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualStats {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    /// Largest magnitude over voxels of the per-voxel mean residual.
    pub max_abs_voxel_mean: f64,
    pub mean_squared: f64,
    /// Share of residual energy kept by averaging over 4³ cells.
    pub low_frequency_fraction: f64,
}

/// First-stage residuals `b - pca_decode(pca_encode(b))`.
pub fn pca_residuals(pca: &PcaCodec, blocks: &[Block]) -> Result<Vec<Vec<f32>>> {
    blocks
        .iter()
        .map(|b| {
            let r = pca.reconstruct(b)?;
            Ok(b.values()
                .iter()
                .zip(r.values())
                .map(|(&x, &y)| x - y)
                .collect())
        })
        .collect()
}

pub fn residual_stats(residuals: &[Vec<f32>]) -> ResidualStats {
    const CELL: usize = 4;
    let mut voxel_sum = vec![0.0f64; BLOCK_LEN];
    let (mut min, mut max, mut energy, mut low) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0.0);
    for r in residuals {
        for (s, &v) in voxel_sum.iter_mut().zip(r) {
            let v = v as f64;
            *s += v;
            min = min.min(v);
            max = max.max(v);
            energy += v * v;
        }
        let cells = BLOCK_EDGE / CELL;
        for cz in 0..cells {
            for cy in 0..cells {
                for cx in 0..cells {
                    let mut mean = 0.0;
                    for z in 0..CELL {
                        for y in 0..CELL {
                            for x in 0..CELL {
                                let i = crate::block::voxel_index(
                                    cx * CELL + x,
                                    cy * CELL + y,
                                    cz * CELL + z,
                                );
                                mean += r[i] as f64;
                            }
                        }
                    }
                    mean /= (CELL * CELL * CELL) as f64;
                    low += mean * mean * (CELL * CELL * CELL) as f64;
                }
            }
        }
    }
    let n = residuals.len().max(1) as f64;
    ResidualStats {
        count: residuals.len(),
        min,
        max,
        max_abs_voxel_mean: voxel_sum.iter().fold(0.0, |m, s| m.max((s / n).abs())),
        mean_squared: energy / (n * BLOCK_LEN as f64),
        low_frequency_fraction: if energy > 0.0 { low / energy } else { 0.0 },
    }
}

/// PCA first stage plus a tanh-output autoencoder on its residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct SequentialCodec {
    pca: PcaCodec,
    ae: MlpAutoencoder,
    weight: f32,
}

/// A fitted sequential codec together with its training diagnostics.
#[derive(Clone, Debug)]
pub struct SequentialFit {
    pub codec: SequentialCodec,
    pub residual_stats: ResidualStats,
    pub training: TrainReport,
    pub weight_search: WeightSearch,
}

impl SequentialCodec {
    pub fn new(pca: PcaCodec, ae: MlpAutoencoder, weight: f32) -> Result<Self> {
        check_weight(weight as f64)?;
        if ae.input_len() != BLOCK_LEN {
            return Err(Error::Codec("autoencoder does not take blocks".into()));
        }
        if ae.output_activation() != Activation::Tanh {
            return Err(Error::Codec(
                "second stage needs a tanh output layer".into(),
            ));
        }
        Ok(Self { pca, ae, weight })
    }

    /// Trains a `d₂`-code second stage on the residuals of `pca`, then
    /// searches `w₂` on the same blocks.
    pub fn fit(
        blocks: &[Block],
        pca: PcaCodec,
        ae_code_len: usize,
        cfg: &TrainConfig,
    ) -> Result<SequentialFit> {
        let residuals = pca_residuals(&pca, blocks)?;
        let stats = residual_stats(&residuals);
        log::info!(
            "residuals: range [{:.4}, {:.4}], mean square {:.3e}, max |voxel mean| {:.4}, low-frequency share {:.3}",
            stats.min,
            stats.max,
            stats.mean_squared,
            stats.max_abs_voxel_mean,
            stats.low_frequency_fraction
        );
        let init = MlpAutoencoder::for_blocks(ae_code_len, cfg.seed)?
            .with_output_activation(Activation::Tanh);
        let (ae, training) = autoencoder::train(&init, &residuals, cfg)?;
        let mut codec = Self::new(pca, ae, 0.0)?;
        let weight_search = codec.optimize_weight(blocks)?;
        codec.weight = weight_search.weight as f32;
        Ok(SequentialFit {
            codec,
            residual_stats: stats,
            training,
            weight_search,
        })
    }

    pub fn pca(&self) -> &PcaCodec {
        &self.pca
    }

    pub fn autoencoder(&self) -> &MlpAutoencoder {
        &self.ae
    }

    pub fn weight(&self) -> f32 {
        self.weight
    }

    pub fn set_weight(&mut self, weight: f32) -> Result<()> {
        check_weight(weight as f64)?;
        self.weight = weight;
        Ok(())
    }

    pub fn split_lengths(&self) -> (usize, usize) {
        (self.pca.code_len(), BlockCodec::code_len(&self.ae))
    }

    /// First-stage reconstruction and raw second-stage output of a code.
    pub fn decode_parts(&self, code: &CodeVector) -> Result<(Block, Vec<f32>)> {
        self.check_code(code)?;
        let d1 = self.pca.code_len();
        let first = self
            .pca
            .decode(&CodeVector::new(CodecKind::Pca, code.values[..d1].to_vec()))?;
        let residual = self.ae.decode_raw(&CodeVector::new(
            CodecKind::Autoencoder,
            code.values[d1..].to_vec(),
        ))?;
        Ok((first, residual))
    }

    pub fn decode_with_weight(&self, code: &CodeVector, w2: f64) -> Result<Block> {
        check_weight(w2)?;
        let (first, residual) = self.decode_parts(code)?;
        Block::from_clamped(sequential_combine(first.values(), &residual, w2))
    }

    pub fn optimize_weight(&self, blocks: &[Block]) -> Result<WeightSearch> {
        let mut first = Vec::with_capacity(blocks.len());
        let mut residual = Vec::with_capacity(blocks.len());
        for b in blocks {
            let (p, r) = self.decode_parts(&self.encode(b)?)?;
            first.push(p.into_values());
            residual.push(r);
        }
        let originals: Vec<&[f32]> = blocks.iter().map(|b| b.values()).collect();
        Ok(optimize_second_weight(&originals, &first, &residual))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let (d1, d2) = self.split_lengths();
        write_header(w, MODE_SEQUENTIAL, d1, d2, self.weight)?;
        self.pca.write_to(w)?;
        self.ae.write_to(w)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let (mode, d1, d2, weight) = read_header(r)?;
        if mode != MODE_SEQUENTIAL {
            return Err(Error::Format(
                "hybrid codec is not in sequential mode".into(),
            ));
        }
        let pca = PcaCodec::read_from(r)?;
        let ae = MlpAutoencoder::read_from(r)?;
        let codec = Self::new(pca, ae, weight).map_err(|e| Error::Format(e.to_string()))?;
        check_split(codec.split_lengths(), d1, d2)?;
        Ok(codec)
    }

    /// Whether a serialized hybrid codec is sequential, read from its mode byte.
    pub(crate) fn peek_mode(bytes: &[u8]) -> Result<bool> {
        match bytes.get(8) {
            Some(&MODE_PARALLEL) => Ok(false),
            Some(&MODE_SEQUENTIAL) => Ok(true),
            Some(m) => Err(Error::Format(format!("unknown hybrid mode {m}"))),
            None => Err(Error::Format("hybrid codec header truncated".into())),
        }
    }
}

impl BlockCodec for SequentialCodec {
    fn kind(&self) -> CodecKind {
        CodecKind::Sequential
    }

    fn code_len(&self) -> usize {
        let (d1, d2) = self.split_lengths();
        d1 + d2
    }

    fn encode(&self, block: &Block) -> Result<CodeVector> {
        let c1 = self.pca.encode(block)?;
        let first = self.pca.decode(&c1)?;
        let residual: Vec<f32> = block
            .values()
            .iter()
            .zip(first.values())
            .map(|(&x, &y)| x - y)
            .collect();
        let mut values = c1.values;
        values.extend(self.ae.encode_values(&residual)?.values);
        Ok(CodeVector::new(CodecKind::Sequential, values))
    }

    fn decode(&self, code: &CodeVector) -> Result<Block> {
        self.decode_with_weight(code, self.weight as f64)
    }
}

fn check_weight(w: f64) -> Result<()> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(Error::Range(format!("mixing weight {w} outside [0, 1]")))
    }
}

fn write_header(w: &mut impl Write, mode: u8, d1: usize, d2: usize, weight: f32) -> Result<()> {
    binio::write_magic(w, MAGIC, VERSION)?;
    binio::write_u8(w, mode)?;
    binio::write_u32(w, d1 as u32)?;
    binio::write_u32(w, d2 as u32)?;
    binio::write_f32(w, weight)
}

fn read_header(r: &mut impl Read) -> Result<(u8, usize, usize, f32)> {
    binio::read_magic(r, MAGIC, VERSION)?;
    let mode = binio::read_u8(r)?;
    let d1 = binio::read_u32(r)? as usize;
    let d2 = binio::read_u32(r)? as usize;
    let weight = binio::read_f32(r)?;
    Ok((mode, d1, d2, weight))
}

fn check_split(actual: (usize, usize), d1: usize, d2: usize) -> Result<()> {
    if actual != (d1, d2) {
        return Err(Error::Format(format!(
            "hybrid header declares {d1}+{d2} slots but payloads give {}+{}",
            actual.0, actual.1
        )));
    }
    Ok(())
}
