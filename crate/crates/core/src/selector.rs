//! Shape-selective decompression: blocks whose codes lie close to the codes
//! of a target shape are flagged and only those are decoded.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use nalgebra::{Isometry3, Point3, Translation3};

use crate::binio;
use crate::block::BLOCK_EDGE;
use crate::codec::{code_distance, BlockCodec, CodeVector, Codec, CodecKind};
use crate::container::{decompress_selected, CompressedMap};
use crate::error::{Error, Result};
use crate::shapes::{sample_shape_block, Primitive, ShapeSpec};
use crate::volume::TsdfVolume;

const MAGIC: &[u8; 4] = b"DESC";
const VERSION: u32 = 1;
const MAX_LABEL: usize = 1 << 12;
const MAX_CODES: usize = 1 << 20;

/// Number of floor heights sampled by [`build_plane_model`].
pub const PLANE_OFFSETS: usize = 15;

/// Reference codes of one target shape plus a squared-distance threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorModel {
    pub label: String,
    pub codes: Vec<CodeVector>,
    pub threshold: f64,
}

/// Heights, in voxel units from the block's first voxel center, of the
/// reference floor planes: evenly spread over the block's 16-voxel extent.
pub fn plane_offsets() -> Vec<f64> {
    (0..PLANE_OFFSETS)
        .map(|j| -0.5 + BLOCK_EDGE as f64 * (j as f64 + 0.5) / PLANE_OFFSETS as f64)
        .collect()
}

/// Encodes a horizontal floor (solid below) at each of [`plane_offsets`].
pub fn build_plane_model(
    codec: &dyn BlockCodec,
    voxel_size: f64,
    label: &str,
) -> Result<DescriptorModel> {
    let mut codes = Vec::with_capacity(PLANE_OFFSETS);
    for h in plane_offsets() {
        let pose = Isometry3::from_parts(
            Translation3::new(0.0, 0.0, h * voxel_size),
            Default::default(),
        );
        let shape = ShapeSpec::new(Primitive::Plane, pose)?;
        let block = sample_shape_block(&shape, &Point3::origin(), voxel_size);
        codes.push(codec.encode(&block)?);
    }
    Ok(DescriptorModel {
        label: label.to_string(),
        codes,
        threshold: 0.0,
    })
}

impl DescriptorModel {
    pub fn codec_kind(&self) -> Option<CodecKind> {
        self.codes.first().map(|c| c.kind)
    }

    /// Smallest squared code distance from `code` to any reference code.
    pub fn distance(&self, code: &CodeVector) -> Result<f64> {
        let mut best = f64::INFINITY;
        for r in &self.codes {
            best = best.min(code_distance(code, r)?);
        }
        Ok(best)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let kind = self
            .codec_kind()
            .ok_or_else(|| Error::Config("descriptor model has no codes".into()))?;
        let len = self.codes[0].len();
        if self.codes.iter().any(|c| c.kind != kind || c.len() != len) {
            return Err(Error::Config(
                "descriptor codes differ in kind or length".into(),
            ));
        }
        binio::write_magic(w, MAGIC, VERSION)?;
        binio::write_bytes(w, self.label.as_bytes())?;
        binio::write_u8(w, kind.tag())?;
        binio::write_u32(w, len as u32)?;
        binio::write_u32(w, self.codes.len() as u32)?;
        binio::write_u64(w, self.threshold.to_bits())?;
        for c in &self.codes {
            binio::write_f32s(w, &c.values)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        binio::read_magic(r, MAGIC, VERSION)?;
        let label = String::from_utf8(binio::read_bytes(r, MAX_LABEL)?)
            .map_err(|_| Error::Format("descriptor label is not UTF-8".into()))?;
        let kind = CodecKind::from_tag(binio::read_u8(r)?)?;
        let len = binio::read_u32(r)? as usize;
        let count = binio::read_u32(r)? as usize;
        if len == 0 || count == 0 || count > MAX_CODES {
            return Err(Error::Format(format!(
                "implausible descriptor shape {count}x{len}"
            )));
        }
        let threshold = f64::from_bits(binio::read_u64(r)?);
        if threshold.is_nan() || threshold < 0.0 {
            return Err(Error::Format(format!(
                "bad descriptor threshold {threshold}"
            )));
        }
        let mut codes = Vec::with_capacity(count);
        for _ in 0..count {
            codes.push(CodeVector::new(kind, binio::read_f32s(r, len)?));
        }
        Ok(Self {
            label,
            codes,
            threshold,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let m = Self::read_from(&mut cur)?;
        binio::expect_eof(&mut cur)?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Per-block match result; empty blocks have infinite distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockMatch {
    pub distance: f64,
    pub flagged: bool,
}

/// Flags every coded block whose distance to the model is strictly below its threshold.
pub fn match_blocks(map: &CompressedMap, model: &DescriptorModel) -> Result<Vec<BlockMatch>> {
    (0..map.blocks.len())
        .map(|i| {
            let distance = match map.code(i) {
                Some(code) => model.distance(&code)?,
                None => f64::INFINITY,
            };
            Ok(BlockMatch {
                distance,
                flagged: distance < model.threshold,
            })
        })
        .collect()
}

/// Midpoint between the largest in-class and the smallest out-of-class distance.
pub fn calibrate_threshold(in_class: &[f64], out_class: &[f64]) -> Result<f64> {
    let max_in = in_class
        .iter()
        .copied()
        .filter(|d| d.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let min_out = out_class
        .iter()
        .copied()
        .filter(|d| d.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !max_in.is_finite() || !min_out.is_finite() {
        return Err(Error::Config(
            "calibration needs finite in-class and out-of-class distances".into(),
        ));
    }
    if max_in >= min_out {
        log::warn!(
            "descriptor classes overlap: max in-class {max_in:e} >= min out-of-class {min_out:e}"
        );
    }
    Ok(0.5 * (max_in + min_out))
}

/// Precision and recall of `flags` against ground-truth `labels`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
}

pub fn score_selection(flags: &[bool], labels: &[bool]) -> Result<SelectionScore> {
    if flags.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} flags for {} labels",
            flags.len(),
            labels.len()
        )));
    }
    let tp = flags.iter().zip(labels).filter(|(f, l)| **f && **l).count();
    let fp = flags
        .iter()
        .zip(labels)
        .filter(|(f, l)| **f && !**l)
        .count();
    let fneg = flags
        .iter()
        .zip(labels)
        .filter(|(f, l)| !**f && **l)
        .count();
    let ratio = |a: usize, b: usize| {
        if a + b == 0 {
            1.0
        } else {
            a as f64 / (a + b) as f64
        }
    };
    Ok(SelectionScore {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        precision: ratio(tp, fp),
        recall: ratio(tp, fneg),
    })
}

/// Decodes only the flagged blocks; the rest stay free space (`d_max`) with weight 0.
pub fn selective_decompress(
    map: &CompressedMap,
    codec: &Codec,
    flags: &[bool],
) -> Result<TsdfVolume> {
    decompress_selected(map, codec, Some(flags))
}
