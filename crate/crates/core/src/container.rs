//! Compressed maps: a volume's block tiling stored as empty flags or codes,
//! plus reconstruction-error reports.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use crate::binio;
use crate::block::{BlockIndex, BLOCK_LEN};
use crate::codec::{content_hash, BlockCodec, CodeVector, Codec, CodecKind};
use crate::error::{Error, Result};
use crate::volume::{TsdfVolume, DEFAULT_TRUNCATION};

const MAGIC: &[u8; 4] = b"TSCM";
const VERSION: u32 = 1;
const MAX_INLINE_CODEC: usize = 1 << 31;

/// Default block-mean threshold above which a map block is stored as empty:
/// only blocks with (almost) no voxel below `d_max` qualify.
pub const DEFAULT_MAP_EMPTY_THRESHOLD: f64 = 0.999;

/// Volume geometry carried by a compressed map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub voxel_size: f32,
    pub origin: [f32; 3],
    pub d_min: f32,
    pub d_max: f32,
}

impl Geometry {
    pub fn of(vol: &TsdfVolume) -> Self {
        Self {
            dims: vol.dims(),
            voxel_size: vol.voxel_size(),
            origin: vol.origin(),
            d_min: vol.d_min(),
            d_max: vol.d_max(),
        }
    }

    /// A volume of this geometry filled with `d_max` at weight 0.
    pub fn empty_volume(&self) -> Result<TsdfVolume> {
        TsdfVolume::new(
            self.dims,
            self.voxel_size,
            self.origin,
            self.d_min,
            self.d_max,
        )
    }

    pub fn block_grid(&self) -> [usize; 3] {
        [self.dims[0] / 16, self.dims[1] / 16, self.dims[2] / 16]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressOptions {
    /// Blocks with mean above this are stored as empty flags.
    pub empty_threshold: f64,
    /// Embed the codec bytes in the map instead of only referencing them.
    pub inline_codec: bool,
    /// Truncation interval the codec was trained for; the volume must match.
    pub codec_truncation: (f32, f32),
}

impl Default for CompressOptions {
    fn default() -> Self {
        Self {
            empty_threshold: DEFAULT_MAP_EMPTY_THRESHOLD,
            inline_codec: false,
            codec_truncation: DEFAULT_TRUNCATION,
        }
    }
}

/// A compressed volume: one entry per full block, `None` for empty blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedMap {
    pub codec_kind: CodecKind,
    pub code_len: usize,
    pub codec_hash: [u8; 32],
    pub inline_codec: Option<Vec<u8>>,
    pub geometry: Geometry,
    pub empty_threshold: f32,
    pub blocks: Vec<Option<Vec<f32>>>,
}

/// Size accounting of a compressed map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeReport {
    pub total_blocks: usize,
    pub coded_blocks: usize,
    pub empty_blocks: usize,
    /// Code bytes of the coded blocks.
    pub payload_bytes: usize,
    /// Bytes the coded blocks take as raw f32 values.
    pub raw_payload_bytes: usize,
    /// `raw_payload_bytes / payload_bytes`; equals `4096 / code_len`.
    pub payload_ratio: f64,
    /// Everything in the file except the code payload.
    pub overhead_bytes: usize,
    pub file_bytes: usize,
}

impl CompressedMap {
    pub fn block_indices(&self) -> Vec<BlockIndex> {
        let [nx, ny, nz] = self.geometry.block_grid();
        let mut out = Vec::with_capacity(nx * ny * nz);
        for bz in 0..nz {
            for by in 0..ny {
                for bx in 0..nx {
                    out.push(BlockIndex::new(bx, by, bz));
                }
            }
        }
        out
    }

    /// The stored code of block `i`, if it is not empty.
    pub fn code(&self, i: usize) -> Option<CodeVector> {
        self.blocks[i]
            .as_ref()
            .map(|v| CodeVector::new(self.codec_kind, v.clone()))
    }

    pub fn size_report(&self) -> SizeReport {
        let coded = self.blocks.iter().filter(|b| b.is_some()).count();
        let payload = coded * self.code_len * 4;
        let raw = coded * BLOCK_LEN * 4;
        let file = self.to_bytes().len();
        SizeReport {
            total_blocks: self.blocks.len(),
            coded_blocks: coded,
            empty_blocks: self.blocks.len() - coded,
            payload_bytes: payload,
            raw_payload_bytes: raw,
            payload_ratio: BLOCK_LEN as f64 / self.code_len as f64,
            overhead_bytes: file - payload,
            file_bytes: file,
        }
    }

    /// The codec that decodes this map: the inline copy if present,
    /// otherwise `external`, which must match the stored content hash.
    pub fn resolve_codec(&self, external: Option<&Codec>) -> Result<Codec> {
        if let Some(bytes) = &self.inline_codec {
            if content_hash(bytes) != self.codec_hash {
                return Err(Error::Format("inline codec does not match its hash".into()));
            }
            return Codec::from_bytes(bytes);
        }
        match external {
            Some(c) if c.content_hash() == self.codec_hash => Ok(c.clone()),
            Some(_) => Err(Error::Format(
                "codec does not match the map's codec reference".into(),
            )),
            None => Err(Error::Format(
                "map references an external codec that was not supplied".into(),
            )),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        binio::write_magic(w, MAGIC, VERSION)?;
        binio::write_u8(w, self.codec_kind.tag())?;
        binio::write_u32(w, self.code_len as u32)?;
        w.write_all(&self.codec_hash)?;
        match &self.inline_codec {
            Some(bytes) => {
                binio::write_u8(w, 1)?;
                binio::write_bytes(w, bytes)?;
            }
            None => binio::write_u8(w, 0)?,
        }
        let g = &self.geometry;
        for d in g.dims {
            binio::write_u32(w, d as u32)?;
        }
        binio::write_f32(w, g.voxel_size)?;
        binio::write_f32s(w, &g.origin)?;
        binio::write_f32(w, g.d_min)?;
        binio::write_f32(w, g.d_max)?;
        binio::write_f32(w, self.empty_threshold)?;
        for b in &self.blocks {
            match b {
                None => binio::write_u8(w, 0)?,
                Some(code) => {
                    binio::write_u8(w, 1)?;
                    binio::write_f32s(w, code)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        binio::read_magic(r, MAGIC, VERSION)?;
        let codec_kind = CodecKind::from_tag(binio::read_u8(r)?)?;
        let code_len = binio::read_u32(r)? as usize;
        if code_len == 0 || code_len > BLOCK_LEN {
            return Err(Error::Format(format!("implausible code length {code_len}")));
        }
        let mut codec_hash = [0u8; 32];
        r.read_exact(&mut codec_hash)
            .map_err(binio::eof_as_format)?;
        let inline_codec = match binio::read_u8(r)? {
            0 => None,
            1 => Some(binio::read_bytes(r, MAX_INLINE_CODEC)?),
            f => return Err(Error::Format(format!("bad inline-codec flag {f}"))),
        };
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            *d = binio::read_u32(r)? as usize;
        }
        let voxel_size = binio::read_f32(r)?;
        let o = binio::read_f32s(r, 3)?;
        let d_min = binio::read_f32(r)?;
        let d_max = binio::read_f32(r)?;
        let geometry = Geometry {
            dims,
            voxel_size,
            origin: [o[0], o[1], o[2]],
            d_min,
            d_max,
        };
        // Validates the geometry the same way a volume would.
        TsdfVolume::new([1, 1, 1], voxel_size, geometry.origin, d_min, d_max)
            .map_err(|e| Error::Format(e.to_string()))?;
        let empty_threshold = binio::read_f32(r)?;
        let [nx, ny, nz] = geometry.block_grid();
        let count = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Error::Format("block grid overflows".into()))?;
        let mut blocks = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            blocks.push(match binio::read_u8(r)? {
                0 => None,
                1 => Some(binio::read_f32s(r, code_len)?),
                f => return Err(Error::Format(format!("bad block flag {f}"))),
            });
        }
        Ok(Self {
            codec_kind,
            code_len,
            codec_hash,
            inline_codec,
            geometry,
            empty_threshold,
            blocks,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to memory cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let map = Self::read_from(&mut cur)?;
        binio::expect_eof(&mut cur)?;
        Ok(map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Encodes every full block of `vol` whose mean does not exceed the empty threshold.
pub fn compress(vol: &TsdfVolume, codec: &Codec, opts: &CompressOptions) -> Result<CompressedMap> {
    let (lo, hi) = opts.codec_truncation;
    if vol.d_min() != lo || vol.d_max() != hi {
        return Err(Error::Config(format!(
            "volume truncation [{}, {}] does not match the codec's [{lo}, {hi}]",
            vol.d_min(),
            vol.d_max()
        )));
    }
    let bytes = codec.to_bytes();
    let mut blocks = Vec::new();
    for idx in vol.block_indices() {
        let block = vol.extract_block(idx)?;
        if block.mean() > opts.empty_threshold {
            blocks.push(None);
        } else {
            blocks.push(Some(codec.encode(&block)?.values));
        }
    }
    Ok(CompressedMap {
        codec_kind: codec.kind(),
        code_len: codec.code_len(),
        codec_hash: content_hash(&bytes),
        inline_codec: opts.inline_codec.then_some(bytes),
        geometry: Geometry::of(vol),
        empty_threshold: opts.empty_threshold as f32,
        blocks,
    })
}

/// Decodes the blocks selected by `flags` (all when `None`). Decoded and
/// selected empty blocks get weight 1; everything else stays `d_max` at weight 0.
pub fn decompress_selected(
    map: &CompressedMap,
    codec: &Codec,
    flags: Option<&[bool]>,
) -> Result<TsdfVolume> {
    if codec.kind() != map.codec_kind || codec.code_len() != map.code_len {
        return Err(Error::Format(format!(
            "map holds {} codes of length {}, codec is {} with length {}",
            map.codec_kind.name(),
            map.code_len,
            codec.kind().name(),
            codec.code_len()
        )));
    }
    if let Some(f) = flags {
        if f.len() != map.blocks.len() {
            return Err(Error::Config(format!(
                "{} flags for {} blocks",
                f.len(),
                map.blocks.len()
            )));
        }
    }
    let mut vol = map.geometry.empty_volume()?;
    for (i, idx) in map.block_indices().into_iter().enumerate() {
        if !flags.is_none_or(|f| f[i]) {
            continue;
        }
        if let Some(code) = map.code(i) {
            vol.insert_block(idx, &codec.decode(&code)?)?;
        }
        vol.set_block_weight(idx, 1.0)?;
    }
    Ok(vol)
}

pub fn decompress(map: &CompressedMap, codec: &Codec) -> Result<TsdfVolume> {
    decompress_selected(map, codec, None)
}

/// Per-block reconstruction error over the non-empty blocks of the original.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconReport {
    pub blocks: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub max_mse: f64,
    /// `(upper edge, count)` for decade bins up to 1; the last edge is +∞.
    pub histogram: Vec<(f64, usize)>,
    pub per_block: Vec<f64>,
}

impl ReconReport {
    pub fn to_key_values(&self) -> String {
        let mut s = format!(
            "blocks={}\nmean_mse={:e}\nstd_mse={:e}\nmax_mse={:e}\n",
            self.blocks, self.mean_mse, self.std_mse, self.max_mse
        );
        for (edge, count) in &self.histogram {
            s.push_str(&format!("hist_le_{edge:e}={count}\n"));
        }
        s
    }
}

/// Normalized-unit MSE of every block that is non-empty in `original`.
pub fn evaluate_recon(
    original: &TsdfVolume,
    recon: &TsdfVolume,
    empty_threshold: f64,
) -> Result<ReconReport> {
    if !original.same_geometry(recon) {
        return Err(Error::Config("volumes differ in geometry".into()));
    }
    let mut per_block = Vec::new();
    for idx in original.block_indices() {
        let a = original.extract_block(idx)?;
        if a.mean() > empty_threshold {
            continue;
        }
        per_block.push(a.mse(&recon.extract_block(idx)?));
    }
    let n = per_block.len();
    let mean = if n > 0 {
        per_block.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let var = if n > 0 {
        per_block.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64
    } else {
        0.0
    };
    let mut edges: Vec<f64> = (0..=8).rev().map(|k| 10f64.powi(-k)).collect();
    edges.push(f64::INFINITY);
    let mut histogram: Vec<(f64, usize)> = edges.iter().map(|&e| (e, 0)).collect();
    for &e in &per_block {
        let bin = edges
            .iter()
            .position(|&edge| e <= edge)
            .unwrap_or(edges.len() - 1);
        histogram[bin].1 += 1;
    }
    Ok(ReconReport {
        blocks: n,
        mean_mse: mean,
        std_mse: var.sqrt(),
        max_mse: per_block.iter().fold(0.0, |m, &e| m.max(e)),
        histogram,
        per_block,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::Block;
    use crate::pca::PcaCodec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn codec() -> Codec {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let blocks: Vec<Block> = (0..40)
            .map(|_| {
                let h: f32 = rng.random_range(2.0..14.0);
                Block::from_fn(|_, _, z| ((z as f32 - h) * 0.02 + 0.04) / 0.14)
            })
            .collect();
        Codec::Pca(PcaCodec::fit(&blocks, 7).unwrap())
    }

    fn floor_volume(n: usize) -> TsdfVolume {
        TsdfVolume::from_sdf([n, n, n], 0.02, [0.0; 3], -0.04, 0.1, |p| p.z - 0.13).unwrap()
    }

    #[test]
    fn round_trip_keeps_geometry_and_codes() {
        let vol = floor_volume(32);
        let c = codec();
        let map = compress(&vol, &c, &CompressOptions::default()).unwrap();
        assert_eq!(map.blocks.len(), 8);
        let bytes = map.to_bytes();
        let back = CompressedMap::from_bytes(&bytes).unwrap();
        assert_eq!(back, map);
        assert_eq!(back.to_bytes(), bytes);
        let out = decompress(&map, &c).unwrap();
        assert!(out.same_geometry(&vol));
    }

    #[test]
    fn container_adds_no_loss() {
        let vol = floor_volume(32);
        let c = codec();
        let map = compress(&vol, &c, &CompressOptions::default()).unwrap();
        let out = decompress(&map, &c).unwrap();
        for (i, idx) in vol.block_indices().into_iter().enumerate() {
            let original = vol.extract_block(idx).unwrap();
            let via_map = out.extract_block(idx).unwrap();
            match map.code(i) {
                Some(_) => {
                    let direct = c.reconstruct(&original).unwrap();
                    assert!((via_map.mse(&original) - direct.mse(&original)).abs() < 1e-9);
                }
                None => assert!(via_map.values().iter().all(|&v| v == 1.0)),
            }
        }
    }

    #[test]
    fn all_empty_volume_stores_only_flags() {
        let vol = TsdfVolume::new([32, 32, 32], 0.02, [0.0; 3], -0.04, 0.1).unwrap();
        let map = compress(&vol, &codec(), &CompressOptions::default()).unwrap();
        assert!(map.blocks.iter().all(|b| b.is_none()));
        let r = map.size_report();
        assert_eq!(r.payload_bytes, 0);
        assert_eq!(r.overhead_bytes, r.file_bytes);
        let out = decompress(&map, &codec()).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.1));
    }

    #[test]
    fn truncation_mismatch_is_config_error() {
        let vol = TsdfVolume::new([16, 16, 16], 0.02, [0.0; 3], -0.05, 0.1).unwrap();
        assert!(matches!(
            compress(&vol, &codec(), &CompressOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn codec_resolution() {
        let vol = floor_volume(16);
        let c = codec();
        let map = compress(&vol, &c, &CompressOptions::default()).unwrap();
        assert!(map.inline_codec.is_none());
        assert_eq!(map.resolve_codec(Some(&c)).unwrap(), c);
        assert!(matches!(map.resolve_codec(None), Err(Error::Format(_))));
        let other = Codec::Pca(
            PcaCodec::fit(
                &[Block::filled(0.2), Block::filled(0.3), Block::filled(0.5)],
                2,
            )
            .unwrap(),
        );
        assert!(matches!(
            map.resolve_codec(Some(&other)),
            Err(Error::Format(_))
        ));
        let inline = compress(
            &vol,
            &c,
            &CompressOptions {
                inline_codec: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(inline.resolve_codec(None).unwrap(), c);
        let mut bytes = inline.to_bytes();
        bytes[4 + 4] = 99;
        assert!(matches!(
            CompressedMap::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn payload_ratio_is_block_over_code_length() {
        let vol = floor_volume(32);
        let map = compress(&vol, &codec(), &CompressOptions::default()).unwrap();
        let r = map.size_report();
        assert_eq!(r.raw_payload_bytes, r.payload_bytes * BLOCK_LEN / 8);
        assert_eq!(r.payload_ratio, 512.0);
    }

    #[test]
    fn recon_report_examples() {
        let vol = floor_volume(32);
        let r = evaluate_recon(&vol, &vol, 0.85).unwrap();
        assert_eq!(r.mean_mse, 0.0);
        assert!(r.blocks > 0);
        // +0.01 in normalized units is 0.0014 m.
        let shifted = TsdfVolume::from_sdf([32, 32, 32], 0.02, [0.0; 3], -0.04, 0.1, |p| {
            p.z - 0.13 + 0.0014
        })
        .unwrap();
        let r = evaluate_recon(&vol, &shifted, 0.85).unwrap();
        assert!(r.mean_mse > 0.0);
        let other = TsdfVolume::new([16, 16, 16], 0.02, [0.0; 3], -0.04, 0.1).unwrap();
        assert!(evaluate_recon(&vol, &other, 0.85).is_err());
    }

    #[test]
    fn constant_offset_gives_square_mse() {
        let vol = TsdfVolume::from_sdf([16, 16, 16], 0.02, [0.0; 3], -0.04, 0.1, |_| 0.0).unwrap();
        let mut off = vol.clone();
        for k in 0..16 {
            for j in 0..16 {
                for i in 0..16 {
                    off.set(i, j, k, 0.0014, 1.0);
                }
            }
        }
        let r = evaluate_recon(&vol, &off, 0.85).unwrap();
        assert!((r.mean_mse - 1e-4).abs() < 1e-9, "{}", r.mean_mse);
    }
}
