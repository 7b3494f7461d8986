//! Code vectors, the common codec interface and codec file dispatch.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autoencoder::MlpAutoencoder;
use crate::block::Block;
use crate::error::{Error, Result};
use crate::hybrid::{ParallelCodec, SequentialCodec};
use crate::pca::PcaCodec;

/// Which codec produced a code vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CodecKind {
    Pca,
    Autoencoder,
    Parallel,
    Sequential,
}

impl CodecKind {
    pub fn tag(self) -> u8 {
        match self {
            CodecKind::Pca => 1,
            CodecKind::Autoencoder => 2,
            CodecKind::Parallel => 3,
            CodecKind::Sequential => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            1 => CodecKind::Pca,
            2 => CodecKind::Autoencoder,
            3 => CodecKind::Parallel,
            4 => CodecKind::Sequential,
            _ => return Err(Error::Format(format!("unknown codec id {tag}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CodecKind::Pca => "pca",
            CodecKind::Autoencoder => "autoencoder",
            CodecKind::Parallel => "parallel",
            CodecKind::Sequential => "sequential",
        }
    }
}

/// A fixed-length block code tagged with the codec family that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeVector {
    pub kind: CodecKind,
    pub values: Vec<f32>,
}

impl CodeVector {
    pub fn new(kind: CodecKind, values: Vec<f32>) -> Self {
        Self { kind, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Squared Euclidean distance over the first `min(len(a), len(b))` entries.
///
/// Only defined for PCA codes, whose nested bases make prefixes comparable.
pub fn prefix_distance(a: &CodeVector, b: &CodeVector) -> Result<f64> {
    if a.kind != CodecKind::Pca || b.kind != CodecKind::Pca {
        return Err(Error::UnsupportedComparison(format!(
            "prefix distance needs PCA codes, got {} and {}",
            a.kind.name(),
            b.kind.name()
        )));
    }
    let n = a.len().min(b.len());
    Ok(squared_distance(&a.values[..n], &b.values[..n]))
}

/// Descriptor distance: prefix rule for PCA codes, plain squared distance
/// for equal-length codes of any other single family.
pub fn code_distance(a: &CodeVector, b: &CodeVector) -> Result<f64> {
    if a.kind == CodecKind::Pca && b.kind == CodecKind::Pca {
        return prefix_distance(a, b);
    }
    if a.kind != b.kind || a.len() != b.len() {
        return Err(Error::UnsupportedComparison(format!(
            "cannot compare {} code of length {} with {} code of length {}",
            a.kind.name(),
            a.len(),
            b.kind.name(),
            b.len()
        )));
    }
    Ok(squared_distance(&a.values, &b.values))
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Common interface of every block codec.
pub trait BlockCodec {
    fn kind(&self) -> CodecKind;

    fn code_len(&self) -> usize;

    fn encode(&self, block: &Block) -> Result<CodeVector>;

    fn decode(&self, code: &CodeVector) -> Result<Block>;

    fn reconstruct(&self, block: &Block) -> Result<Block> {
        self.decode(&self.encode(block)?)
    }

    /// Checks the tag and length of a code handed to `decode`.
    fn check_code(&self, code: &CodeVector) -> Result<()> {
        if code.kind != self.kind() || code.len() != self.code_len() {
            return Err(Error::Codec(format!(
                "{} codec expects a {} code of length {}, got {} of length {}",
                self.kind().name(),
                self.kind().name(),
                self.code_len(),
                code.kind.name(),
                code.len()
            )));
        }
        Ok(())
    }
}

/// Any codec, as read from a codec file.
#[derive(Clone, Debug, PartialEq)]
pub enum Codec {
    Pca(PcaCodec),
    Autoencoder(MlpAutoencoder),
    Parallel(ParallelCodec),
    Sequential(SequentialCodec),
}

impl Codec {
    pub fn as_block_codec(&self) -> &dyn BlockCodec {
        match self {
            Codec::Pca(c) => c,
            Codec::Autoencoder(c) => c,
            Codec::Parallel(c) => c,
            Codec::Sequential(c) => c,
        }
    }

    pub fn kind(&self) -> CodecKind {
        self.as_block_codec().kind()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        match self {
            Codec::Pca(c) => c.write_to(w),
            Codec::Autoencoder(c) => c.write_to(w),
            Codec::Parallel(c) => c.write_to(w),
            Codec::Sequential(c) => c.write_to(w),
        }
    }

    /// Dispatches on the four-byte magic tag.
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Format("codec file too short".into()));
        }
        let mut cur = Cursor::new(bytes);
        let codec = match &bytes[..4] {
            b"PCAC" => Codec::Pca(PcaCodec::read_from(&mut cur)?),
            b"AENC" => Codec::Autoencoder(MlpAutoencoder::read_from(&mut cur)?),
            b"HYBC" => match SequentialCodec::peek_mode(bytes)? {
                false => Codec::Parallel(ParallelCodec::read_from(&mut cur)?),
                true => Codec::Sequential(SequentialCodec::read_from(&mut cur)?),
            },
            other => {
                return Err(Error::Format(format!(
                    "unknown codec magic {:?}",
                    String::from_utf8_lossy(other)
                )))
            }
        };
        crate::binio::expect_eof(&mut cur)?;
        Ok(codec)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to memory cannot fail");
        buf
    }

    /// SHA-256 of the serialized codec, used to reference shared codebooks.
    pub fn content_hash(&self) -> [u8; 32] {
        content_hash(&self.to_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl BlockCodec for Codec {
    fn kind(&self) -> CodecKind {
        self.as_block_codec().kind()
    }

    fn code_len(&self) -> usize {
        self.as_block_codec().code_len()
    }

    fn encode(&self, block: &Block) -> Result<CodeVector> {
        self.as_block_codec().encode(block)
    }

    fn decode(&self, code: &CodeVector) -> Result<Block> {
        self.as_block_codec().decode(code)
    }
}

pub fn content_hash(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pca(v: Vec<f32>) -> CodeVector {
        CodeVector::new(CodecKind::Pca, v)
    }

    #[test]
    fn prefix_distance_examples() {
        let a = pca(vec![0.3; 32]);
        assert_eq!(prefix_distance(&a, &a).unwrap(), 0.0);
        let mut e0 = vec![0.0; 32];
        e0[0] = 1.0;
        let mut e1 = vec![0.0; 32];
        e1[1] = 1.0;
        assert_eq!(prefix_distance(&pca(e0.clone()), &pca(e1)).unwrap(), 2.0);
        let mut long = e0.clone();
        long.extend(std::iter::repeat(5.0).take(32));
        assert_eq!(prefix_distance(&pca(e0), &pca(long)).unwrap(), 0.0);
    }

    #[test]
    fn non_pca_prefix_is_unsupported() {
        let a = CodeVector::new(CodecKind::Autoencoder, vec![0.0; 32]);
        assert!(matches!(
            prefix_distance(&a, &pca(vec![0.0; 32])),
            Err(Error::UnsupportedComparison(_))
        ));
        assert!(matches!(
            code_distance(&a, &pca(vec![0.0; 32])),
            Err(Error::UnsupportedComparison(_))
        ));
        let b = CodeVector::new(CodecKind::Autoencoder, vec![1.0; 32]);
        assert_eq!(code_distance(&a, &b).unwrap(), 32.0);
    }

    #[test]
    fn kind_tags_round_trip() {
        for k in [
            CodecKind::Pca,
            CodecKind::Autoencoder,
            CodecKind::Parallel,
            CodecKind::Sequential,
        ] {
            assert_eq!(CodecKind::from_tag(k.tag()).unwrap(), k);
        }
        assert!(matches!(CodecKind::from_tag(0), Err(Error::Format(_))));
    }
}
