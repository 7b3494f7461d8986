//! The 16³ normalized-distance block, the unit every codec works on.

use crate::error::{Error, Result};

/// Voxels along each edge of a block.
pub const BLOCK_EDGE: usize = 16;
/// Voxels in a block.
pub const BLOCK_LEN: usize = BLOCK_EDGE * BLOCK_EDGE * BLOCK_EDGE;

/// The six axis orderings used to generate reflected copies of a block.
/// Output voxel `c` reads input voxel `(c[p[0]], c[p[1]], c[p[2]])`.
const AXIS_PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Flat index of voxel `(x, y, z)` inside a block, x fastest.
#[inline]
pub fn voxel_index(x: usize, y: usize, z: usize) -> usize {
    x + BLOCK_EDGE * (y + BLOCK_EDGE * z)
}

/// 4096 normalized distances in `[0, 1]`, x fastest, then y, then z.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    values: Vec<f32>,
}

impl Block {
    /// Validates length and range.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != BLOCK_LEN {
            return Err(Error::Range(format!(
                "block needs {BLOCK_LEN} values, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Range(format!(
                "block value {v} at {i} outside [0, 1]"
            )));
        }
        Ok(Self { values })
    }

    /// Builds a block from arbitrary values by clamping them into `[0, 1]`.
    ///
    /// Non-finite inputs are rejected.
    pub fn from_clamped(mut values: Vec<f32>) -> Result<Self> {
        if values.len() != BLOCK_LEN {
            return Err(Error::Range(format!(
                "block needs {BLOCK_LEN} values, got {}",
                values.len()
            )));
        }
        for v in values.iter_mut() {
            if !v.is_finite() {
                return Err(Error::Numeric("non-finite block value".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { values })
    }

    pub fn filled(value: f32) -> Self {
        assert!(
            (0.0..=1.0).contains(&value),
            "fill value {value} outside [0, 1]"
        );
        Self {
            values: vec![value; BLOCK_LEN],
        }
    }

    /// Builds a block by evaluating `f(x, y, z)` at every voxel, clamping into `[0, 1]`.
    pub fn from_fn(mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut values = Vec::with_capacity(BLOCK_LEN);
        for z in 0..BLOCK_EDGE {
            for y in 0..BLOCK_EDGE {
                for x in 0..BLOCK_EDGE {
                    values.push(f(x, y, z).clamp(0.0, 1.0));
                }
            }
        }
        Self { values }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[voxel_index(x, y, z)]
    }

    /// Arithmetic mean of the 4096 values.
    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / BLOCK_LEN as f64
    }

    /// Re-indexes the voxels by one of the six axis orderings; id 0 is the identity.
    pub fn permute_axes(&self, permutation_id: usize) -> Result<Self> {
        let perm = AXIS_PERMUTATIONS.get(permutation_id).ok_or_else(|| {
            Error::Range(format!("axis permutation id {permutation_id} not in 0..6"))
        })?;
        let mut values = vec![0.0; BLOCK_LEN];
        for z in 0..BLOCK_EDGE {
            for y in 0..BLOCK_EDGE {
                for x in 0..BLOCK_EDGE {
                    let c = [x, y, z];
                    values[voxel_index(x, y, z)] = self.get(c[perm[0]], c[perm[1]], c[perm[2]]);
                }
            }
        }
        Ok(Self { values })
    }

    /// Mean squared difference to another block.
    pub fn mse(&self, other: &Block) -> f64 {
        mse(&self.values, &other.values)
    }
}

impl AsRef<[f32]> for Block {
    fn as_ref(&self) -> &[f32] {
        &self.values
    }
}

/// Id of the permutation that undoes `permutation_id`.
pub fn inverse_permutation(permutation_id: usize) -> Result<usize> {
    let p = AXIS_PERMUTATIONS
        .get(permutation_id)
        .ok_or_else(|| Error::Range(format!("axis permutation id {permutation_id} not in 0..6")))?;
    let mut q = [0usize; 3];
    for (i, &pi) in p.iter().enumerate() {
        q[pi] = i;
    }
    Ok(AXIS_PERMUTATIONS
        .iter()
        .position(|cand| *cand == q)
        .expect("permutation group is closed under inversion"))
}

/// Mean squared difference of two equally long slices.
pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    sum / a.len() as f64
}

/// Block coordinates inside a volume; the voxel offset is `16 * (bx, by, bz)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockIndex {
    pub bx: usize,
    pub by: usize,
    pub bz: usize,
}

impl BlockIndex {
    pub fn new(bx: usize, by: usize, bz: usize) -> Self {
        Self { bx, by, bz }
    }

    pub fn voxel_origin(&self) -> [usize; 3] {
        [
            self.bx * BLOCK_EDGE,
            self.by * BLOCK_EDGE,
            self.bz * BLOCK_EDGE,
        ]
    }
}
