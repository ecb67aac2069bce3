use ndarray::Array2;

use super::{FeatureKind, SpectralSequence};

/// One `D x W` context block per source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SplicedSequence {
    pub blocks: Vec<Array2<f64>>,
    pub source_kind: FeatureKind,
    pub left: usize,
    pub right: usize,
}

impl SplicedSequence {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn width(&self) -> usize {
        self.left + 1 + self.right
    }

    /// `(D, W)` of every block.
    pub fn block_shape(&self) -> (usize, usize) {
        self.blocks[0].dim()
    }
}

/// Stacks `left` past and `right` future frames around every frame.
///
/// Column `j` of block `t` is source frame `t - left + j`, with indices
/// clamped into `0..T` so that edge frames are replicated.
pub fn splice(s: &SpectralSequence, left: usize, right: usize) -> SplicedSequence {
    let t_len = s.num_frames();
    let width = left + 1 + right;
    let blocks = (0..t_len)
        .map(|t| {
            Array2::from_shape_fn((s.dim(), width), |(d, j)| {
                let src = (t + j).saturating_sub(left).min(t_len - 1);
                s.frames[[src, d]]
            })
        })
        .collect();
    SplicedSequence {
        blocks,
        source_kind: s.kind,
        left,
        right,
    }
}
