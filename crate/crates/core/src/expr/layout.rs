use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;

use super::ExprError;

/// A named, contiguous run of variable slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub dim: usize,
    pub offset: usize,
}

/// Ordered variable blocks; `x[2]` always maps to the same slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    blocks: Vec<Block>,
    total_dim: usize,
}

impl BlockLayout {
    pub fn new(blocks: &[(&str, usize)]) -> Result<Self, ExprError> {
        let mut out: Vec<Block> = Vec::with_capacity(blocks.len());
        let mut offset = 0;
        for &(name, dim) in blocks {
            if !is_identifier(name) {
                return Err(ExprError::Layout(alloc::format!("invalid block name `{name}`")));
            }
            if dim == 0 {
                return Err(ExprError::Layout(alloc::format!("block `{name}` has dimension 0")));
            }
            if out.iter().any(|b| b.name == name) {
                return Err(ExprError::Layout(alloc::format!("duplicate block `{name}`")));
            }
            out.push(Block { name: name.to_string(), dim, offset });
            offset += dim;
        }
        if out.is_empty() {
            return Err(ExprError::Layout("layout has no blocks".into()));
        }
        Ok(Self { blocks: out, total_dim: offset })
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.block(name).map(|b| b.offset..b.offset + b.dim)
    }

    pub fn dim(&self, name: &str) -> usize {
        self.block(name).map_or(0, |b| b.dim)
    }

    /// Slot of `name[index]` with 1-based `index`.
    pub fn slot(&self, name: &str, index: usize) -> Option<usize> {
        let b = self.block(name)?;
        (index >= 1 && index <= b.dim).then(|| b.offset + index - 1)
    }

    /// Inverse of [`slot`](Self::slot): block and 1-based index.
    pub fn locate(&self, slot: usize) -> Option<(&Block, usize)> {
        self.blocks
            .iter()
            .find(|b| slot >= b.offset && slot < b.offset + b.dim)
            .map(|b| (b, slot - b.offset + 1))
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
