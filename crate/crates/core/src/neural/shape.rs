use std::fmt;

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

/// Per-sample tensor shape. Rank-3 shapes are `height x width x channels`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::Shape(format!("rank must be 1..={MAX_RANK}, got {dims:?}")));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {dims:?}")));
        }
        Ok(Self(dims))
    }

    pub fn vector(len: usize) -> Result<Self> {
        Self::new(vec![len])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn size(&self) -> usize {
        self.0.iter().product()
    }

    /// `(height, width, channels)` of a rank-3 shape.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match self.0.as_slice() {
            [h, w, c] => Ok((*h, *w, *c)),
            _ => Err(Error::Shape(format!("expected HxWxC, got {self}"))),
        }
    }

    /// Channel count for per-channel ops: the last dim of a rank-3 shape,
    /// or the full length of a flat one.
    pub fn channels(&self) -> usize {
        match self.0.as_slice() {
            [_, _, c] => *c,
            _ => self.size(),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}
