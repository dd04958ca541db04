//! Permutations stored as index maps.
//!
//! `map[i]` is the destination position of source index `i`. Matrix forms of
//! permutations are never materialized; applying one is an O(n) gather or
//! scatter.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng64;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    map: Vec<usize>,
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Permutation").field(&self.map).finish()
    }
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).collect(),
        }
    }

    /// Validates that `map` is a bijection on `0..map.len()`.
    pub fn from_vec(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for (i, &dst) in map.iter().enumerate() {
            if dst >= n {
                return Err(Error::InvalidPermutation(format!(
                    "entry {i} maps to {dst}, outside 0..{n}"
                )));
            }
            if std::mem::replace(&mut seen[dst], true) {
                return Err(Error::InvalidPermutation(format!(
                    "destination {dst} appears twice"
                )));
            }
        }
        Ok(Self { map })
    }

    /// Fisher-Yates shuffle of `0..n` driven by `Rng64::new(seed)`.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyDomain);
        }
        let mut map: Vec<usize> = (0..n).collect();
        Rng64::new(seed).shuffle(&mut map);
        Ok(Self { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.map
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &p)| i == p)
    }

    /// `q` with `q[p[i]] = i`.
    #[must_use]
    pub fn invert(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &p) in self.map.iter().enumerate() {
            inv[p] = i;
        }
        Self { map: inv }
    }

    /// `r[i] = then[self[i]]`: apply `self` first, then `then`.
    pub fn compose(&self, then: &Permutation) -> Result<Self> {
        if self.len() != then.len() {
            return Err(Error::DimensionMismatch {
                context: "permutation compose",
                expected: self.len(),
                found: then.len(),
            });
        }
        Ok(Self {
            map: self.map.iter().map(|&i| then.map[i]).collect(),
        })
    }

    /// `out[i] = src[self[i]]`.
    pub fn gather<T: Copy>(&self, src: &[T]) -> Result<Vec<T>> {
        self.check_len(src.len(), "permutation gather")?;
        Ok(self.map.iter().map(|&i| src[i]).collect())
    }

    /// `out[self[i]] = src[i]`; the inverse of [`Permutation::gather`].
    pub fn scatter<T: Copy + Default>(&self, src: &[T]) -> Result<Vec<T>> {
        self.check_len(src.len(), "permutation scatter")?;
        let mut out = vec![T::default(); src.len()];
        for (&dst, &v) in self.map.iter().zip(src) {
            out[dst] = v;
        }
        Ok(out)
    }

    fn check_len(&self, found: usize, context: &'static str) -> Result<()> {
        if found != self.len() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.len(),
                found,
            });
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for Permutation {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.map[i]
    }
}
