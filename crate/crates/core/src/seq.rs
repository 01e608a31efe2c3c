//! RNA sequences and the single-position flip action space.
//!
//! A sequence is a fixed-length word over `{A, C, G, U}`. The one atomic
//! edit is a [`FlipAction`]: replace the base at one position with one of
//! the other three. Base order is fixed as `A < C < G < U` everywhere
//! (enumeration, one-hot layout, action slots) so that every consumer sees
//! the same deterministic ordering.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SeqError {
    #[error("invalid base {found:?} at position {position}")]
    InvalidBase { position: usize, found: char },
    #[error("sequence must be non-empty")]
    EmptySequence,
    #[error("flip at position {position} targets the current base")]
    SelfFlip { position: usize },
    #[error("position {position} out of range for length {len}")]
    OutOfRange { position: usize, len: usize },
}

/// One of the four RNA bases, ordered `A < C < G < U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Base {
    A,
    C,
    G,
    U,
}

impl Base {
    pub const ALL: [Base; 4] = [Base::A, Base::C, Base::G, Base::U];

    /// Index under the fixed `A,C,G,U` ordering.
    pub fn index(self) -> usize {
        match self {
            Base::A => 0,
            Base::C => 1,
            Base::G => 2,
            Base::U => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Base> {
        Base::ALL.get(i).copied()
    }

    pub fn from_char(c: char) -> Option<Base> {
        match c.to_ascii_uppercase() {
            'A' => Some(Base::A),
            'C' => Some(Base::C),
            'G' => Some(Base::G),
            'U' => Some(Base::U),
            _ => None,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Base::A => 'A',
            Base::C => 'C',
            Base::G => 'G',
            Base::U => 'U',
        }
    }

    /// The three bases this one can flip to, in ascending order.
    pub fn others(self) -> [Base; 3] {
        let mut out = [Base::A; 3];
        let mut k = 0;
        for b in Base::ALL {
            if b != self {
                out[k] = b;
                k += 1;
            }
        }
        out
    }
}

/// A fixed-length RNA sequence; the environment state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RnaSequence {
    bases: Vec<Base>,
}

impl RnaSequence {
    pub fn new(bases: Vec<Base>) -> Result<Self, SeqError> {
        if bases.is_empty() {
            return Err(SeqError::EmptySequence);
        }
        Ok(RnaSequence { bases })
    }

    /// Parses text into a sequence. Case-insensitive; any character outside
    /// `{A,C,G,U}` is rejected with its position.
    pub fn parse(text: &str) -> Result<Self, SeqError> {
        if text.is_empty() {
            return Err(SeqError::EmptySequence);
        }
        let mut bases = Vec::with_capacity(text.len());
        for (i, c) in text.chars().enumerate() {
            match Base::from_char(c) {
                Some(b) => bases.push(b),
                None => return Err(SeqError::InvalidBase { position: i, found: c }),
            }
        }
        Ok(RnaSequence { bases })
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn base(&self, i: usize) -> Base {
        self.bases[i]
    }

    pub fn bases(&self) -> &[Base] {
        &self.bases
    }

    /// Draws a sequence of length `len` with each position i.i.d. uniform
    /// over the four bases.
    pub fn random<R: Rng>(rng: &mut R, len: usize) -> Result<Self, SeqError> {
        if len == 0 {
            return Err(SeqError::EmptySequence);
        }
        let bases = (0..len)
            .map(|_| Base::from_index(rng.gen_range(0..4)).unwrap())
            .collect();
        Ok(RnaSequence { bases })
    }

    /// Applies a flip, returning the edited sequence. The flip must change
    /// the base at its position.
    pub fn apply(&self, action: FlipAction) -> Result<Self, SeqError> {
        if action.position >= self.len() {
            return Err(SeqError::OutOfRange {
                position: action.position,
                len: self.len(),
            });
        }
        if self.bases[action.position] == action.target {
            return Err(SeqError::SelfFlip {
                position: action.position,
            });
        }
        let mut bases = self.bases.clone();
        bases[action.position] = action.target;
        Ok(RnaSequence { bases })
    }

    /// All `3L` flips that change the sequence, position-major with targets
    /// in ascending base order.
    pub fn valid_actions(&self) -> Vec<FlipAction> {
        let mut out = Vec::with_capacity(3 * self.len());
        for (pos, &b) in self.bases.iter().enumerate() {
            for target in b.others() {
                out.push(FlipAction { position: pos, target });
            }
        }
        out
    }

    /// One-hot encoding: per position a length-4 block with a single 1 in
    /// the slot of that position's base.
    pub fn one_hot(&self) -> OneHot {
        let mut values = vec![0.0; 4 * self.len()];
        for (pos, &b) in self.bases.iter().enumerate() {
            values[pos * 4 + b.index()] = 1.0;
        }
        OneHot { values }
    }

    /// Per-slot validity over the `4L` network output layout: slot
    /// `4*pos + base` is valid iff flipping to `base` changes position `pos`.
    pub fn slot_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; 4 * self.len()];
        for (pos, &b) in self.bases.iter().enumerate() {
            mask[pos * 4 + b.index()] = false;
        }
        mask
    }
}

impl fmt::Display for RnaSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bases {
            write!(f, "{}", b.to_char())?;
        }
        Ok(())
    }
}

impl FromStr for RnaSequence {
    type Err = SeqError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RnaSequence::parse(s)
    }
}

/// Substitute the base at `position` with `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlipAction {
    pub position: usize,
    pub target: Base,
}

impl FlipAction {
    pub fn new(position: usize, target: Base) -> Self {
        FlipAction { position, target }
    }

    /// Index into the `4L` network output layout.
    pub fn slot(&self) -> usize {
        self.position * 4 + self.target.index()
    }

    /// Inverse of [`FlipAction::slot`].
    pub fn from_slot(slot: usize) -> Self {
        FlipAction {
            position: slot / 4,
            target: Base::from_index(slot % 4).unwrap(),
        }
    }
}

/// Real vector of length `4L` with one 1 per length-4 block.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHot {
    values: Vec<f64>,
}

impl OneHot {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for OneHot {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}
