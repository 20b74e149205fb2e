//! Flat parameter storage with a deterministic name to slice index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use zsim_core::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform {
        fan_in: usize,
    },
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

impl ParamLayout {
    pub(crate) fn push(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let offset = self.total;
        self.entries.push(ParamEntry {
            name,
            offset,
            rows,
            cols,
            init,
        });
        self.total += rows * cols;
        offset
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Entries whose name starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a ParamEntry> + 'a {
        self.entries
            .iter()
            .filter(move |e| e.name.starts_with(prefix))
    }

    /// Fresh parameters, deterministic in `seed`. Draws happen in entry order in
    /// double precision, so `f32` and `f64` models agree up to rounding.
    pub fn init<R: Real>(&self, seed: u64) -> Vec<R> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![R::zero(); self.total];
        for e in &self.entries {
            let slot = &mut out[e.range()];
            match e.init {
                Init::Uniform { fan_in } => {
                    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
                    for v in slot {
                        *v = R::lit(rng.gen_range(-a..a));
                    }
                }
                Init::Ones => slot.fill(R::one()),
                Init::Zeros => slot.fill(R::zero()),
            }
        }
        out
    }
}
