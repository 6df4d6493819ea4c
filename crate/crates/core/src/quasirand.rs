//! Sobol low-discrepancy points and their mapping into metaparameter ranges.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest dimension with embedded direction numbers.
pub const MAX_DIMENSION: usize = 8;

const BITS: usize = 32;

/// Primitive-polynomial parameters `(degree s, coefficient bits a, initial m_1..m_s)`
/// for dimensions 2..=8, from the Joe-Kuo `new-joe-kuo-6.21201` table.
/// Dimension 1 uses the van der Corput directions `m_k = 1`.
/// Table version: 1.
const DIRECTION_TABLE: [(u32, u32, &[u32]); MAX_DIMENSION - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
];

fn directions(dim_index: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim_index == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1u32 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, m) = DIRECTION_TABLE[dim_index - 1];
    let s = s as usize;
    for k in 0..s {
        v[k] = m[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                x ^= v[k - j];
            }
        }
        v[k] = x;
    }
    v
}

/// Gray-code Sobol generator. The all-zeros point at index 0 is never emitted.
#[derive(Debug, Clone)]
pub struct SobolState {
    dimension: usize,
    index: u64,
    state: Vec<u32>,
    directions: Vec<[u32; BITS]>,
}

impl SobolState {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 || dimension > MAX_DIMENSION {
            return Err(Error::config(format!(
                "sobol dimension must be in 1..={MAX_DIMENSION}, got {dimension}"
            )));
        }
        Ok(SobolState {
            dimension,
            index: 0,
            state: vec![0; dimension],
            directions: (0..dimension).map(directions).collect(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Index of the next point to be emitted (the first is 1).
    pub fn next_index(&self) -> u64 {
        self.index + 1
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        // rightmost zero bit of the current index picks the direction to flip
        let c = self.index.trailing_ones() as usize;
        assert!(c < BITS, "sobol sequence exhausted after 2^32 - 1 points");
        for (x, v) in self.state.iter_mut().zip(&self.directions) {
            *x ^= v[c];
        }
        self.index += 1;
        const SCALE: f64 = 1.0 / (1u64 << BITS) as f64;
        self.state.iter().map(|&x| x as f64 * SCALE).collect()
    }

    /// The next `count` points.
    pub fn take(&mut self, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.next_point()).collect()
    }
}

pub fn sobol_next(state: &mut SobolState) -> Vec<f64> {
    state.next_point()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Linear,
    Log10,
    /// Uniform in `log10(1 - x)`; concentrates samples near 1 (momentum).
    OneMinusLog10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub name: String,
    pub scale: Scale,
    pub lower: f64,
    pub upper: f64,
}

impl SearchSpace {
    pub fn new(name: impl Into<String>, scale: Scale, lower: f64, upper: f64) -> Self {
        SearchSpace {
            name: name.into(),
            scale,
            lower,
            upper,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower < self.upper) || !self.lower.is_finite() || !self.upper.is_finite() {
            return Err(Error::config(format!(
                "search space '{}' needs lower < upper, got [{}, {}]",
                self.name, self.lower, self.upper
            )));
        }
        match self.scale {
            Scale::Log10 if self.lower <= 0.0 => Err(Error::config(format!(
                "log10 search space '{}' needs positive bounds",
                self.name
            ))),
            Scale::OneMinusLog10 if self.upper >= 1.0 => Err(Error::config(format!(
                "one-minus-log10 search space '{}' needs bounds below 1",
                self.name
            ))),
            _ => Ok(()),
        }
    }

    /// Maps `u` in `[0, 1)` into the range; `u = 0` returns the lower bound exactly.
    pub fn map(&self, u: f64) -> f64 {
        if u == 0.0 {
            return self.lower;
        }
        match self.scale {
            Scale::Linear => self.lower + u * (self.upper - self.lower),
            Scale::Log10 => {
                let (lo, hi) = (self.lower.log10(), self.upper.log10());
                10f64.powf(lo + u * (hi - lo))
            }
            Scale::OneMinusLog10 => {
                let (lo, hi) = ((1.0 - self.lower).log10(), (1.0 - self.upper).log10());
                1.0 - 10f64.powf(lo + u * (hi - lo))
            }
        }
    }
}

/// Named metaparameter values of one trial, ordered by name.
pub type Metaparams = BTreeMap<String, f64>;

pub fn map_to_space(point: &[f64], spaces: &[SearchSpace]) -> Result<Metaparams> {
    if point.len() != spaces.len() {
        return Err(Error::config(format!(
            "point has {} coordinates for {} search spaces",
            point.len(),
            spaces.len()
        )));
    }
    let mut out = Metaparams::new();
    for (u, space) in point.iter().zip(spaces) {
        space.validate()?;
        out.insert(space.name.clone(), space.map(*u));
    }
    Ok(out)
}
