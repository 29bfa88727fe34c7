//! Occupation probability profiles `f(x, t)` over the integer lattice.

use serde::{Deserialize, Serialize};

/// Real, nonnegative occupation probabilities over a contiguous block of
/// lattice sites. `values[i]` is the probability at `x = i - origin_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub values: Vec<f64>,
    pub origin_index: usize,
    pub time: usize,
}

/// First two moments about the origin plus the variance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
}

impl Moments {
    pub fn from_raw(mean: f64, second_moment: f64) -> Self {
        Moments {
            mean,
            second_moment,
            variance: second_moment - mean * mean,
        }
    }
}

impl Density {
    /// Delta at the origin, used for `t = 0`.
    pub fn delta(half_width: usize) -> Self {
        let mut values = vec![0.0; 2 * half_width + 1];
        values[half_width] = 1.0;
        Density {
            values,
            origin_index: half_width,
            time: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Lattice coordinate of array index `i`.
    #[inline]
    pub fn position(&self, i: usize) -> i64 {
        i as i64 - self.origin_index as i64
    }

    /// Probability at lattice site `x`; zero outside the stored block.
    pub fn at(&self, x: i64) -> f64 {
        let i = x + self.origin_index as i64;
        if i < 0 || i as usize >= self.values.len() {
            0.0
        } else {
            self.values[i as usize]
        }
    }

    pub fn min_position(&self) -> i64 {
        -(self.origin_index as i64)
    }

    pub fn max_position(&self) -> i64 {
        self.values.len() as i64 - 1 - self.origin_index as i64
    }

    /// `(x, f)` pairs in increasing `x`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &f)| (self.position(i), f))
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Copy of this density on the symmetric window `[-half_width, half_width]`.
    /// Sites outside the stored block read as zero.
    pub fn window(&self, half_width: usize) -> Density {
        let h = half_width as i64;
        let values = (-h..=h).map(|x| self.at(x)).collect();
        Density {
            values,
            origin_index: half_width,
            time: self.time,
        }
    }

    /// Mirror image `x -> -x`.
    pub fn mirrored(&self) -> Density {
        let mut values = self.values.clone();
        values.reverse();
        Density {
            origin_index: self.values.len() - 1 - self.origin_index,
            values,
            time: self.time,
        }
    }

    /// Largest `|x|` carrying nonzero probability.
    pub fn support_radius(&self) -> usize {
        self.iter()
            .filter(|&(_, f)| f > 0.0)
            .map(|(x, _)| x.unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    }

    /// Moments about `x = 0` (not about the mean).
    pub fn moments(&self) -> Moments {
        let (m1, m2) = self.iter().fold((0.0, 0.0), |(m1, m2), (x, f)| {
            let x = x as f64;
            (m1 + f * x, m2 + f * x * x)
        });
        Moments::from_raw(m1, m2)
    }
}

/// Moments of a normalized density about the origin.
pub fn moments_of(density: &Density) -> Moments {
    density.moments()
}
