//! Brute-force references for small instances.
//!
//! [`dense_evolve`] builds the full one-tick unitary `T(ell) (I x C)` as an
//! explicit matrix over `(position, chirality)` pairs and multiplies it into
//! the state vector. [`exact_ensemble`] replaces Monte Carlo sampling of the
//! step sequence by a weighted sum over every possible sequence.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::density::Density;
use crate::ensemble::{EnsembleResult, RunConfig};
use crate::error::{Result, WalkError};
use crate::schedule::StepSchedule;
use crate::walk::{evolve, CoinOperator, InitialSpinor, WalkerState};

/// Longest sequence accepted by [`dense_evolve`].
pub const DENSE_MAX_TICKS: usize = 12;
/// Longest walk accepted by [`exact_ensemble`] (`2^16` sequences).
pub const EXACT_MAX_TICKS: usize = 16;

/// Truncated `(position, chirality)` basis covering the light cone.
/// Basis index of `(x, c)` is `2 (x + half_width) + c`, with `c = 0` for `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncatedHilbert {
    pub half_width: usize,
}

impl TruncatedHilbert {
    pub fn for_light_cone(l_max: usize, ticks: usize) -> Self {
        TruncatedHilbert {
            half_width: l_max * ticks,
        }
    }

    pub fn sites(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn dimension(&self) -> usize {
        2 * self.sites()
    }

    fn index(&self, site: usize, chirality: usize) -> usize {
        2 * site + chirality
    }

    /// Explicit one-tick unitary `T(ell) (I x C)`. The shift wraps around
    /// the truncated lattice, which keeps the matrix a permutation; walks
    /// that stay inside the light cone never touch the seam.
    pub fn step_unitary(&self, coin: &CoinOperator, ell: usize) -> DMatrix<Complex64> {
        let n = self.sites();
        let d = self.dimension();
        let c = coin.entries();
        let mut coin_part = DMatrix::<Complex64>::zeros(d, d);
        for site in 0..n {
            for (a, row) in c.iter().enumerate() {
                for (b, &v) in row.iter().enumerate() {
                    coin_part[(self.index(site, a), self.index(site, b))] = v;
                }
            }
        }
        let mut shift = DMatrix::<Complex64>::zeros(d, d);
        let one = Complex64::new(1.0, 0.0);
        for site in 0..n {
            let left_to = (site + n - ell % n) % n;
            let right_to = (site + ell) % n;
            shift[(self.index(left_to, 0), self.index(site, 0))] = one;
            shift[(self.index(right_to, 1), self.index(site, 1))] = one;
        }
        shift * coin_part
    }
}

/// Largest entrywise deviation of `U U^dagger` from the identity.
pub fn unitarity_deviation(u: &DMatrix<Complex64>) -> f64 {
    let prod = u * u.adjoint();
    let mut worst: f64 = 0.0;
    for i in 0..prod.nrows() {
        for j in 0..prod.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((prod[(i, j)] - target).norm());
        }
    }
    worst
}

/// Evolve `config.spinor` through `sequence` by explicit matrix products.
pub fn dense_evolve(config: &RunConfig, sequence: &[usize]) -> Result<WalkerState> {
    if sequence.len() > DENSE_MAX_TICKS {
        return Err(WalkError::Refused(format!(
            "dense oracle is limited to {DENSE_MAX_TICKS} ticks, got {}",
            sequence.len()
        )));
    }
    if sequence.contains(&0) {
        return Err(WalkError::InvalidArgument("step lengths must be >= 1".into()));
    }
    let l_max = sequence
        .iter()
        .copied()
        .max()
        .unwrap_or(1)
        .max(config.l_max());
    let space = TruncatedHilbert::for_light_cone(l_max, sequence.len().max(1));
    let h = space.half_width;
    let mut psi = DVector::<Complex64>::zeros(space.dimension());
    psi[space.index(h, 0)] = config.spinor.a0;
    psi[space.index(h, 1)] = config.spinor.b0;
    let mut unitaries: std::collections::HashMap<usize, DMatrix<Complex64>> = Default::default();
    for &ell in sequence {
        let u = unitaries
            .entry(ell)
            .or_insert_with(|| space.step_unitary(&config.coin, ell));
        psi = &*u * psi;
    }
    let left: Vec<Complex64> = (0..space.sites()).map(|s| psi[space.index(s, 0)]).collect();
    let right: Vec<Complex64> = (0..space.sites()).map(|s| psi[space.index(s, 1)]).collect();
    WalkerState::from_amplitudes(&left, &right, sequence.len())
}

/// Every step sequence of length `ticks` in lexicographic order (tick 1 most
/// significant, short step before long step) with its probability.
/// Sequences of zero probability are included.
pub fn enumerate_sequences(alpha: f64, n: u32, ticks: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    StepSchedule::random(alpha, n)?;
    if ticks > EXACT_MAX_TICKS {
        return Err(WalkError::Refused(format!(
            "exact enumeration is limited to {EXACT_MAX_TICKS} ticks, got {ticks}"
        )));
    }
    let long = 1usize << n;
    Ok((0u64..1 << ticks)
        .map(|code| {
            let seq: Vec<usize> = (0..ticks)
                .map(|k| {
                    if code >> (ticks - 1 - k) & 1 == 0 {
                        1
                    } else {
                        long
                    }
                })
                .collect();
            let longs = code.count_ones() as i32;
            let weight = alpha.powi(ticks as i32 - longs) * (1.0 - alpha).powi(longs);
            (seq, weight)
        })
        .collect())
}

/// Exact disorder average of `f(x, t_max)` for a random two-point schedule,
/// on `[-l_max t_max, l_max t_max]`.
pub fn exact_ensemble(config: &RunConfig) -> Result<Density> {
    let StepSchedule::RandomTwoPoint { alpha, n } = config.schedule else {
        return Err(WalkError::InvalidArgument(
            "exact ensemble needs a random two-point schedule".into(),
        ));
    };
    let t = config.t_max;
    let sequences = enumerate_sequences(alpha, n, t)?;
    let half_width = config.l_max() * t;
    let len = 2 * half_width + 1;
    let mut sum = vec![0.0; len];
    let mut comp = vec![0.0; len];
    for (seq, weight) in sequences {
        if weight == 0.0 {
            continue;
        }
        let state = evolve(config.spinor, &config.coin, &seq)?;
        let f = state.occupation_window(half_width);
        for (i, &v) in f.values.iter().enumerate() {
            let term = weight * v;
            let s = sum[i];
            let next = s + term;
            comp[i] += if s.abs() >= term.abs() {
                (s - next) + term
            } else {
                (term - next) + s
            };
            sum[i] = next;
        }
    }
    Ok(Density {
        values: sum.iter().zip(&comp).map(|(s, c)| s + c).collect(),
        origin_index: half_width,
        time: t,
    })
}

/// Per-site agreement between an exact density and a Monte Carlo estimate.
#[derive(Debug, Clone, Serialize)]
pub struct ZReport {
    pub sites: Vec<SiteZ>,
    pub max_abs_z: f64,
    /// Fraction of compared sites with `|z| > 2`.
    pub frac_above_two: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SiteZ {
    pub x: i64,
    pub exact: f64,
    pub monte_carlo: f64,
    pub stderr: f64,
    pub z: f64,
}

/// Standard errors below this are treated as zero variance.
const SE_FLOOR: f64 = 1e-14;

/// z-scores of the Monte Carlo snapshot at `exact.time` against `exact`.
/// Sites where both the exact value and the sample variance vanish are skipped.
pub fn compare_with_monte_carlo(exact: &Density, mc: &EnsembleResult) -> Result<ZReport> {
    let k = mc
        .densities
        .iter()
        .position(|d| d.time == exact.time)
        .ok_or_else(|| {
            WalkError::InvalidArgument(format!("no Monte Carlo snapshot at t = {}", exact.time))
        })?;
    let density = &mc.densities[k];
    let stderr = &mc.density_stderr[k];
    let mut sites = Vec::new();
    for (i, &m) in density.values.iter().enumerate() {
        let x = density.position(i);
        let e = exact.at(x);
        let se = stderr[i];
        let diff = m - e;
        let z = if se > SE_FLOOR {
            diff / se
        } else if diff.abs() < 1e-12 {
            if e == 0.0 {
                continue;
            }
            0.0
        } else {
            f64::INFINITY
        };
        sites.push(SiteZ {
            x,
            exact: e,
            monte_carlo: m,
            stderr: se,
            z,
        });
    }
    let max_abs_z = sites.iter().map(|s| s.z.abs()).fold(0.0, f64::max);
    let frac_above_two = if sites.is_empty() {
        0.0
    } else {
        sites.iter().filter(|s| s.z.abs() > 2.0).count() as f64 / sites.len() as f64
    };
    Ok(ZReport {
        sites,
        max_abs_z,
        frac_above_two,
    })
}

/// Largest per-amplitude deviation between two states over the union of
/// their lattices.
pub fn max_amplitude_deviation(a: &WalkerState, b: &WalkerState) -> f64 {
    let r = a.capacity().max(b.capacity()) as i64;
    (-r..=r)
        .map(|x| {
            let (al, ar) = a.amplitude(x);
            let (bl, br) = b.amplitude(x);
            (al - bl).norm().max((ar - br).norm())
        })
        .fold(0.0, f64::max)
}

/// Default spinor/coin config for oracle runs on `schedule`.
pub fn oracle_config(schedule: StepSchedule, t_max: usize) -> RunConfig {
    RunConfig::new(schedule, t_max)
        .with_spinor(InitialSpinor::asymmetric())
        .with_coin(CoinOperator::hadamard())
        .with_snapshots(vec![t_max])
}
