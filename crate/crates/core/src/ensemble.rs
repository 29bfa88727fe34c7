//! Disorder averaging over independent step-length realizations.
//!
//! Each realization is evolved exactly; only the step-length sequence is
//! random. Realizations are grouped into fixed blocks, blocks are evaluated
//! in parallel, and block sums are merged in realization order with
//! compensated summation, so the result does not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{Density, Moments};
use crate::error::{invalid, Result, WalkError};
use crate::schedule::{SeedSpec, StepSchedule};
use crate::walk::{CoinOperator, InitialSpinor, WalkerState};

/// Realizations per work unit. Fixed so that reduction order never changes.
const BLOCK: usize = 8;
/// Blocks evaluated per parallel wave; bounds peak memory.
const WAVE: usize = 16;

/// Largest `t_max * l_max` the command line accepts.
pub const MEMORY_CEILING: usize = 1 << 22;

pub const DEFAULT_REALIZATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schedule: StepSchedule,
    pub coin: CoinOperator,
    pub spinor: InitialSpinor,
    pub t_max: usize,
    pub n_realizations: usize,
    pub master_seed: u64,
    pub snapshot_times: Vec<usize>,
}

impl RunConfig {
    /// Hadamard coin, asymmetric spinor, 1000 realizations, seed 1 and
    /// power-of-two snapshots.
    pub fn new(schedule: StepSchedule, t_max: usize) -> Self {
        RunConfig {
            schedule,
            coin: CoinOperator::hadamard(),
            spinor: InitialSpinor::asymmetric(),
            t_max,
            n_realizations: DEFAULT_REALIZATIONS,
            master_seed: 1,
            snapshot_times: default_snapshot_times(t_max),
        }
    }

    pub fn with_realizations(mut self, n: usize) -> Self {
        self.n_realizations = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_snapshots(mut self, times: Vec<usize>) -> Self {
        self.snapshot_times = times;
        self
    }

    pub fn with_spinor(mut self, spinor: InitialSpinor) -> Self {
        self.spinor = spinor;
        self
    }

    pub fn with_coin(mut self, coin: CoinOperator) -> Self {
        self.coin = coin;
        self
    }

    pub fn l_max(&self) -> usize {
        self.schedule.l_max()
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.t_max < 1 {
            return invalid("t_max must be >= 1");
        }
        if self.n_realizations < 1 {
            return invalid("need at least one realization");
        }
        if self.snapshot_times.is_empty() {
            return invalid("need at least one snapshot time");
        }
        if self.snapshot_times.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("snapshot times must be strictly increasing");
        }
        if self.snapshot_times.iter().any(|&t| t > self.t_max) {
            return invalid("snapshot times must not exceed t_max");
        }
        // re-check coin and spinor, which may have been deserialized
        CoinOperator::new(*self.coin.entries())?;
        InitialSpinor::new(self.spinor.a0, self.spinor.b0)?;
        Ok(())
    }

    /// Refuse runs whose lattice would exceed [`MEMORY_CEILING`] positions.
    pub fn check_memory_ceiling(&self) -> Result<()> {
        let sites = self.t_max.saturating_mul(self.l_max());
        if sites > MEMORY_CEILING {
            return Err(WalkError::Refused(format!(
                "t_max * l_max = {sites} exceeds the ceiling of {MEMORY_CEILING} positions"
            )));
        }
        Ok(())
    }
}

/// Powers of two up to `t_max`.
pub fn default_snapshot_times(t_max: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |t| t.checked_mul(2))
        .take_while(|&t| t <= t_max)
        .collect()
}

/// Moment time series, indexed by tick `t = 0..=t_max`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentSeries {
    pub mean: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub variance: Vec<f64>,
}

impl MomentSeries {
    pub fn with_capacity(n: usize) -> Self {
        MomentSeries {
            mean: Vec::with_capacity(n),
            second_moment: Vec::with_capacity(n),
            variance: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, m: Moments) {
        self.mean.push(m.mean);
        self.second_moment.push(m.second_moment);
        self.variance.push(m.variance);
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Last tick stored.
    pub fn t_max(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn get(&self, t: usize) -> Moments {
        Moments {
            mean: self.mean[t],
            second_moment: self.second_moment[t],
            variance: self.variance[t],
        }
    }

    pub fn quantity(&self, q: Quantity) -> &[f64] {
        match q {
            Quantity::Mean => &self.mean,
            Quantity::SecondMoment => &self.second_moment,
            Quantity::Variance => &self.variance,
        }
    }

    /// Build a series from `(mean, second_moment)` per tick, starting at `t = 0`.
    pub fn from_raw(mean: Vec<f64>, second_moment: Vec<f64>) -> Self {
        let variance = mean
            .iter()
            .zip(&second_moment)
            .map(|(m, s)| s - m * m)
            .collect();
        MomentSeries {
            mean,
            second_moment,
            variance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Mean,
    SecondMoment,
    Variance,
}

/// Output of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub densities: Vec<Density>,
    pub moments: MomentSeries,
    pub max_norm_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub config: RunConfig,
    /// Disorder-averaged densities, one per snapshot time, on `[-l_max t, l_max t]`.
    pub densities: Vec<Density>,
    /// Monte Carlo standard error of each averaged density value.
    pub density_stderr: Vec<Vec<f64>>,
    pub moments: MomentSeries,
    pub n_realizations: usize,
    /// Largest `|sum_x f(x,t) - 1|` seen over every tick of every realization.
    pub max_norm_drift: f64,
}

/// Evolve realization `realization_index` for `t_max` ticks.
pub fn run_single(config: &RunConfig, realization_index: usize) -> Result<Realization> {
    config.validate()?;
    let seed = SeedSpec::new(config.master_seed, realization_index as u64);
    let sequence = config.schedule.sample_sequence(config.t_max, seed)?;
    let l_max = config.l_max();
    let mut state = WalkerState::new(config.spinor, l_max * config.t_max)?;

    let mut moments = MomentSeries::with_capacity(config.t_max + 1);
    moments.push(Moments::default());
    let mut densities = Vec::with_capacity(config.snapshot_times.len());
    let mut snapshots = config.snapshot_times.iter().copied().peekable();
    if snapshots.peek() == Some(&0) {
        densities.push(state.occupation_window(0));
        snapshots.next();
    }
    let mut drift: f64 = (state.norm_sqr() - 1.0).abs();

    for &ell in &sequence {
        let tick = state.step(&config.coin, ell).map_err(|e| match e {
            WalkError::CapacityExceeded { .. } => WalkError::Internal(e.to_string()),
            other => other,
        })?;
        drift = drift.max((tick.norm - 1.0).abs());
        moments.push(Moments::from_raw(tick.first, tick.second));
        let t = state.time();
        if snapshots.peek() == Some(&t) {
            densities.push(state.occupation_window(l_max * t));
            snapshots.next();
        }
    }
    Ok(Realization {
        densities,
        moments,
        max_norm_drift: drift,
    })
}

/// Neumaier-compensated running sums for a vector of accumulators.
#[derive(Debug, Clone)]
struct CompensatedVec {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl CompensatedVec {
    fn zeros(n: usize) -> Self {
        CompensatedVec {
            sum: vec![0.0; n],
            comp: vec![0.0; n],
        }
    }

    #[inline]
    fn add_at(&mut self, i: usize, v: f64) {
        let s = self.sum[i];
        let t = s + v;
        if s.abs() >= v.abs() {
            self.comp[i] += (s - t) + v;
        } else {
            self.comp[i] += (v - t) + s;
        }
        self.sum[i] = t;
    }

    fn add_slice(&mut self, offset: usize, values: &[f64]) {
        for (k, &v) in values.iter().enumerate() {
            self.add_at(offset + k, v);
        }
    }

    fn add_squares(&mut self, offset: usize, values: &[f64]) {
        for (k, &v) in values.iter().enumerate() {
            self.add_at(offset + k, v * v);
        }
    }

    fn merge(&mut self, other: &CompensatedVec) {
        for i in 0..self.sum.len() {
            self.add_at(i, other.sum[i]);
            self.comp[i] += other.comp[i];
        }
    }

    fn value(&self, i: usize) -> f64 {
        self.sum[i] + self.comp[i]
    }
}

/// Layout of one flat accumulator: per-tick mean and second moment, then
/// each snapshot density, then the squares of each snapshot density.
struct Layout {
    ticks: usize,
    snapshot_offsets: Vec<usize>,
    snapshot_lens: Vec<usize>,
    square_offset: usize,
    total: usize,
}

impl Layout {
    fn new(config: &RunConfig) -> Self {
        let ticks = config.t_max + 1;
        let l_max = config.l_max();
        let mut offset = 2 * ticks;
        let mut snapshot_offsets = Vec::new();
        let mut snapshot_lens = Vec::new();
        for &t in &config.snapshot_times {
            snapshot_offsets.push(offset);
            let len = 2 * l_max * t + 1;
            snapshot_lens.push(len);
            offset += len;
        }
        let square_offset = offset;
        let total = offset + (offset - 2 * ticks);
        Layout {
            ticks,
            snapshot_offsets,
            snapshot_lens,
            square_offset,
            total,
        }
    }
}

struct Partial {
    acc: CompensatedVec,
    drift: f64,
}

fn run_block(config: &RunConfig, layout: &Layout, indices: std::ops::Range<usize>) -> Result<Partial> {
    let mut acc = CompensatedVec::zeros(layout.total);
    let mut drift: f64 = 0.0;
    let density_base = 2 * layout.ticks;
    for idx in indices {
        let r = run_single(config, idx)?;
        drift = drift.max(r.max_norm_drift);
        acc.add_slice(0, &r.moments.mean);
        acc.add_slice(layout.ticks, &r.moments.second_moment);
        for (k, d) in r.densities.iter().enumerate() {
            let off = layout.snapshot_offsets[k];
            acc.add_slice(off, &d.values);
            acc.add_squares(layout.square_offset + (off - density_base), &d.values);
        }
    }
    Ok(Partial { acc, drift })
}

/// Average `config.n_realizations` realizations on the current rayon pool.
pub fn run_ensemble(config: &RunConfig) -> Result<EnsembleResult> {
    config.validate()?;
    let layout = Layout::new(config);
    let n = config.n_realizations;
    let blocks: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(BLOCK)
        .map(|start| start..(start + BLOCK).min(n))
        .collect();

    let mut total = CompensatedVec::zeros(layout.total);
    let mut drift: f64 = 0.0;
    for wave in blocks.chunks(WAVE) {
        let partials: Vec<Result<Partial>> = wave
            .par_iter()
            .map(|range| run_block(config, &layout, range.clone()))
            .collect();
        for p in partials {
            let p = p?;
            total.merge(&p.acc);
            drift = drift.max(p.drift);
        }
    }

    let nf = n as f64;
    let mean: Vec<f64> = (0..layout.ticks).map(|t| total.value(t) / nf).collect();
    let second: Vec<f64> = (0..layout.ticks)
        .map(|t| total.value(layout.ticks + t) / nf)
        .collect();
    let moments = MomentSeries::from_raw(mean, second);

    let density_base = 2 * layout.ticks;
    let mut densities = Vec::with_capacity(config.snapshot_times.len());
    let mut density_stderr = Vec::with_capacity(config.snapshot_times.len());
    for (k, &t) in config.snapshot_times.iter().enumerate() {
        let off = layout.snapshot_offsets[k];
        let len = layout.snapshot_lens[k];
        let sq = layout.square_offset + (off - density_base);
        let values: Vec<f64> = (0..len).map(|i| total.value(off + i) / nf).collect();
        let stderr = values
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                if n < 2 {
                    return 0.0;
                }
                let var = (total.value(sq + i) - nf * m * m) / (nf - 1.0);
                (var.max(0.0) / nf).sqrt()
            })
            .collect();
        densities.push(Density {
            values,
            origin_index: (len - 1) / 2,
            time: t,
        });
        density_stderr.push(stderr);
    }

    Ok(EnsembleResult {
        config: config.clone(),
        densities,
        density_stderr,
        moments,
        n_realizations: n,
        max_norm_drift: drift,
    })
}

/// [`run_ensemble`] on a dedicated pool of `threads` workers.
pub fn run_ensemble_with_threads(config: &RunConfig, threads: usize) -> Result<EnsembleResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| WalkError::Internal(e.to_string()))?;
    pool.install(|| run_ensemble(config))
}
