//! Per-tick translation lengths.
//!
//! A schedule is either random two-point (`1` with probability `alpha`,
//! `2^n` otherwise, drawn independently each tick), a fixed periodic
//! sequence, or a constant. Random draws come from a per-realization
//! ChaCha stream whose seed mixes the master seed with the realization
//! index, so realizations can be evaluated in any order.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, WalkError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    RandomTwoPoint { alpha: f64, n: u32 },
    Periodic { lengths: Vec<usize> },
    Constant { ell: usize },
}

/// Seed for one realization's private random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub realization_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, realization_index: u64) -> Self {
        SeedSpec {
            master_seed,
            realization_index,
        }
    }

    /// 64-bit stream seed; a pure function of `(master_seed, realization_index)`.
    pub fn stream_seed(&self) -> u64 {
        let a = splitmix64(self.master_seed);
        splitmix64(a ^ splitmix64(self.realization_index.wrapping_add(0xA076_1D64_78BD_642F)))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.stream_seed())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StepSchedule {
    pub fn random(alpha: f64, n: u32) -> Result<Self> {
        let s = StepSchedule::RandomTwoPoint { alpha, n };
        s.validate()?;
        Ok(s)
    }

    pub fn periodic(lengths: Vec<usize>) -> Result<Self> {
        let s = StepSchedule::Periodic { lengths };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(ell: usize) -> Result<Self> {
        let s = StepSchedule::Constant { ell };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StepSchedule::RandomTwoPoint { alpha, n } => {
                if !(0.0..=1.0).contains(alpha) {
                    return invalid(format!("alpha = {alpha} outside [0, 1]"));
                }
                if *n < 1 || *n > 62 {
                    return invalid(format!("n = {n} outside [1, 62]"));
                }
            }
            StepSchedule::Periodic { lengths } => {
                if lengths.is_empty() {
                    return invalid("periodic schedule needs at least one length");
                }
                if lengths.contains(&0) {
                    return invalid("periodic step lengths must be >= 1");
                }
            }
            StepSchedule::Constant { ell } => {
                if *ell == 0 {
                    return invalid("constant step length must be >= 1");
                }
            }
        }
        Ok(())
    }

    /// Longest step the schedule can produce.
    pub fn l_max(&self) -> usize {
        match self {
            StepSchedule::RandomTwoPoint { n, .. } => 1usize << n,
            StepSchedule::Periodic { lengths } => lengths.iter().copied().max().unwrap_or(1),
            StepSchedule::Constant { ell } => *ell,
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, StepSchedule::RandomTwoPoint { .. })
    }

    /// Step lengths for ticks `1..=t_max`.
    pub fn sample_sequence(&self, t_max: usize, seed: SeedSpec) -> Result<Vec<usize>> {
        self.validate()?;
        if t_max < 1 {
            return invalid("t_max must be >= 1");
        }
        let seq = match self {
            StepSchedule::RandomTwoPoint { alpha, n } => {
                let long = 1usize << n;
                let mut rng = seed.rng();
                (0..t_max)
                    .map(|_| {
                        let u: f64 = rng.random();
                        if u < *alpha {
                            1
                        } else {
                            long
                        }
                    })
                    .collect()
            }
            StepSchedule::Periodic { lengths } => {
                lengths.iter().copied().cycle().take(t_max).collect()
            }
            StepSchedule::Constant { ell } => vec![*ell; t_max],
        };
        Ok(seq)
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSchedule::RandomTwoPoint { alpha, n } => write!(f, "random:alpha={alpha},n={n}"),
            StepSchedule::Periodic { lengths } => {
                let parts: Vec<String> = lengths.iter().map(|l| l.to_string()).collect();
                write!(f, "periodic:{}", parts.join(","))
            }
            StepSchedule::Constant { ell } => write!(f, "constant:{ell}"),
        }
    }
}

/// Parses `random:alpha=0.5,n=1`, `periodic:1,2` and `constant:1`.
impl FromStr for StepSchedule {
    type Err = WalkError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, body) = s
            .split_once(':')
            .ok_or_else(|| WalkError::InvalidArgument(format!("schedule '{s}' lacks ':'")))?;
        let bad = |what: &str| WalkError::InvalidArgument(format!("schedule '{s}': {what}"));
        match kind.trim() {
            "random" => {
                let mut alpha = None;
                let mut n = None;
                for kv in body.split(',') {
                    let (k, v) = kv.split_once('=').ok_or_else(|| bad("expected key=value"))?;
                    match k.trim() {
                        "alpha" => alpha = Some(v.trim().parse::<f64>().map_err(|_| bad("alpha"))?),
                        "n" => n = Some(v.trim().parse::<u32>().map_err(|_| bad("n"))?),
                        other => return Err(bad(&format!("unknown key '{other}'"))),
                    }
                }
                StepSchedule::random(
                    alpha.ok_or_else(|| bad("missing alpha"))?,
                    n.ok_or_else(|| bad("missing n"))?,
                )
            }
            "periodic" => {
                let lengths = body
                    .split(',')
                    .map(|v| v.trim().parse::<usize>().map_err(|_| bad("lengths")))
                    .collect::<Result<Vec<_>>>()?;
                StepSchedule::periodic(lengths)
            }
            "constant" => StepSchedule::constant(body.trim().parse().map_err(|_| bad("ell"))?),
            other => Err(bad(&format!("unknown kind '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_and_periodic_sequences() {
        let seed = SeedSpec::new(1, 0);
        assert_eq!(
            StepSchedule::constant(1).unwrap().sample_sequence(5, seed).unwrap(),
            vec![1; 5]
        );
        assert_eq!(
            StepSchedule::periodic(vec![1, 2]).unwrap().sample_sequence(5, seed).unwrap(),
            vec![1, 2, 1, 2, 1]
        );
    }

    #[test]
    fn random_mean_step_length() {
        let s = StepSchedule::random(0.5, 1).unwrap();
        let seq = s.sample_sequence(100_000, SeedSpec::new(42, 3)).unwrap();
        let mean = seq.iter().sum::<usize>() as f64 / seq.len() as f64;
        // E[ell] = alpha + 2^n (1 - alpha)
        assert!((mean - 1.5).abs() < 0.01, "mean = {mean}");
    }

    #[test]
    fn frequency_of_unit_steps_within_three_standard_errors() {
        let alpha = 0.7;
        let draws = 1_000_000;
        let seq = StepSchedule::random(alpha, 2)
            .unwrap()
            .sample_sequence(draws, SeedSpec::new(9, 0))
            .unwrap();
        let ones = seq.iter().filter(|&&l| l == 1).count() as f64;
        let se = (alpha * (1.0 - alpha) / draws as f64).sqrt();
        assert!((ones / draws as f64 - alpha).abs() < 3.0 * se);
        assert!(seq.iter().all(|&l| l == 1 || l == 4));
    }

    #[test]
    fn l_max_values() {
        assert_eq!(StepSchedule::random(0.7, 3).unwrap().l_max(), 8);
        assert_eq!(StepSchedule::periodic(vec![1, 4, 2]).unwrap().l_max(), 4);
        assert_eq!(StepSchedule::constant(1).unwrap().l_max(), 1);
    }

    #[test]
    fn extreme_alphas_are_constant() {
        let seed = SeedSpec::new(5, 17);
        assert_eq!(
            StepSchedule::random(1.0, 1).unwrap().sample_sequence(500, seed).unwrap(),
            vec![1; 500]
        );
        assert_eq!(
            StepSchedule::random(0.0, 3).unwrap().sample_sequence(500, seed).unwrap(),
            vec![8; 500]
        );
    }

    #[test]
    fn validation_errors() {
        assert!(StepSchedule::random(1.5, 1).is_err());
        assert!(StepSchedule::random(-0.1, 1).is_err());
        assert!(StepSchedule::random(0.5, 0).is_err());
        assert!(StepSchedule::periodic(vec![]).is_err());
        assert!(StepSchedule::periodic(vec![1, 0]).is_err());
        assert!(StepSchedule::constant(0).is_err());
        let s = StepSchedule::constant(1).unwrap();
        assert!(s.sample_sequence(0, SeedSpec::new(0, 0)).is_err());
    }

    #[test]
    fn parse_schedule_strings() {
        assert_eq!(
            "random:alpha=0.5,n=1".parse::<StepSchedule>().unwrap(),
            StepSchedule::RandomTwoPoint { alpha: 0.5, n: 1 }
        );
        assert_eq!(
            "periodic:1,2,4".parse::<StepSchedule>().unwrap(),
            StepSchedule::Periodic { lengths: vec![1, 2, 4] }
        );
        assert_eq!(
            "constant:3".parse::<StepSchedule>().unwrap(),
            StepSchedule::Constant { ell: 3 }
        );
        for bad in ["random:alpha=2,n=1", "random:n=1", "walk:1", "periodic:", "constant:x", "constant"] {
            assert!(bad.parse::<StepSchedule>().is_err(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn sequences_are_deterministic(master in any::<u64>(), idx in 0u64..10_000, alpha in 0.0f64..=1.0) {
            let s = StepSchedule::random(alpha, 2).unwrap();
            let a = s.sample_sequence(64, SeedSpec::new(master, idx)).unwrap();
            let b = s.sample_sequence(64, SeedSpec::new(master, idx)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn display_round_trips(alpha in 0.0f64..=1.0, n in 1u32..7, lens in proptest::collection::vec(1usize..20, 1..6)) {
            for s in [
                StepSchedule::random(alpha, n).unwrap(),
                StepSchedule::periodic(lens.clone()).unwrap(),
            ] {
                prop_assert_eq!(s.to_string().parse::<StepSchedule>().unwrap(), s);
            }
        }
    }
}
