//! Exact evolution of a single walker realization.
//!
//! One tick is a coin rotation in chiral space followed by a conditional
//! shift: the right-moving component moves by `+ell`, the left-moving one by
//! `-ell`. Both components share the same `ell` at a given tick.
//!
//! Chiral ordering is `(L, R)` everywhere: a coin matrix `[[c00, c01], [c10, c11]]`
//! maps `(psi_L, psi_R)` to `(c00 psi_L + c01 psi_R, c10 psi_L + c11 psi_R)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{invalid, Result, WalkError};

const UNITARITY_TOL: f64 = 1e-12;
/// Amplitudes below this magnitude at the edge of the active range are
/// flushed to zero (their probabilities are below 1e-300).
const NEGLIGIBLE: f64 = 1e-150;

/// 2x2 unitary acting on `(psi_L, psi_R)` at every site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoinOperator {
    entries: [[Complex64; 2]; 2],
}

impl CoinOperator {
    pub fn new(entries: [[Complex64; 2]; 2]) -> Result<Self> {
        let coin = CoinOperator { entries };
        let dev = coin.unitarity_deviation();
        if !dev.is_finite() || dev > UNITARITY_TOL {
            return invalid(format!(
                "coin is not unitary (max |C C^dagger - I| = {dev:e})"
            ));
        }
        Ok(coin)
    }

    /// `(1/sqrt 2) [[1, 1], [1, -1]]`.
    pub fn hadamard() -> Self {
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        CoinOperator {
            entries: [[h, h], [h, -h]],
        }
    }

    pub fn entries(&self) -> &[[Complex64; 2]; 2] {
        &self.entries
    }

    /// Largest entrywise deviation of `C C^dagger` from the identity.
    pub fn unitarity_deviation(&self) -> f64 {
        let c = &self.entries;
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let v = c[i][0] * c[j][0].conj() + c[i][1] * c[j][1].conj();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).norm());
            }
        }
        worst
    }

    #[inline]
    pub fn apply(&self, left: Complex64, right: Complex64) -> (Complex64, Complex64) {
        let c = &self.entries;
        (
            c[0][0] * left + c[0][1] * right,
            c[1][0] * left + c[1][1] * right,
        )
    }

    fn real_entries(&self) -> Option<[[f64; 2]; 2]> {
        let c = &self.entries;
        if c.iter().flatten().all(|z| z.im == 0.0) {
            Some([[c[0][0].re, c[0][1].re], [c[1][0].re, c[1][1].re]])
        } else {
            None
        }
    }
}

impl Default for CoinOperator {
    fn default() -> Self {
        CoinOperator::hadamard()
    }
}

/// Chiral amplitudes placed at the origin at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialSpinor {
    pub a0: Complex64,
    pub b0: Complex64,
}

impl InitialSpinor {
    pub fn new(a0: Complex64, b0: Complex64) -> Result<Self> {
        let norm = a0.norm_sqr() + b0.norm_sqr();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-12 {
            return invalid(format!("spinor |a0|^2 + |b0|^2 = {norm}, expected 1"));
        }
        Ok(InitialSpinor { a0, b0 })
    }

    /// `(sqrt(1/3), sqrt(2/3))`: gives an asymmetric profile without disorder.
    pub fn asymmetric() -> Self {
        InitialSpinor {
            a0: Complex64::new((1.0f64 / 3.0).sqrt(), 0.0),
            b0: Complex64::new((2.0f64 / 3.0).sqrt(), 0.0),
        }
    }

    /// `(1/sqrt 2, i/sqrt 2)`: mirror-symmetric profile under the Hadamard coin.
    pub fn symmetric() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        InitialSpinor {
            a0: Complex64::new(h, 0.0),
            b0: Complex64::new(0.0, h),
        }
    }
}

impl Default for InitialSpinor {
    fn default() -> Self {
        InitialSpinor::asymmetric()
    }
}

/// Norm and raw moments of the density right after a tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TickMoments {
    pub norm: f64,
    pub first: f64,
    pub second: f64,
}

/// Two-component wavefunction on a preallocated lattice block.
///
/// Amplitudes are stored split into real and imaginary buffers. Each chiral
/// component has its own index offset, so a shift is an offset update rather
/// than a copy: `psi_L(x)` lives at index `x + left_offset` of the left
/// buffers and `psi_R(x)` at `x + right_offset` of the right ones.
/// Amplitudes vanish for `|x| > reach`, the sum of step lengths taken so far.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkerState {
    left_re: Vec<f64>,
    left_im: Vec<f64>,
    right_re: Vec<f64>,
    right_im: Vec<f64>,
    left_offset: usize,
    right_offset: usize,
    capacity: usize,
    reach: usize,
    // amplitudes are exactly zero outside [active_lo, active_hi]
    active_lo: i64,
    active_hi: i64,
    time: usize,
    // all imaginary parts are exactly zero; real coins keep it that way
    real_valued: bool,
}

/// Aligned views of the reachable block `[-reach, reach]`.
struct Block<'a> {
    left_re: &'a mut [f64],
    left_im: &'a mut [f64],
    right_re: &'a mut [f64],
    right_im: &'a mut [f64],
}

impl WalkerState {
    /// Walker localized at the origin with room for positions in
    /// `[-capacity, capacity]`.
    pub fn new(spinor: InitialSpinor, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return invalid("capacity must be at least 1");
        }
        let spinor = InitialSpinor::new(spinor.a0, spinor.b0)?;
        let len = 2 * capacity + 1;
        let mut state = WalkerState {
            left_re: vec![0.0; len],
            left_im: vec![0.0; len],
            right_re: vec![0.0; len],
            right_im: vec![0.0; len],
            // the left block only ever grows upward, the right block downward
            left_offset: 0,
            right_offset: 2 * capacity,
            capacity,
            reach: 0,
            active_lo: 0,
            active_hi: 0,
            time: 0,
            real_valued: spinor.a0.im == 0.0 && spinor.b0.im == 0.0,
        };
        state.left_re[0] = spinor.a0.re;
        state.left_im[0] = spinor.a0.im;
        state.right_re[2 * capacity] = spinor.b0.re;
        state.right_im[2 * capacity] = spinor.b0.im;
        Ok(state)
    }

    /// State holding the given amplitudes on `[-capacity, capacity]`
    /// (`left[i]`, `right[i]` at `x = i - capacity`). The result has no room
    /// left for further shifts.
    pub fn from_amplitudes(
        left: &[Complex64],
        right: &[Complex64],
        time: usize,
    ) -> Result<Self> {
        if left.len() != right.len() || left.len() % 2 == 0 {
            return invalid("amplitude arrays must have equal, odd length");
        }
        let capacity = left.len() / 2;
        let split = |v: &[Complex64]| -> (Vec<f64>, Vec<f64>) {
            (v.iter().map(|z| z.re).collect(), v.iter().map(|z| z.im).collect())
        };
        let (left_re, left_im) = split(left);
        let (right_re, right_im) = split(right);
        let real_valued = left_im.iter().chain(&right_im).all(|&v| v == 0.0);
        Ok(WalkerState {
            left_re,
            left_im,
            right_re,
            right_im,
            left_offset: capacity,
            right_offset: capacity,
            capacity,
            reach: capacity,
            active_lo: -(capacity as i64),
            active_hi: capacity as i64,
            time,
            real_valued,
        })
    }

    pub fn time(&self) -> usize {
        self.time
    }

    /// Largest `|x|` representable.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Largest `|x|` that can carry amplitude at the current time.
    pub fn reach(&self) -> usize {
        self.reach
    }

    /// `psi_L` over `[-capacity, capacity]`.
    pub fn psi_left(&self) -> Vec<Complex64> {
        self.positions().map(|x| self.amplitude(x).0).collect()
    }

    /// `psi_R` over `[-capacity, capacity]`.
    pub fn psi_right(&self) -> Vec<Complex64> {
        self.positions().map(|x| self.amplitude(x).1).collect()
    }

    fn positions(&self) -> std::ops::RangeInclusive<i64> {
        let c = self.capacity as i64;
        -c..=c
    }

    /// `(psi_L(x), psi_R(x))`, zero outside the reachable block.
    pub fn amplitude(&self, x: i64) -> (Complex64, Complex64) {
        if x < self.active_lo || x > self.active_hi {
            return (Complex64::default(), Complex64::default());
        }
        let li = (x + self.left_offset as i64) as usize;
        let ri = (x + self.right_offset as i64) as usize;
        (
            Complex64::new(self.left_re[li], self.left_im[li]),
            Complex64::new(self.right_re[ri], self.right_im[ri]),
        )
    }

    fn left_index(&self, x: i64) -> usize {
        (x + self.left_offset as i64) as usize
    }

    fn right_index(&self, x: i64) -> usize {
        (x + self.right_offset as i64) as usize
    }

    /// Views of the active range, aligned by position.
    fn block(&mut self) -> Block<'_> {
        let (a, b) = (self.active_lo, self.active_hi);
        let (la, lb) = (self.left_index(a), self.left_index(b));
        let (ra, rb) = (self.right_index(a), self.right_index(b));
        Block {
            left_re: &mut self.left_re[la..=lb],
            left_im: &mut self.left_im[la..=lb],
            right_re: &mut self.right_re[ra..=rb],
            right_im: &mut self.right_im[ra..=rb],
        }
    }

    fn negligible_at(&self, x: i64) -> bool {
        let (li, ri) = (self.left_index(x), self.right_index(x));
        self.left_re[li].abs() < NEGLIGIBLE
            && self.left_im[li].abs() < NEGLIGIBLE
            && self.right_re[ri].abs() < NEGLIGIBLE
            && self.right_im[ri].abs() < NEGLIGIBLE
    }

    fn clear_at(&mut self, x: i64) {
        let (li, ri) = (self.left_index(x), self.right_index(x));
        self.left_re[li] = 0.0;
        self.left_im[li] = 0.0;
        self.right_re[ri] = 0.0;
        self.right_im[ri] = 0.0;
    }

    /// Zero out negligible amplitudes at both edges of the active range.
    /// Squares of such amplitudes would be subnormal, which is slow on most
    /// hardware and far below any probability resolved downstream.
    fn trim(&mut self) {
        while self.active_lo < self.active_hi && self.negligible_at(self.active_lo) {
            self.clear_at(self.active_lo);
            self.active_lo += 1;
        }
        while self.active_hi > self.active_lo && self.negligible_at(self.active_hi) {
            self.clear_at(self.active_hi);
            self.active_hi -= 1;
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        (self.active_lo..=self.active_hi)
            .map(|x| {
                let (l, r) = self.amplitude(x);
                l.norm_sqr() + r.norm_sqr()
            })
            .sum()
    }

    /// Rotate `(psi_L, psi_R)` by `coin` at every site. Time is unchanged.
    pub fn apply_coin(&mut self, coin: &CoinOperator) {
        let real_coin = coin.real_entries();
        if real_coin.is_none() {
            self.real_valued = false;
        }
        let b = self.block();
        match real_coin {
            Some(c) => {
                rotate_real(&c, b.left_re, b.right_re);
                rotate_real(&c, b.left_im, b.right_im);
            }
            None => {
                for i in 0..b.left_re.len() {
                    let (nl, nr) = coin.apply(
                        Complex64::new(b.left_re[i], b.left_im[i]),
                        Complex64::new(b.right_re[i], b.right_im[i]),
                    );
                    b.left_re[i] = nl.re;
                    b.left_im[i] = nl.im;
                    b.right_re[i] = nr.re;
                    b.right_im[i] = nr.im;
                }
            }
        }
    }

    fn check_shift(&self, ell: usize) -> Result<()> {
        if ell == 0 {
            return invalid("step length must be at least 1");
        }
        if self.reach + ell > self.capacity {
            return Err(WalkError::CapacityExceeded {
                ell,
                reach: self.reach,
                capacity: self.capacity,
            });
        }
        Ok(())
    }

    /// Move `psi_R` by `+ell` and `psi_L` by `-ell`. Time is unchanged.
    pub fn shift(&mut self, ell: usize) -> Result<()> {
        self.check_shift(ell)?;
        // storage never moves; cells entering the active range are zero
        self.left_offset += ell;
        self.right_offset -= ell;
        self.reach += ell;
        self.active_lo -= ell as i64;
        self.active_hi += ell as i64;
        Ok(())
    }

    /// One full tick: coin, then shift by `ell`, then `time += 1`.
    ///
    /// Returns the norm and raw moments of the new density, accumulated
    /// during the coin pass.
    pub fn step(&mut self, coin: &CoinOperator, ell: usize) -> Result<TickMoments> {
        self.check_shift(ell)?;
        self.trim();
        let x0 = self.active_lo as f64;
        let ell_f = ell as f64;
        let moments = match (coin.real_entries(), self.real_valued) {
            (Some(c), true) => {
                let b = self.block();
                coin_pass_real(c, b.left_re, b.right_re, x0, ell_f)
            }
            _ => {
                self.apply_coin(coin);
                let b = self.block();
                moments_pass(b, x0, ell_f)
            }
        };
        self.shift(ell)?;
        self.time += 1;
        Ok(moments)
    }

    /// `f(x) = |psi_L(x)|^2 + |psi_R(x)|^2` over `[-capacity, capacity]`.
    pub fn occupation(&self) -> Density {
        self.occupation_window(self.capacity)
    }

    /// Occupation restricted to `[-half_width, half_width]`.
    pub fn occupation_window(&self, half_width: usize) -> Density {
        let h = half_width as i64;
        let values = (-h..=h)
            .map(|x| {
                let (l, r) = self.amplitude(x);
                l.norm_sqr() + r.norm_sqr()
            })
            .collect();
        Density {
            values,
            origin_index: half_width,
            time: self.time,
        }
    }
}

fn rotate_real(c: &[[f64; 2]; 2], left: &mut [f64], right: &mut [f64]) {
    for (l, r) in left.iter_mut().zip(right.iter_mut()) {
        let (a, b) = (*l, *r);
        *l = c[0][0] * a + c[0][1] * b;
        *r = c[1][0] * a + c[1][1] * b;
    }
}

const LANES: usize = 4;

/// Per-lane running sums of `q = pl + pr`, `x q`, `x^2 q`, `d = pr - pl` and
/// `x d`, from which the post-shift moments follow exactly:
/// `sum p (x -+ ell)^k` expands into these five sums.
#[derive(Default)]
struct LaneSums {
    q: [f64; LANES],
    xq: [f64; LANES],
    xxq: [f64; LANES],
    d: [f64; LANES],
    xd: [f64; LANES],
}

impl LaneSums {
    /// Probability `pl` moving to `x - ell` and `pr` moving to `x + ell`.
    #[inline(always)]
    fn add(&mut self, j: usize, x: f64, pl: f64, pr: f64) {
        let q = pl + pr;
        let d = pr - pl;
        let xq = x * q;
        self.q[j] += q;
        self.xq[j] += xq;
        self.xxq[j] += x * xq;
        self.d[j] += d;
        self.xd[j] += x * d;
    }

    fn finish(self, ell: f64) -> TickMoments {
        let fold = |v: [f64; LANES]| (v[0] + v[1]) + (v[2] + v[3]);
        let (q, xq, xxq, d, xd) = (
            fold(self.q),
            fold(self.xq),
            fold(self.xxq),
            fold(self.d),
            fold(self.xd),
        );
        TickMoments {
            norm: q,
            first: xq + ell * d,
            second: xxq + 2.0 * ell * xd + ell * ell * q,
        }
    }
}

/// Fused real coin and moment accumulation for purely real amplitudes.
/// `x0` is the position of element 0; moments refer to post-shift positions.
#[inline(never)]
fn coin_pass_real(
    c: [[f64; 2]; 2],
    left: &mut [f64],
    right: &mut [f64],
    x0: f64,
    ell: f64,
) -> TickMoments {
    let mut sums = LaneSums::default();
    let mut lc = left.chunks_exact_mut(LANES);
    let mut rc = right.chunks_exact_mut(LANES);
    let mut base = x0;
    for (lch, rch) in (&mut lc).zip(&mut rc) {
        for j in 0..LANES {
            let (a, b) = (lch[j], rch[j]);
            let nl = c[0][0] * a + c[0][1] * b;
            let nr = c[1][0] * a + c[1][1] * b;
            lch[j] = nl;
            rch[j] = nr;
            sums.add(j, base + j as f64, nl * nl, nr * nr);
        }
        base += LANES as f64;
    }
    let tail = lc.into_remainder().iter_mut().zip(rc.into_remainder().iter_mut());
    for (j, (l, r)) in tail.enumerate() {
        let (a, b) = (*l, *r);
        *l = c[0][0] * a + c[0][1] * b;
        *r = c[1][0] * a + c[1][1] * b;
        sums.add(j, base + j as f64, *l * *l, *r * *r);
    }
    sums.finish(ell)
}

/// Moments of an already rotated block, at post-shift positions.
fn moments_pass(b: Block<'_>, x0: f64, ell: f64) -> TickMoments {
    let mut sums = LaneSums::default();
    for i in 0..b.left_re.len() {
        let pl = b.left_re[i] * b.left_re[i] + b.left_im[i] * b.left_im[i];
        let pr = b.right_re[i] * b.right_re[i] + b.right_im[i] * b.right_im[i];
        sums.add(i % LANES, x0 + i as f64, pl, pr);
    }
    sums.finish(ell)
}

/// Evolve from `spinor` through the given step lengths.
pub fn evolve(
    spinor: InitialSpinor,
    coin: &CoinOperator,
    sequence: &[usize],
) -> Result<WalkerState> {
    let reach: usize = sequence.iter().sum();
    let mut state = WalkerState::new(spinor, reach.max(1))?;
    for &ell in sequence {
        state.step(coin, ell)?;
    }
    Ok(state)
}
