//! Post-processing of ensemble output: moment-form fits, power laws,
//! scaling exponents, collapses, ballistic peaks and tail shapes.

use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::ensemble::{run_ensemble, MomentSeries, Quantity, RunConfig};
use crate::error::{invalid, Result, WalkError};
use crate::schedule::StepSchedule;

/// Ordinary least squares `y = intercept + slope * x`, optionally weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    /// Weighted root-mean-square residual.
    pub rms: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return invalid("linear fit needs at least two paired points");
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..xs.len()).map(w).sum();
    let mx = (0..xs.len()).map(|i| w(i) * xs[i]).sum::<f64>() / sw;
    let my = (0..xs.len()).map(|i| w(i) * ys[i]).sum::<f64>() / sw;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for i in 0..xs.len() {
        let dx = xs[i] - mx;
        sxx += w(i) * dx * dx;
        sxy += w(i) * dx * (ys[i] - my);
    }
    if sxx <= 0.0 || !sxx.is_finite() {
        return Err(WalkError::FitDegenerate("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = (0..xs.len())
        .map(|i| {
            let r = ys[i] - intercept - slope * xs[i];
            w(i) * r * r
        })
        .sum();
    Ok(LinearFit {
        intercept,
        slope,
        rms: (ss / sw).sqrt(),
    })
}

/// Fit of `<x> = s t / (b1 + b2 sqrt t)` and `<x^2> = t^2 / (b3 + b4 sqrt t)`,
/// where `s` is the sign of the mean on the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentFit {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub mean_sign: f64,
    pub residual_mean: f64,
    pub residual_second: f64,
    pub relative_residual_max: f64,
    pub fit_window: (usize, usize),
}

impl MomentFit {
    pub fn mean_at(&self, t: f64) -> f64 {
        self.mean_sign * t / (self.b1 + self.b2 * t.sqrt())
    }

    pub fn second_moment_at(&self, t: f64) -> f64 {
        t * t / (self.b3 + self.b4 * t.sqrt())
    }
}

/// Default moment-fit window: skips the early transient, which scales
/// with the run length.
pub fn default_fit_window(t_max: usize) -> (usize, usize) {
    let t_min = (t_max / 32).max(16).min(t_max.saturating_sub(9)).max(1);
    (t_min, t_max)
}

/// Default slope window: the last decade of `t`.
pub fn default_slope_window(t_max: usize) -> (usize, usize) {
    ((t_max / 10).max(1), t_max)
}

fn check_window(series: &MomentSeries, window: (usize, usize), min_ticks: usize) -> Result<()> {
    let (lo, hi) = window;
    if lo == 0 || hi < lo || hi > series.t_max() {
        return invalid(format!(
            "window [{lo}, {hi}] must lie in [1, {}]",
            series.t_max()
        ));
    }
    if hi - lo + 1 < min_ticks {
        return invalid(format!("window [{lo}, {hi}] needs at least {min_ticks} ticks"));
    }
    Ok(())
}

pub fn fit_moment_forms(series: &MomentSeries, window: (usize, usize)) -> Result<MomentFit> {
    check_window(series, window, 10)?;
    let (lo, hi) = window;
    let ts: Vec<f64> = (lo..=hi).map(|t| t as f64).collect();
    let roots: Vec<f64> = ts.iter().map(|t| t.sqrt()).collect();
    let mean = &series.mean[lo..=hi];
    let second = &series.second_moment[lo..=hi];

    let sign = mean[0].signum();
    if mean.iter().any(|&m| m == 0.0 || m.signum() != sign || !m.is_finite()) {
        return Err(WalkError::FitDegenerate(
            "mean vanishes or changes sign inside the window".into(),
        ));
    }
    if second.iter().any(|&m| m <= 0.0 || !m.is_finite()) {
        return Err(WalkError::FitDegenerate(
            "second moment is not positive on the window".into(),
        ));
    }
    let y1: Vec<f64> = ts.iter().zip(mean).map(|(t, m)| t / m.abs()).collect();
    let y2: Vec<f64> = ts.iter().zip(second).map(|(t, m)| t * t / m).collect();
    let f1 = linear_fit(&roots, &y1, None)?;
    let f2 = linear_fit(&roots, &y2, None)?;
    let (b1, b2, b3, b4) = (f1.intercept, f1.slope, f2.intercept, f2.slope);
    if roots
        .iter()
        .any(|r| b1 + b2 * r <= 0.0 || b3 + b4 * r <= 0.0)
    {
        return Err(WalkError::FitDegenerate(
            "fitted denominators are not positive on the window".into(),
        ));
    }
    let mut fit = MomentFit {
        b1,
        b2,
        b3,
        b4,
        mean_sign: sign,
        residual_mean: 0.0,
        residual_second: 0.0,
        relative_residual_max: 0.0,
        fit_window: window,
    };
    for (i, &t) in ts.iter().enumerate() {
        fit.residual_mean = fit.residual_mean.max((fit.mean_at(t) / mean[i] - 1.0).abs());
        fit.residual_second = fit
            .residual_second
            .max((fit.second_moment_at(t) / second[i] - 1.0).abs());
    }
    fit.relative_residual_max = fit.residual_mean.max(fit.residual_second);
    Ok(fit)
}

/// `value = amplitude * (1 - alpha)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub amplitude: f64,
    pub exponent: f64,
    pub fit_range: (f64, f64),
    /// RMS residual of `ln value`.
    pub residual: f64,
}

/// Points are `(1 - alpha, value)`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 4 {
        return invalid(format!("power law needs at least 4 points, got {}", points.len()));
    }
    if let Some(&(x, y)) = points.iter().find(|&&(x, y)| !(x > 0.0 && y > 0.0)) {
        return invalid(format!("power law needs positive data, got ({x}, {y})"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let fit = linear_fit(&xs, &ys, None)?;
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(PowerLawFit {
        amplitude: fit.intercept.exp(),
        exponent: fit.slope,
        fit_range: (lo, hi),
        residual: fit.rms,
    })
}

/// Log-log slope of a moment over `window`. The mean enters as `|<x>|`.
pub fn estimate_slope(series: &MomentSeries, quantity: Quantity, window: (usize, usize)) -> Result<f64> {
    check_window(series, window, 2)?;
    let (lo, hi) = window;
    let values = &series.quantity(quantity)[lo..=hi];
    let mut xs = Vec::with_capacity(values.len());
    let mut ys = Vec::with_capacity(values.len());
    for (t, &v) in (lo..=hi).zip(values) {
        let v = if quantity == Quantity::Mean { v.abs() } else { v };
        if !(v > 0.0) {
            return invalid(format!("{quantity:?} is not positive at t = {t}"));
        }
        xs.push((t as f64).ln());
        ys.push(v.ln());
    }
    Ok(linear_fit(&xs, &ys, None)?.slope)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollapsePoint {
    pub x: i64,
    pub scaled_x: f64,
    pub scaled_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseCurve {
    pub time: usize,
    pub points: Vec<CollapsePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseExport {
    pub gamma: f64,
    pub curves: Vec<CollapseCurve>,
    /// [`collapse_spread`] over the whole range.
    pub spread: f64,
}

/// Subset of sites, in unscaled coordinates, used when scoring a collapse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CollapseRegion {
    All,
    /// `|x| / sqrt(t) < bound`
    Central(f64),
    /// `|x| / t > bound`
    Ballistic(f64),
}

impl CollapseRegion {
    fn contains(&self, x: i64, t: usize) -> bool {
        let (x, t) = (x.unsigned_abs() as f64, t as f64);
        match *self {
            CollapseRegion::All => true,
            CollapseRegion::Central(b) => x < b * t.sqrt(),
            CollapseRegion::Ballistic(b) => x > b * t,
        }
    }
}

pub const COLLAPSE_BINS: usize = 200;

/// Scaled curves `(x / t^gamma, t^gamma f)` for every snapshot.
pub fn export_collapse(densities: &[Density], gamma: f64) -> CollapseExport {
    let curves: Vec<CollapseCurve> = densities
        .iter()
        .map(|d| {
            let s = (d.time as f64).powf(gamma);
            CollapseCurve {
                time: d.time,
                points: d
                    .iter()
                    .map(|(x, f)| CollapsePoint {
                        x,
                        scaled_x: x as f64 / s,
                        scaled_f: f * s,
                    })
                    .collect(),
            }
        })
        .collect();
    let spread = collapse_spread(&curves, CollapseRegion::All, COLLAPSE_BINS);
    CollapseExport {
        gamma,
        curves,
        spread,
    }
}

/// Vertical spread between curves after binning onto a common scaled-x grid:
/// the mean over bins of the between-curve variance, divided by the mean over
/// bins of the squared between-curve mean, so that scores for different
/// `gamma` are comparable. The grid spans the scaled range common to all
/// curves and never has more bins than the sparsest curve has points there.
/// Bins missing any curve are skipped. Returns 0 for fewer than two curves.
pub fn collapse_spread(curves: &[CollapseCurve], region: CollapseRegion, bins: usize) -> f64 {
    if curves.len() < 2 || bins == 0 {
        return 0.0;
    }
    let selected: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|c| {
            c.points
                .iter()
                .filter(|p| region.contains(p.x, c.time))
                .map(|p| (p.scaled_x, p.scaled_f))
                .collect()
        })
        .collect();
    if selected.iter().any(|s| s.is_empty()) {
        return 0.0;
    }
    let lo = selected
        .iter()
        .map(|s| s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min))
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = selected
        .iter()
        .map(|s| s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min);
    if !(hi > lo) {
        return 0.0;
    }
    let sparsest = selected
        .iter()
        .map(|s| s.iter().filter(|p| p.0 >= lo && p.0 <= hi).count())
        .min()
        .unwrap_or(0);
    let n_bins = bins.min(sparsest).max(1);
    let width = (hi - lo) / n_bins as f64;
    let bin_of = |x: f64| -> Option<usize> {
        if x < lo || x > hi {
            return None;
        }
        Some((((x - lo) / width) as usize).min(n_bins - 1))
    };
    let mut sums = vec![vec![(0.0, 0usize); n_bins]; selected.len()];
    for (k, s) in selected.iter().enumerate() {
        for &(x, y) in s {
            if let Some(b) = bin_of(x) {
                sums[k][b].0 += y;
                sums[k][b].1 += 1;
            }
        }
    }
    let m = selected.len() as f64;
    let (mut var_sum, mut sq_sum, mut used) = (0.0, 0.0, 0usize);
    for b in 0..n_bins {
        if sums.iter().any(|c| c[b].1 == 0) {
            continue;
        }
        let vals: Vec<f64> = sums.iter().map(|c| c[b].0 / c[b].1 as f64).collect();
        let mean = vals.iter().sum::<f64>() / m;
        var_sum += vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        sq_sum += mean * mean;
        used += 1;
    }
    if used == 0 || sq_sum == 0.0 {
        return 0.0;
    }
    var_sum / sq_sum
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakReport {
    pub time: usize,
    pub right_peak_x: i64,
    pub left_peak_x: i64,
    /// Predicted right-peak position `(2 - alpha) t / sqrt 2`; the left one is its negative.
    pub predicted: f64,
    pub right_relative_error: f64,
    pub left_relative_error: f64,
    /// Largest `f` with `|x| <= sqrt t`.
    pub central_peak_height: f64,
    /// Largest `f` with `sqrt t < |x| <= min(|peak|) / 2`.
    pub plateau_height: f64,
}

/// Outermost local maximum of the 3-site moving average on the positive side,
/// beyond `|x| > sqrt t`, whose smoothed value clears `threshold`. A flat top
/// counts as one maximum located at its outer end.
fn outer_peak(d: &Density, threshold: f64) -> Option<i64> {
    let inner = (d.time as f64).sqrt();
    let smooth = |x: i64| (d.at(x - 1) + d.at(x) + d.at(x + 1)) / 3.0;
    let mut x = d.max_position();
    while x as f64 > inner {
        let s = smooth(x);
        if s > smooth(x + 1) {
            let mut y = x;
            while y as f64 > inner && smooth(y - 1) == s {
                y -= 1;
            }
            if s >= threshold && smooth(y - 1) < s {
                return Some(x);
            }
            x = y;
        }
        x -= 1;
    }
    None
}

pub fn locate_peaks(density: &Density, alpha: f64) -> Result<PeakReport> {
    let t = density.time;
    if t < 16 {
        return invalid(format!("peak location needs t >= 16, got {t}"));
    }
    let radius = density.support_radius();
    let threshold = 0.1 / (2 * radius + 1) as f64;
    let right = outer_peak(density, threshold)
        .ok_or_else(|| WalkError::EmptyReport("no ballistic maximum on the right".into()))?;
    let left = outer_peak(&density.mirrored(), threshold)
        .map(|x| -x)
        .ok_or_else(|| WalkError::EmptyReport("no ballistic maximum on the left".into()))?;
    let root = (t as f64).sqrt();
    let central_peak_height = density
        .iter()
        .filter(|&(x, _)| (x.abs() as f64) <= root)
        .map(|(_, f)| f)
        .fold(0.0, f64::max);
    let edge = right.abs().min(left.abs()) as f64 / 2.0;
    let plateau_height = density
        .iter()
        .filter(|&(x, _)| {
            let a = x.abs() as f64;
            a > root && a <= edge
        })
        .map(|(_, f)| f)
        .fold(0.0, f64::max);
    let predicted = (2.0 - alpha) * t as f64 / std::f64::consts::SQRT_2;
    Ok(PeakReport {
        time: t,
        right_peak_x: right,
        left_peak_x: left,
        predicted,
        right_relative_error: (right as f64 - predicted).abs() / predicted,
        left_relative_error: (left as f64 + predicted).abs() / predicted,
        central_peak_height,
        plateau_height,
    })
}

/// Shape of `sqrt(t) f` against `u = x / sqrt(t)` for `u >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TailKind {
    /// `amplitude * u^slope`
    PowerLaw {
        slope: f64,
        amplitude: f64,
        valid_range: (f64, f64),
    },
    /// `prefactor * exp(-rate * u^exponent)`
    StretchedExponential {
        prefactor: f64,
        rate: f64,
        exponent: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub kind: TailKind,
    /// Weighted log-space RMS of the power-law fit.
    pub power_law_log_rms: f64,
    /// Weighted log-space RMS of the stretched exponential, when one was fitted.
    pub stretched_log_rms: Option<f64>,
    pub points: usize,
}

pub const TAIL_LOG_RMS_THRESHOLD: f64 = 0.2;
/// Sites with `f` below this are not used.
pub const TAIL_FLOOR: f64 = 1e-6;
const BINS_PER_DECADE: f64 = 10.0;
const RISE_FACTOR: f64 = 1.2;

/// Upper end of the monotone tail: the left edge of the first logarithmic bin
/// whose mean exceeds the running minimum by [`RISE_FACTOR`], which marks the
/// climb toward the ballistic peak.
fn tail_cutoff(points: &[(f64, f64)]) -> f64 {
    let u_max = points.iter().map(|p| p.0).fold(1.0, f64::max);
    let step = 10f64.powf(1.0 / BINS_PER_DECADE);
    let mut lo = 1.0;
    let mut running = f64::INFINITY;
    while lo <= u_max {
        let hi = lo * step;
        let (s, n) = points
            .iter()
            .filter(|p| p.0 >= lo && p.0 < hi)
            .fold((0.0, 0usize), |(s, n), p| (s + p.1, n + 1));
        if n > 0 {
            let mean = s / n as f64;
            if mean > RISE_FACTOR * running {
                return lo;
            }
            running = running.min(mean);
        }
        lo = hi;
    }
    f64::INFINITY
}

/// Points are weighted by `1/u`, which evens out the density of sites per
/// logarithmic interval.
pub fn fit_tail(density: &Density) -> Result<TailFit> {
    let root = (density.time as f64).sqrt();
    if root == 0.0 {
        return invalid("tail fit needs t >= 1");
    }
    let all: Vec<(f64, f64)> = density
        .iter()
        .filter(|&(x, f)| x as f64 >= root && f >= TAIL_FLOOR)
        .map(|(x, f)| (x as f64 / root, f * root))
        .collect();
    let cutoff = tail_cutoff(&all);
    let pts: Vec<(f64, f64)> = all.into_iter().filter(|p| p.0 < cutoff).collect();
    if pts.len() < 8 {
        return invalid(format!("tail fit needs at least 8 positive points, got {}", pts.len()));
    }
    let lu: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let lg: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let w: Vec<f64> = pts.iter().map(|p| 1.0 / p.0).collect();
    let pl = linear_fit(&lu, &lg, Some(&w))?;
    let u_hi = pts.iter().map(|p| p.0).fold(1.0, f64::max);
    let power = TailKind::PowerLaw {
        slope: pl.slope,
        amplitude: pl.intercept.exp(),
        valid_range: (1.0, u_hi),
    };
    let mut fit = TailFit {
        kind: power,
        power_law_log_rms: pl.rms,
        stretched_log_rms: None,
        points: pts.len(),
    };
    if pl.rms > TAIL_LOG_RMS_THRESHOLD {
        if let Some(se) = fit_stretched_exponential(&pts, &w) {
            fit.stretched_log_rms = Some(se.rms);
            if se.exponent > 0.0 && se.exponent < 1.0 && se.rms < pl.rms {
                fit.kind = TailKind::StretchedExponential {
                    prefactor: se.ln_a.exp(),
                    rate: se.rate,
                    exponent: se.exponent,
                };
            }
        }
    }
    Ok(fit)
}

#[derive(Debug, Clone, Copy)]
struct Stretched {
    ln_a: f64,
    rate: f64,
    exponent: f64,
    rms: f64,
}

const GN_MAX_ITER: usize = 200;
const GN_STEP_TOL: f64 = 1e-10;

fn stretched_rms(pts: &[(f64, f64)], w: &[f64], p: [f64; 3]) -> f64 {
    let sw: f64 = w.iter().sum();
    let ss: f64 = pts
        .iter()
        .zip(w)
        .map(|(&(u, g), &w)| {
            let r = g.ln() - (p[0] - p[1] * u.powf(p[2]));
            w * r * r
        })
        .sum();
    (ss / sw).sqrt()
}

/// Starting point from `ln(ln A - ln g) = ln c + gamma ln u` for a few trial
/// prefactors above the data.
fn stretched_start(pts: &[(f64, f64)], w: &[f64]) -> Option<[f64; 3]> {
    let g_max = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let mut best: Option<([f64; 3], f64)> = None;
    for factor in [1.5, 2.0, 3.0, 5.0, 10.0, 30.0] {
        let ln_a = (g_max * factor).ln();
        let (mut xs, mut ys, mut ws) = (vec![], vec![], vec![]);
        for (&(u, g), &wi) in pts.iter().zip(w) {
            let d = ln_a - g.ln();
            if d > 0.0 {
                xs.push(u.ln());
                ys.push(d.ln());
                ws.push(wi);
            }
        }
        let Ok(lf) = linear_fit(&xs, &ys, Some(&ws)) else {
            continue;
        };
        let p = [ln_a, lf.intercept.exp(), lf.slope];
        let r = stretched_rms(pts, w, p);
        if r.is_finite() && best.is_none_or(|(_, b)| r < b) {
            best = Some((p, r));
        }
    }
    best.map(|(p, _)| p)
}

/// Damped Gauss-Newton on `(ln A, c, gamma)` with step halving.
fn fit_stretched_exponential(pts: &[(f64, f64)], w: &[f64]) -> Option<Stretched> {
    let mut p = stretched_start(pts, w)?;
    let mut cost = stretched_rms(pts, w, p);
    for _ in 0..GN_MAX_ITER {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&(u, g), &wi) in pts.iter().zip(w) {
            let up = u.powf(p[2]);
            let r = g.ln() - (p[0] - p[1] * up);
            let j = [1.0, -up, -p[1] * up * u.ln()];
            for a in 0..3 {
                jtr[a] += wi * j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += wi * j[a] * j[b];
                }
            }
        }
        let delta = solve3(jtj, jtr)?;
        let mut scale = 1.0;
        let mut improved = false;
        while scale > 1e-6 {
            let trial = [
                p[0] + scale * delta[0],
                p[1] + scale * delta[1],
                p[2] + scale * delta[2],
            ];
            let c = stretched_rms(pts, w, trial);
            if c.is_finite() && c <= cost {
                p = trial;
                cost = c;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        let step = scale * (delta[0].powi(2) + delta[1].powi(2) + delta[2].powi(2)).sqrt();
        if !improved || step < GN_STEP_TOL {
            break;
        }
    }
    Some(Stretched {
        ln_a: p[0],
        rate: p[1],
        exponent: p[2],
        rms: cost,
    })
}

/// Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub residual: f64,
    pub slope_x2: f64,
    pub x2_at_tmax: f64,
    /// Set on the row with the smallest `x2_at_tmax`.
    pub min_flag: bool,
}

/// One independent ensemble per `alpha`, all with the schedule's `n`, the
/// base seed, and the base run length. Rows come back in input order.
pub fn sweep_alpha(base: &RunConfig, alphas: &[f64]) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return invalid("alpha list is empty");
    }
    if alphas.windows(2).any(|w| !(w[0] < w[1])) {
        return invalid("alphas must be strictly increasing");
    }
    let n = match base.schedule {
        StepSchedule::RandomTwoPoint { n, .. } => n,
        _ => return invalid("sweep needs a random two-point base schedule"),
    };
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
        }
        let mut cfg = base.clone();
        cfg.schedule = StepSchedule::random(alpha, n)?;
        cfg.snapshot_times = vec![cfg.t_max];
        rows.push(sweep_row(alpha, &run_ensemble(&cfg)?.moments)?);
    }
    flag_minimum(&mut rows);
    Ok(rows)
}

/// Fits and slope for one sweep point, using the default windows.
pub fn sweep_row(alpha: f64, moments: &MomentSeries) -> Result<SweepRow> {
    let t_max = moments.t_max();
    let fit = fit_moment_forms(moments, default_fit_window(t_max))?;
    Ok(SweepRow {
        alpha,
        b1: fit.b1,
        b2: fit.b2,
        b3: fit.b3,
        b4: fit.b4,
        residual: fit.relative_residual_max,
        slope_x2: estimate_slope(moments, Quantity::SecondMoment, default_slope_window(t_max))?,
        x2_at_tmax: moments.second_moment[t_max],
        min_flag: false,
    })
}

pub fn flag_minimum(rows: &mut [SweepRow]) {
    for r in rows.iter_mut() {
        r.min_flag = false;
    }
    if let Some(best) = rows
        .iter_mut()
        .min_by(|a, b| a.x2_at_tmax.total_cmp(&b.x2_at_tmax))
    {
        best.min_flag = true;
    }
}

/// Power laws of `b2` and `b4` against `1 - alpha`.
pub fn decoherence_power_laws(rows: &[SweepRow]) -> Result<(PowerLawFit, PowerLawFit)> {
    let b2: Vec<(f64, f64)> = rows.iter().map(|r| (1.0 - r.alpha, r.b2)).collect();
    let b4: Vec<(f64, f64)> = rows.iter().map(|r| (1.0 - r.alpha, r.b4)).collect();
    Ok((fit_power_law(&b2)?, fit_power_law(&b4)?))
}
