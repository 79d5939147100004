//! Post-processing: cumulative (N-)curves, passing and travel times,
//! self-convergence rates, equilibrium detection, periodic-oscillation
//! fitting, and wave-speed measurement from density fields.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::math;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnalysisError {
    NegativeFlux { index: usize, value: f64 },
    /// The requested vehicle has not passed the location within the horizon.
    NotYetPassed { requested: f64, last: f64 },
    /// Curves must share the epoch and step for travel-time differencing.
    Unsynchronized,
    /// Grids must be nested (2N against N) for the error pairing.
    NonNestedGrids { coarse: usize, fine: usize },
    EmptyInput,
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisError::NegativeFlux { index, value } => {
                write!(f, "negative flux {value} at step {index}")
            }
            AnalysisError::NotYetPassed { requested, last } => {
                write!(f, "vehicle {requested} has not passed (cumulative count {last})")
            }
            AnalysisError::Unsynchronized => write!(f, "cumulative curves are not synchronized"),
            AnalysisError::NonNestedGrids { coarse, fine } => {
                write!(f, "grids of {coarse} and {fine} cells are not nested")
            }
            AnalysisError::EmptyInput => write!(f, "empty input series"),
        }
    }
}

impl core::error::Error for AnalysisError {}

/// Cumulative vehicle count past a location: samples at `t0 + i dt` for
/// `i = 0..=n`, starting at zero at the synchronization epoch.
#[derive(Clone, Debug)]
pub struct NCurve {
    pub label: String,
    pub t0: f64,
    pub dt: f64,
    pub counts: Vec<f64>,
}

impl NCurve {
    pub fn final_count(&self) -> f64 {
        *self.counts.last().unwrap_or(&0.0)
    }

    /// Count at an arbitrary time by linear interpolation, clamped to the
    /// curve's span.
    pub fn at(&self, t: f64) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        let s = (t - self.t0) / self.dt;
        if s <= 0.0 {
            return self.counts[0];
        }
        let last = (self.counts.len() - 1) as f64;
        if s >= last {
            return *self.counts.last().expect("non-empty");
        }
        let i = s as usize;
        let frac = s - i as f64;
        self.counts[i] + frac * (self.counts[i + 1] - self.counts[i])
    }
}

/// Running sum of a per-step flux series.
pub fn n_curve(label: &str, flux: &[f64], t0: f64, dt: f64) -> Result<NCurve, AnalysisError> {
    let mut counts = Vec::with_capacity(flux.len() + 1);
    counts.push(0.0);
    let mut acc = 0.0;
    let mut comp = 0.0;
    for (i, f) in flux.iter().enumerate() {
        if *f < 0.0 {
            return Err(AnalysisError::NegativeFlux { index: i, value: *f });
        }
        // Kahan accumulation keeps long sums honest.
        let y = f * dt - comp;
        let t = acc + y;
        comp = (t - acc) - y;
        acc = t;
        counts.push(acc);
    }
    Ok(NCurve { label: String::from(label), t0, dt, counts })
}

/// Earliest time the curve reaches `n0`, with linear interpolation inside a
/// step (the min rule handles plateaus).
pub fn passing_time(n0: f64, curve: &NCurve) -> Result<f64, AnalysisError> {
    if curve.counts.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    if n0 <= curve.counts[0] {
        return Ok(curve.t0);
    }
    let last = curve.final_count();
    if n0 > last {
        return Err(AnalysisError::NotYetPassed { requested: n0, last });
    }
    // First sample at or above n0 (counts are non-decreasing).
    let mut lo = 0usize;
    let mut hi = curve.counts.len() - 1;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if curve.counts[mid] >= n0 {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let i = lo;
    let prev = curve.counts[i - 1];
    let frac = if curve.counts[i] > prev { (n0 - prev) / (curve.counts[i] - prev) } else { 0.0 };
    Ok(curve.t0 + ((i - 1) as f64 + frac) * curve.dt)
}

fn check_synchronized(a: &NCurve, b: &NCurve) -> Result<(), AnalysisError> {
    if math::abs(a.t0 - b.t0) > 1e-9 || math::abs(a.dt - b.dt) > 1e-15 {
        return Err(AnalysisError::Unsynchronized);
    }
    Ok(())
}

/// Travel time of vehicle `n0` between two synchronized curves.
pub fn vehicle_travel_time(
    n0: f64,
    upstream: &NCurve,
    downstream: &NCurve,
) -> Result<f64, AnalysisError> {
    check_synchronized(upstream, downstream)?;
    Ok(passing_time(n0, downstream)? - passing_time(n0, upstream)?)
}

#[derive(Clone, Debug)]
pub struct TravelTimeReport {
    /// Number of whole vehicles evaluated.
    pub vehicles: u64,
    pub total: f64,
    pub average: f64,
}

/// Total and average travel time over whole-vehicle indices `1..=N` where
/// `N` is the largest count both curves reach.
pub fn travel_times(
    upstream: &NCurve,
    downstream: &NCurve,
) -> Result<TravelTimeReport, AnalysisError> {
    check_synchronized(upstream, downstream)?;
    let n = math::floor(upstream.final_count().min(downstream.final_count())) as u64;
    let mut total = 0.0;
    let mut comp = 0.0;
    for m in 1..=n {
        let tt = vehicle_travel_time(m as f64, upstream, downstream)?;
        let y = tt - comp;
        let t = total + y;
        comp = (t - total) - y;
        total = t;
    }
    let average = if n > 0 { total / n as f64 } else { 0.0 };
    Ok(TravelTimeReport { vehicles: n, total, average })
}

/// Average travel time as the area between synchronized curves divided by
/// the vehicle count (trapezoid quadrature in time).
pub fn average_travel_time_by_area(
    upstream: &NCurve,
    downstream: &NCurve,
) -> Result<f64, AnalysisError> {
    check_synchronized(upstream, downstream)?;
    let n = upstream.counts.len().min(downstream.counts.len());
    if n < 2 {
        return Err(AnalysisError::EmptyInput);
    }
    let mut area = 0.0;
    for i in 0..n - 1 {
        let gap0 = upstream.counts[i] - downstream.counts[i];
        let gap1 = upstream.counts[i + 1] - downstream.counts[i + 1];
        area += 0.5 * (gap0 + gap1) * upstream.dt;
    }
    let vehicles = math::floor(upstream.final_count().min(downstream.final_count()));
    if vehicles <= 0.0 {
        return Ok(0.0);
    }
    Ok(area / vehicles)
}

/// Centroid of a release-rate profile: the average time at which flow leaves
/// the origin.
pub fn loading_time(flux: &[f64], dt: f64) -> Result<f64, AnalysisError> {
    if flux.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut weighted = 0.0;
    let mut total = 0.0;
    for (i, f) in flux.iter().enumerate() {
        if *f < 0.0 {
            return Err(AnalysisError::NegativeFlux { index: i, value: *f });
        }
        let t_mid = (i as f64 + 0.5) * dt;
        weighted += f * t_mid;
        total += f;
    }
    if total <= 0.0 {
        return Ok(0.0);
    }
    Ok(weighted / total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    LInf,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rate {
    /// Successive solutions were identical; the rate is undefined.
    Exact,
    Value(f64),
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub resolutions: Vec<usize>,
    pub errors: Vec<f64>,
    pub rates: Vec<Rate>,
    pub norm: Norm,
}

fn norm_of(values: &[f64], weights: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => {
            let wsum: f64 = weights.iter().sum();
            values.iter().zip(weights).map(|(v, w)| math::abs(*v) * w).sum::<f64>() / wsum
        }
        Norm::L2 => {
            let wsum: f64 = weights.iter().sum();
            math::sqrt(values.iter().zip(weights).map(|(v, w)| v * v * w).sum::<f64>() / wsum)
        }
        Norm::LInf => values.iter().fold(0.0f64, |m, v| m.max(math::abs(*v))),
    }
}

/// Field self-convergence: each solution is a set of per-link cell vectors
/// with weights (lane counts); successive solutions must nest 2:1. The
/// pairing averages fine-grid siblings against their coarse parent cell.
pub fn convergence_rate_fields(
    solutions: &[Vec<(Vec<f64>, f64)>],
    norm: Norm,
) -> Result<ConvergenceReport, AnalysisError> {
    if solutions.len() < 2 {
        return Err(AnalysisError::EmptyInput);
    }
    let mut resolutions = Vec::new();
    let mut errors = Vec::new();
    for pair in solutions.windows(2) {
        let (coarse, fine) = (&pair[0], &pair[1]);
        if coarse.len() != fine.len() {
            return Err(AnalysisError::NonNestedGrids { coarse: coarse.len(), fine: fine.len() });
        }
        let mut diffs = Vec::new();
        let mut weights = Vec::new();
        for ((cv, cw), (fv, _)) in coarse.iter().zip(fine) {
            if fv.len() != 2 * cv.len() {
                return Err(AnalysisError::NonNestedGrids { coarse: cv.len(), fine: fv.len() });
            }
            for i in 0..cv.len() {
                diffs.push(0.5 * (fv[2 * i] + fv[2 * i + 1]) - cv[i]);
                weights.push(*cw);
            }
        }
        resolutions.push(coarse.iter().map(|(v, _)| v.len()).sum());
        errors.push(norm_of(&diffs, &weights, norm));
    }
    resolutions.push(solutions.last().expect("non-empty").iter().map(|(v, _)| v.len()).sum());
    Ok(ConvergenceReport { resolutions, rates: rates_from_errors(&errors), errors, norm })
}

/// Scalar-sequence self-convergence (e.g. average travel times):
/// `eps = |T(2N) - T(N)|`, `r = log2(eps_i / eps_{i+1})`.
pub fn convergence_rate_scalars(
    resolutions: &[usize],
    values: &[f64],
) -> Result<ConvergenceReport, AnalysisError> {
    if values.len() < 2 || values.len() != resolutions.len() {
        return Err(AnalysisError::EmptyInput);
    }
    let errors: Vec<f64> = values.windows(2).map(|w| math::abs(w[1] - w[0])).collect();
    Ok(ConvergenceReport {
        resolutions: resolutions.to_vec(),
        rates: rates_from_errors(&errors),
        errors,
        norm: Norm::L1,
    })
}

fn rates_from_errors(errors: &[f64]) -> Vec<Rate> {
    errors
        .windows(2)
        .map(|w| {
            if w[1] == 0.0 {
                Rate::Exact
            } else {
                Rate::Value(math::log2(w[0] / w[1]))
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct EquilibriumReport {
    pub reached: bool,
    /// End of the first window satisfying the tolerance.
    pub t_eq: Option<f64>,
}

/// Equilibrium detection on the per-step maximum density change (normalized
/// by jam). Reached when the pattern stays below `tol` from some point to
/// the end of the run, for at least a window of length `window`; `t_eq` is
/// the end of the first such window. A quiet lull followed by renewed
/// activity does not count.
pub fn detect_equilibrium(max_delta: &[f64], dt: f64, tol: f64, window: f64) -> EquilibriumReport {
    let need = (window / dt) as usize;
    if need == 0 || max_delta.len() < need {
        return EquilibriumReport { reached: false, t_eq: None };
    }
    let last_bad = max_delta.iter().rposition(|d| *d >= tol);
    let quiet_from = last_bad.map(|i| i + 1).unwrap_or(0);
    if max_delta.len() - quiet_from >= need {
        EquilibriumReport { reached: true, t_eq: Some((quiet_from + need) as f64 * dt) }
    } else {
        EquilibriumReport { reached: false, t_eq: None }
    }
}

#[derive(Clone, Debug)]
pub struct OscillationFit {
    pub rho_max: f64,
    pub rho_min: f64,
    pub period: f64,
    pub alpha: f64,
    /// Root-mean-square residual of the logistic model, normalized by the
    /// oscillation amplitude.
    pub residual: f64,
    pub cycles: usize,
}

/// Fit the periodic logistic waveform to a post-transient series.
///
/// Extrema give the amplitude, mean up-crossings the period, and a
/// golden-section least-squares pass the steepness `alpha` of
/// `rho(t) = rho_max - (rho_max - rho_min) / (1 + exp[-alpha (rho_max -
/// rho_min)(t - T/4)])` over each half period.
pub fn fit_periodic(series: &[f64], dt: f64, transient_cut: f64) -> Option<OscillationFit> {
    let skip = ((transient_cut / dt) as usize).min(series.len());
    let data = &series[skip..];
    if data.len() < 8 {
        return None;
    }
    let rho_max = data.iter().fold(f64::MIN, |m, v| m.max(*v));
    let rho_min = data.iter().fold(f64::MAX, |m, v| m.min(*v));
    let amp = rho_max - rho_min;
    if !(amp > 0.0) {
        return None;
    }
    let mean = 0.5 * (rho_max + rho_min);

    // Mean crossings with linear interpolation, in sample units.
    let mut ups: Vec<f64> = Vec::new();
    let mut downs: Vec<f64> = Vec::new();
    for i in 1..data.len() {
        let (a, b) = (data[i - 1], data[i]);
        if a < mean && b >= mean {
            ups.push((i - 1) as f64 + (mean - a) / (b - a));
        }
        if a > mean && b <= mean {
            downs.push((i - 1) as f64 + (mean - a) / (b - a));
        }
    }
    if ups.len() < 2 {
        return None;
    }
    let cycles = ups.len() - 1;
    let period = (ups.last().expect("len >= 2") - ups[0]) / cycles as f64 * dt;
    if period <= 0.0 {
        return None;
    }

    // Phase origin: a down-crossing sits at T/4 in the model.
    let phase0 = downs.first().copied().unwrap_or(ups[0]) * dt - 0.25 * period;
    let model = |alpha: f64, rmax: f64, a: f64, t: f64| -> f64 {
        let phase = ((t - phase0) % period + period) % period;
        let half = 0.5 * period;
        if phase < half {
            rmax - a / (1.0 + math::exp(-alpha * a * (phase - 0.25 * period)))
        } else {
            rmax - a / (1.0 + math::exp(alpha * a * (phase - 0.75 * period)))
        }
    };
    let sse = |alpha: f64, rmax: f64, a: f64| -> f64 {
        let mut s = 0.0;
        for (i, v) in data.iter().enumerate() {
            let d = v - model(alpha, rmax, a, i as f64 * dt);
            s += d * d;
        }
        s
    };
    // The sampled extrema underestimate the asymptotic levels because the
    // logistic never quite plateaus inside a half period. Alternate between
    // the least-squares alpha (golden section on log-alpha) and a clip
    // correction of the levels.
    let (mut rmax, mut rmin, mut a) = (rho_max, rho_min, amp);
    let mut alpha = 0.0;
    for _ in 0..3 {
        let (log_alpha, _) =
            math::golden_max(|la| -sse(math::exp(la), rmax, a), 0.0, 14.0, 1e-10);
        alpha = math::exp(log_alpha);
        let clip = 1.0 / (1.0 + math::exp(alpha * a * 0.25 * period));
        if clip < 0.25 {
            a = (rho_max - rho_min) / (1.0 - 2.0 * clip);
            rmax = rho_max + a * clip;
            rmin = rho_min - a * clip;
        }
    }
    let residual = math::sqrt(sse(alpha, rmax, a) / data.len() as f64) / a;
    Some(OscillationFit { rho_max: rmax, rho_min: rmin, period, alpha, residual, cycles })
}

/// Mean of the series over the last `cycles` whole periods.
pub fn periodic_mean(series: &[f64], dt: f64, period: f64, cycles: usize) -> Option<f64> {
    let per = (period / dt) as usize;
    let span = per * cycles;
    if per == 0 || span == 0 || span > series.len() {
        return None;
    }
    let tail = &series[series.len() - span..];
    Some(tail.iter().sum::<f64>() / span as f64)
}

/// Least-squares speed of a moving level-set crossing in a space-time field.
///
/// `field[sample][cell]` on cell centers `x`, sampled at `t`. At each sample
/// the first crossing of `level` after `x_min` is located by linear
/// interpolation; samples without a crossing are skipped.
pub fn feature_speed(
    t: &[f64],
    x: &[f64],
    field: &[Vec<f64>],
    level: f64,
    x_min: f64,
    rising: bool,
) -> Option<f64> {
    let mut ts: Vec<f64> = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for (ti, row) in field.iter().enumerate() {
        for i in 1..row.len() {
            if x[i - 1] < x_min {
                continue;
            }
            let (a, b) = (row[i - 1], row[i]);
            let crossed = if rising { a < level && b >= level } else { a > level && b <= level };
            if crossed {
                let frac = (level - a) / (b - a);
                xs.push(x[i - 1] + frac * (x[i] - x[i - 1]));
                ts.push(t[ti]);
                break;
            }
        }
    }
    if ts.len() < 3 {
        return None;
    }
    // Ordinary least-squares slope.
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let xm = xs.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (ti, xi) in ts.iter().zip(&xs) {
        num += (ti - tm) * (xi - xm);
        den += (ti - tm) * (ti - tm);
    }
    if den == 0.0 {
        return None;
    }
    Some(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::abs;
    use alloc::vec;

    #[test]
    fn n_curve_accumulates() {
        let nc = n_curve("b", &[10.0, 10.0, 10.0], 0.0, 0.5).unwrap();
        assert_eq!(nc.counts, vec![0.0, 5.0, 10.0, 15.0]);
        assert_eq!(nc.final_count(), 15.0);
        let flat = n_curve("b", &[0.0, 0.0], 0.0, 1.0).unwrap();
        assert!(flat.counts.iter().all(|c| *c == 0.0));
        assert!(n_curve("b", &[1.0, -0.5], 0.0, 1.0).is_err());
    }

    #[test]
    fn passing_time_interpolates_and_respects_min_rule() {
        // Linear curve N = q t: vehicle q t* passes at t*.
        let q = 100.0;
        let flux = vec![q; 100];
        let nc = n_curve("b", &flux, 0.0, 0.1).unwrap();
        let t = passing_time(q * 3.21, &nc).unwrap();
        assert!(abs(t - 3.21) < 1e-9);
        assert_eq!(passing_time(0.0, &nc).unwrap(), 0.0);
        // Plateaued curve: the earliest time the plateau value is reached.
        let mut flux = vec![10.0; 10];
        flux.extend_from_slice(&[0.0; 10]);
        let nc = n_curve("b", &flux, 0.0, 1.0).unwrap();
        let t = passing_time(100.0, &nc).unwrap();
        assert!(abs(t - 10.0) < 1e-9);
        assert!(matches!(passing_time(100.1, &nc), Err(AnalysisError::NotYetPassed { .. })));
    }

    #[test]
    fn passing_time_is_generalized_inverse() {
        let flux = vec![5.0, 0.0, 20.0, 3.0, 0.0, 7.0];
        let nc = n_curve("b", &flux, 0.0, 1.0).unwrap();
        for n0 in [0.1, 4.9, 5.0, 12.0, 27.9, 30.0] {
            let t = passing_time(n0, &nc).unwrap();
            assert!(nc.at(t) >= n0 - 1e-9);
            if t > 0.0 {
                assert!(nc.at(t - 1e-6) <= n0 + 1e-9);
            }
        }
    }

    #[test]
    fn free_flow_travel_time() {
        // 20-mile link at 65 mph: every vehicle takes 0.3077 hours. Flow
        // stops early enough that all vehicles exit, so the two curves
        // plateau at the same count and the area identity applies.
        let q = 1000.0;
        let dt = 0.001;
        let steps = 3000;
        let shift = (20.0f64 / 65.0 / dt) as usize;
        let mut up: Vec<f64> = vec![q; 2000];
        up.extend(vec![0.0; steps - 2000]);
        let mut down = vec![0.0; shift];
        down.extend(vec![q; 2000]);
        down.extend(vec![0.0; steps - 2000 - shift]);
        let a = n_curve("up", &up, 0.0, dt).unwrap();
        let b = n_curve("down", &down, 0.0, dt).unwrap();
        let tt = travel_times(&a, &b).unwrap();
        assert!(abs(tt.average - 20.0 / 65.0) < 1e-3, "{}", tt.average);
        // The area rule agrees within a vehicle-step.
        let by_area = average_travel_time_by_area(&a, &b).unwrap();
        assert!(abs(by_area - tt.average) < 2.0 * dt, "{by_area} vs {}", tt.average);
    }

    #[test]
    fn unsynchronized_curves_error() {
        let a = n_curve("a", &[1.0; 10], 0.0, 0.1).unwrap();
        let b = n_curve("b", &[1.0; 10], 0.5, 0.1).unwrap();
        assert!(matches!(travel_times(&a, &b), Err(AnalysisError::Unsynchronized)));
    }

    #[test]
    fn loading_time_of_uniform_profile() {
        let flux = vec![7.0; 1000];
        let lt = loading_time(&flux, 0.01).unwrap();
        assert!(abs(lt - 5.0) < 1e-9);
        assert_eq!(loading_time(&[0.0, 0.0], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn convergence_rate_of_published_error_pair() {
        // The published L1 pair (3.31e-3, 1.65e-3) gives a rate of 1.00.
        let rep = convergence_rate_scalars(&[64, 128, 256], &[0.0, 3.31e-3, 3.31e-3 + 1.65e-3])
            .unwrap();
        match rep.rates[0] {
            Rate::Value(r) => assert!(abs(r - 1.0) < 5e-3, "{r}"),
            Rate::Exact => panic!("finite rate expected"),
        }
    }

    #[test]
    fn manufactured_first_order_data_rates_at_one() {
        // eps proportional to 1/N must give exactly 1.000.
        let eps = [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0, 1.0 / 512.0];
        let mut values = vec![0.0];
        for e in eps {
            let last = *values.last().unwrap();
            values.push(last + e);
        }
        let rep =
            convergence_rate_scalars(&[64, 128, 256, 512, 1024], &values).unwrap();
        for r in &rep.rates {
            match r {
                Rate::Value(v) => assert!(abs(v - 1.0) < 1e-6),
                Rate::Exact => panic!(),
            }
        }
    }

    #[test]
    fn convergence_rate_fields_nested_pairing() {
        // Constant profiles nest exactly, so the pairwise differences are
        // the imposed offsets: 1e-2 then 5e-3, a rate of one.
        let make = |n: usize, level: f64| -> Vec<(Vec<f64>, f64)> { vec![(vec![level; n], 2.0)] };
        let sols = vec![make(100, 0.0), make(200, 1e-2), make(400, 1.5e-2)];
        let rep = convergence_rate_fields(&sols, Norm::L1).unwrap();
        match rep.rates[0] {
            Rate::Value(r) => assert!(abs(r - 1.0) < 1e-6, "rate {r}"),
            Rate::Exact => panic!("expected a finite rate"),
        }
        // Identical solutions report an exact match.
        let rep =
            convergence_rate_fields(&[make(100, 1.0), make(200, 1.0), make(400, 1.0)], Norm::L1)
                .unwrap();
        assert!(matches!(rep.rates[0], Rate::Exact));
        // Non-nested grids are rejected.
        assert!(convergence_rate_fields(&[make(100, 0.0), make(150, 0.0)], Norm::L1).is_err());
    }

    #[test]
    fn equilibrium_detection() {
        let dt = 0.01;
        // Constant trajectory: reached at the window length.
        let deltas = vec![0.0; 100];
        let rep = detect_equilibrium(&deltas, dt, 1e-6, 0.5);
        assert!(rep.reached);
        assert!(abs(rep.t_eq.unwrap() - 0.5) < 1e-12);
        // A late disturbance postpones it.
        let mut deltas = vec![0.0; 100];
        deltas[60] = 1.0;
        let rep = detect_equilibrium(&deltas, dt, 1e-6, 0.3);
        assert!(rep.reached);
        assert!(abs(rep.t_eq.unwrap() - 0.91) < 1e-9);
        // Persistent oscillation: never reached.
        let osc: Vec<f64> = (0..200).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
        assert!(!detect_equilibrium(&osc, dt, 1e-6, 0.3).reached);
    }

    #[test]
    fn periodic_fit_roundtrip() {
        // Synthesize the logistic waveform and recover its parameters.
        let (rho_max, rho_min, period, alpha) = (0.5, 0.3, 0.2, 500.0);
        let amp = rho_max - rho_min;
        let dt = 0.0002;
        let model = |t: f64| -> f64 {
            let phase = (t % period + period) % period;
            if phase < 0.5 * period {
                rho_max - amp / (1.0 + math::exp(-alpha * amp * (phase - 0.25 * period)))
            } else {
                rho_max - amp / (1.0 + math::exp(alpha * amp * (phase - 0.75 * period)))
            }
        };
        let series: Vec<f64> = (0..6000).map(|i| model(i as f64 * dt)).collect();
        let fit = fit_periodic(&series, dt, 0.1).unwrap();
        assert!(abs(fit.rho_max - rho_max) / rho_max < 0.01);
        assert!(abs(fit.rho_min - rho_min) / rho_min < 0.01);
        assert!(abs(fit.period - period) / period < 0.01);
        assert!(abs(fit.alpha - alpha) / alpha < 0.01, "alpha {}", fit.alpha);
        assert!(fit.residual < 0.01);
        // A constant series yields no fit.
        assert!(fit_periodic(&vec![1.0; 1000], dt, 0.0).is_none());
    }

    #[test]
    fn feature_speed_of_translating_front() {
        // A step profile moving at -13.33 length units per time unit.
        let speed = -13.3333;
        let x: Vec<f64> = (0..200).map(|i| i as f64 * 10.0).collect();
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let field: Vec<Vec<f64>> = t
            .iter()
            .map(|&ti| {
                x.iter().map(|&xi| if xi > 1500.0 + speed * ti { 1.0 } else { 0.0 }).collect()
            })
            .collect();
        let s = feature_speed(&t, &x, &field, 0.5, 0.0, true).unwrap();
        assert!(abs(s - speed) / abs(speed) < 0.05, "{s}");
    }

    #[test]
    fn periodic_mean_over_whole_cycles() {
        let dt = 0.01;
        let series: Vec<f64> =
            (0..1000).map(|i| 2.0 + libm::sin(2.0 * core::f64::consts::PI * i as f64 / 50.0)).collect();
        // Period 0.5 in time units; the mean over whole cycles is 2.
        let m = periodic_mean(&series, dt, 0.5, 4).unwrap();
        assert!(abs(m - 2.0) < 1e-2, "{m}");
    }
}
