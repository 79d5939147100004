//! Float helpers routed through `libm` so results are identical with and
//! without `std`.

pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub(crate) fn log2(x: f64) -> f64 {
    libm::log2(x)
}

pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}

pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Golden-section search for the maximizer of `f` on `[a, b]`.
///
/// `f` must be unimodal on the interval. Returns `(argmax, max)` with the
/// bracket narrowed to `rel_tol * max(1, |b|)`.
pub(crate) fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, rel_tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let tol = rel_tol * if abs(b) > 1.0 { abs(b) } else { 1.0 };
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Bisection for `f(x) = target` on `[a, b]` where `f` is monotone.
///
/// The bracket endpoints need not satisfy `f(a) <= target <= f(b)`; the root
/// is clamped to the interval. `abs_tol` is the stopping width in `x`.
pub(crate) fn bisect_monotone<F: Fn(f64) -> f64>(
    f: F,
    mut a: f64,
    mut b: f64,
    target: f64,
    abs_tol: f64,
) -> f64 {
    let increasing = f(b) >= f(a);
    while b - a > abs_tol {
        let m = 0.5 * (a + b);
        let fm = f(m);
        let go_right = if increasing { fm < target } else { fm > target };
        if go_right {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}
