//! One-dimensional golden-section search shared by the extrema finder and
//! the detuning optimizer.

const INV_PHI: f64 = 0.618_033_988_749_894_9; // (√5 − 1)/2

/// Maximize a unimodal-ish function on `[a, b]` to interval tolerance
/// `tol`; returns `(argmax, max)`. The best sampled point is tracked, so
/// the result is never worse than the bracket endpoints.
pub(crate) fn golden_max<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
    let mut best = (lo, f(lo));
    let fb = f(hi);
    if fb > best.1 {
        best = (hi, fb);
    }
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
        let (x, v) = if fc > fd { (c, fc) } else { (d, fd) };
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}
