//! Composite Simpson quadrature for scalar and vector integrands.
//!
//! The policy utilities and the distribution tests both integrate smooth
//! densities over finite intervals; composite Simpson with a caller-chosen
//! panel count is accurate to machine precision for these integrands and
//! keeps evaluation counts predictable (the panel count is part of the
//! policy's definition, so it must not be adaptive).

use nalgebra::DVector;

/// Integrate `f` over `[lo, hi]` with `panels` composite-Simpson panels.
///
/// An odd panel count is rounded up to the next even one; a degenerate
/// interval integrates to zero.
pub fn simpson<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, panels: usize) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let n = panels.max(2).next_multiple_of(2);
    let h = (hi - lo) / n as f64;
    let mut sum = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(lo + h * i as f64);
    }
    sum * h / 3.0
}

/// Integrate a vector-valued integrand over `[lo, hi]`.
///
/// `f(x, out)` must overwrite `out` with the integrand at `x`; the result
/// accumulates without per-sample allocation.
pub fn simpson_vec<F>(mut f: F, lo: f64, hi: f64, panels: usize, dim: usize) -> DVector<f64>
where
    F: FnMut(f64, &mut DVector<f64>),
{
    let mut acc = DVector::zeros(dim);
    if hi <= lo {
        return acc;
    }
    let n = panels.max(2).next_multiple_of(2);
    let h = (hi - lo) / n as f64;
    let mut tmp = DVector::zeros(dim);
    f(lo, &mut tmp);
    acc += &tmp;
    f(hi, &mut tmp);
    acc += &tmp;
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        f(lo + h * i as f64, &mut tmp);
        acc.axpy(w, &tmp, 1.0);
    }
    acc * (h / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn integrates_polynomials_exactly() {
        // Simpson is exact for cubics.
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 2);
        // Antiderivative x^4/4 - x^2 + x evaluated on [-1, 2]: (4-4+2) - (1/4-1-1) = 3.75.
        assert_relative_eq!(v, 3.75, max_relative = 1e-14);
    }

    #[test]
    fn converges_on_smooth_transcendentals() {
        let v = simpson(f64::sin, 0.0, std::f64::consts::PI, 1 << 10);
        assert_relative_eq!(v, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn odd_panel_counts_round_up() {
        let odd = simpson(|x| x * x, 0.0, 1.0, 3);
        let even = simpson(|x| x * x, 0.0, 1.0, 4);
        assert_eq!(odd, even);
    }

    #[test]
    fn degenerate_interval_is_zero() {
        assert_eq!(simpson(|x| x, 1.0, 1.0, 8), 0.0);
        assert_eq!(simpson(|x| x, 2.0, 1.0, 8), 0.0);
    }

    #[test]
    fn vector_integrand_matches_componentwise_scalar() {
        let v = simpson_vec(
            |x, out| {
                out[0] = x.sin();
                out[1] = x.cos();
            },
            0.0,
            1.5,
            256,
            2,
        );
        assert_relative_eq!(v[0], simpson(f64::sin, 0.0, 1.5, 256), epsilon = 1e-14);
        assert_relative_eq!(v[1], simpson(f64::cos, 0.0, 1.5, 256), epsilon = 1e-14);
    }
}
