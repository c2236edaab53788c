//! Scalar noise distributions, their drift laws, and density comparisons.
//!
//! Each node owns the distribution of its local environmental noise and
//! re-estimates or re-parameterizes it every tick; other nodes work from
//! possibly stale copies. The policy layer needs three things from a
//! distribution: exact low-order moments (the costs are quadratic in the
//! noise, so means and second moments determine expected gradients),
//! pointwise densities (for the worst-case density-shift trigger), and
//! sampling (for Monte Carlo gradient estimates).
//!
//! Two parametric families cover the built-in scenarios — a Rayleigh
//! truncated to a finite window and a Weibull — plus an empirical
//! histogram form for sample-based pipelines. Moments use closed forms
//! (error function and gamma function respectively), not quadrature, so
//! they are exact to machine precision; the quadrature routes exist in
//! tests as an independent check.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma;

use crate::{Error, Result};

/// Quantile used as the effective upper end of unbounded supports when a
/// finite evaluation window is needed (density grids, quadrature).
pub const TAIL_QUANTILE: f64 = 0.9999;

/// Grid points used for the coarse stage of [`sup_density_diff`].
const SUP_DIFF_GRID: usize = 512;

/// A scalar probability density, exchangeable between nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Pdf {
    /// Rayleigh with scale `sigma`, conditioned on `[lo, hi]`.
    TruncatedRayleigh { sigma: f64, lo: f64, hi: f64 },
    /// Two-parameter Weibull on `[0, inf)`.
    Weibull { scale: f64, shape: f64 },
    /// Histogram over raw samples (equal-width bins, `ceil(sqrt(N))` of them).
    Empirical { samples: Vec<f64> },
}

impl Pdf {
    pub fn truncated_rayleigh(sigma: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::NonPositive { name: "sigma", value: sigma });
        }
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::BadSupport { lo, hi });
        }
        Ok(Pdf::TruncatedRayleigh { sigma, lo, hi })
    }

    pub fn weibull(scale: f64, shape: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::NonPositive { name: "scale", value: scale });
        }
        if !(shape > 0.0) || !shape.is_finite() {
            return Err(Error::NonPositive { name: "shape", value: shape });
        }
        Ok(Pdf::Weibull { scale, shape })
    }

    /// Empirical distribution over raw samples. Samples are stored sorted;
    /// moments are sample moments, draws resample uniformly.
    pub fn empirical(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some(&bad) = samples.iter().find(|s| !s.is_finite()) {
            return Err(Error::NotFinite { name: "sample", value: bad });
        }
        samples.sort_by(|a, b| a.partial_cmp(b).expect("finite samples compare"));
        Ok(Pdf::Empirical { samples })
    }

    /// A unit point mass at `x`, as a one-sample empirical distribution.
    pub fn point_mass(x: f64) -> Result<Self> {
        Self::empirical(vec![x])
    }

    /// Flat scalar encoding for message-trace logging: a leading family
    /// tag (0 truncated Rayleigh, 1 Weibull, 2 empirical) followed by the
    /// family's parameters (or the raw samples).
    pub fn wire_scalars(&self) -> Vec<f64> {
        match self {
            Pdf::TruncatedRayleigh { sigma, lo, hi } => vec![0.0, *sigma, *lo, *hi],
            Pdf::Weibull { scale, shape } => vec![1.0, *scale, *shape],
            Pdf::Empirical { samples } => {
                let mut out = Vec::with_capacity(samples.len() + 1);
                out.push(2.0);
                out.extend_from_slice(samples);
                out
            }
        }
    }

    /// Interval outside which the density is zero (or, for the Weibull,
    /// negligible: the upper end is the [`TAIL_QUANTILE`] quantile).
    pub fn support(&self) -> (f64, f64) {
        match self {
            Pdf::TruncatedRayleigh { lo, hi, .. } => (*lo, *hi),
            Pdf::Weibull { .. } => (0.0, self.quantile(TAIL_QUANTILE)),
            Pdf::Empirical { samples } => (samples[0], *samples.last().expect("nonempty")),
        }
    }

    /// Probability density at `x`.
    pub fn density(&self, x: f64) -> f64 {
        match self {
            Pdf::TruncatedRayleigh { sigma, lo, hi } => {
                if x < *lo || x > *hi {
                    return 0.0;
                }
                // All survival factors are taken relative to the truncation
                // floor, so nothing underflows even when sigma << lo.
                (x / (sigma * sigma)) * rel_survival(x, *lo, *sigma)
                    / truncated_mass(*lo, *hi, *sigma)
            }
            Pdf::Weibull { scale, shape } => {
                if x < 0.0 {
                    return 0.0;
                }
                if x == 0.0 {
                    // Limit of the density at the origin by shape regime.
                    return match shape.partial_cmp(&1.0).expect("validated finite") {
                        std::cmp::Ordering::Greater => 0.0,
                        std::cmp::Ordering::Equal => 1.0 / scale,
                        std::cmp::Ordering::Less => f64::INFINITY,
                    };
                }
                let t = x / scale;
                (shape / scale) * t.powf(shape - 1.0) * (-t.powf(*shape)).exp()
            }
            Pdf::Empirical { samples } => {
                let n = samples.len();
                let (lo, hi) = (samples[0], samples[n - 1]);
                let width = (hi - lo).max(f64::MIN_POSITIVE);
                if x < lo || x > hi {
                    return 0.0;
                }
                let bins = (n as f64).sqrt().ceil() as usize;
                let bin_width = width / bins as f64;
                let idx = (((x - lo) / bin_width) as usize).min(bins - 1);
                let (b_lo, b_hi) = (lo + idx as f64 * bin_width, lo + (idx + 1) as f64 * bin_width);
                // Count samples in [b_lo, b_hi), last bin closed on the right.
                let count = samples
                    .iter()
                    .filter(|&&s| s >= b_lo && (s < b_hi || (idx == bins - 1 && s <= hi)))
                    .count();
                count as f64 / (n as f64 * bin_width)
            }
        }
    }

    /// Exact mean (closed form for the parametric families, sample mean
    /// for the empirical form).
    pub fn mean(&self) -> f64 {
        match self {
            Pdf::TruncatedRayleigh { sigma, lo, hi } => {
                // Integration by parts, with every term scaled by
                // exp(lo^2 / (2 sigma^2)) so the formula survives sigma << lo:
                // the erf difference becomes a difference of scaled
                // complementary error functions.
                let s_hi = rel_survival(*hi, *lo, *sigma);
                let root_half_pi = (std::f64::consts::PI / 2.0).sqrt();
                let z_lo = lo / (sigma * std::f64::consts::SQRT_2);
                let z_hi = hi / (sigma * std::f64::consts::SQRT_2);
                let erf_term = erfcx(z_lo) - erfcx(z_hi) * s_hi;
                (sigma * root_half_pi * erf_term + lo - hi * s_hi)
                    / truncated_mass(*lo, *hi, *sigma)
            }
            Pdf::Weibull { scale, shape } => scale * gamma(1.0 + 1.0 / shape),
            Pdf::Empirical { samples } => samples.iter().sum::<f64>() / samples.len() as f64,
        }
    }

    /// Exact raw second moment `E[x^2]`.
    pub fn second_moment(&self) -> f64 {
        match self {
            Pdf::TruncatedRayleigh { sigma, lo, hi } => {
                let s_hi = rel_survival(*hi, *lo, *sigma);
                let two_var = 2.0 * sigma * sigma;
                ((lo * lo + two_var) - (hi * hi + two_var) * s_hi)
                    / truncated_mass(*lo, *hi, *sigma)
            }
            Pdf::Weibull { scale, shape } => scale * scale * gamma(1.0 + 2.0 / shape),
            Pdf::Empirical { samples } => {
                samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
            }
        }
    }

    /// `(mean, second moment)` in one call.
    pub fn moments(&self) -> (f64, f64) {
        (self.mean(), self.second_moment())
    }

    /// Quantile function (exact for the parametric families, order
    /// statistic for the empirical form).
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            Pdf::TruncatedRayleigh { sigma, lo, hi } => {
                rayleigh_inverse_cdf(p, *lo, *hi, *sigma)
            }
            Pdf::Weibull { scale, shape } => scale * (-(1.0 - p).ln()).powf(1.0 / shape),
            Pdf::Empirical { samples } => {
                let idx = ((p * samples.len() as f64) as usize).min(samples.len() - 1);
                samples[idx]
            }
        }
    }

    /// Draw one value. Exactly one uniform draw is consumed per call for
    /// the closed-form families (inverse-CDF sampling), one index draw for
    /// the empirical family, so generator consumption is predictable.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Pdf::TruncatedRayleigh { sigma, lo, hi } => {
                let u: f64 = rng.gen();
                rayleigh_inverse_cdf(u, *lo, *hi, *sigma)
            }
            Pdf::Weibull { scale, shape } => {
                let u: f64 = rng.gen();
                scale * (-(1.0 - u).ln()).powf(1.0 / shape)
            }
            Pdf::Empirical { samples } => samples[rng.gen_range(0..samples.len())],
        }
    }
}

/// Rayleigh survival relative to the truncation floor:
/// `exp(-(x^2 - lo^2) / (2 sigma^2))`, equal to 1 at `x = lo`. Keeping the
/// floor's survival factored out is what makes every truncated-Rayleigh
/// formula finite when `sigma << lo` (the absolute survival underflows).
fn rel_survival(x: f64, lo: f64, sigma: f64) -> f64 {
    (-(x * x - lo * lo) / (2.0 * sigma * sigma)).exp()
}

/// Probability mass of `[lo, hi]` under the Rayleigh, relative to the
/// floor's survival: `1 - rel_survival(hi)`, via `expm1` so narrow windows
/// do not cancel.
fn truncated_mass(lo: f64, hi: f64, sigma: f64) -> f64 {
    -f64::exp_m1(-(hi * hi - lo * lo) / (2.0 * sigma * sigma))
}

/// Inverse CDF of the truncated Rayleigh:
/// `x = sqrt(lo^2 - 2 sigma^2 ln(1 - p * mass))`. `p = 0` maps to `lo`,
/// `p = 1` to `hi` (up to roundoff; the result is clamped).
fn rayleigh_inverse_cdf(p: f64, lo: f64, hi: f64, sigma: f64) -> f64 {
    let t = f64::ln_1p(-p * truncated_mass(lo, hi, sigma));
    (lo * lo - 2.0 * sigma * sigma * t).sqrt().clamp(lo, hi)
}

/// Scaled complementary error function `erfc(z) exp(z^2)` for `z >= 0`.
///
/// Below the crossover the direct product is exact and both factors are
/// normal floats; above it `erfc` is subnormal-or-zero, so the classic
/// asymptotic expansion takes over (eight terms reach machine precision
/// for z >= 24).
fn erfcx(z: f64) -> f64 {
    if z < 24.0 {
        erfc(z) * (z * z).exp()
    } else {
        let inv2z2 = 1.0 / (2.0 * z * z);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..=8u32 {
            term *= -((2 * k - 1) as f64) * inv2z2;
            sum += term;
        }
        sum / (z * std::f64::consts::PI.sqrt())
    }
}

/// Largest pointwise density discrepancy `sup_x |p(x) - q(x)|`.
///
/// Evaluated over the union of the two supports on a fixed 512-point
/// grid, then sharpened by golden-section search around the best grid
/// point. For the smooth parametric families this nails the supremum to
/// far better than the policy needs; for histograms the grid already
/// lands inside every bin of width above the grid step.
pub fn sup_density_diff(p: &Pdf, q: &Pdf) -> f64 {
    let (p_lo, p_hi) = p.support();
    let (q_lo, q_hi) = q.support();
    let lo = p_lo.min(q_lo);
    let hi = p_hi.max(q_hi);
    if !(hi > lo) {
        return (p.density(lo) - q.density(lo)).abs();
    }
    let gap = |x: f64| (p.density(x) - q.density(x)).abs();
    let step = (hi - lo) / (SUP_DIFF_GRID - 1) as f64;
    let mut best_x = lo;
    let mut best = f64::NEG_INFINITY;
    for i in 0..SUP_DIFF_GRID {
        let x = lo + step * i as f64;
        let g = gap(x);
        if g > best {
            best = g;
            best_x = x;
        }
    }
    // Golden-section refinement in the bracket around the best grid point.
    let mut a = (best_x - step).max(lo);
    let mut b = (best_x + step).min(hi);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (gap(x1), gap(x2));
    for _ in 0..80 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = gap(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = gap(x1);
        }
    }
    best.max(f1).max(f2)
}

/// Drift law for a truncated-Rayleigh scale: sinusoidal drift plus
/// Gaussian innovation, clamped to a positive window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayleighEvolution {
    /// Drift amplitude.
    pub amp: f64,
    /// Drift angular frequency (radians per tick).
    pub freq: f64,
    /// Drift phase (radians).
    pub phase: f64,
    /// Variance of the additive Gaussian innovation.
    pub innovation_var: f64,
    /// Clamp window for the scale; the floor must stay positive because a
    /// zero scale degenerates the density.
    pub clamp_lo: f64,
    pub clamp_hi: f64,
}

impl RayleighEvolution {
    pub fn validate(&self) -> Result<()> {
        if !(self.clamp_lo > 0.0) {
            return Err(Error::NonPositive { name: "clamp_lo", value: self.clamp_lo });
        }
        if !(self.clamp_hi > self.clamp_lo) {
            return Err(Error::BadSupport { lo: self.clamp_lo, hi: self.clamp_hi });
        }
        if self.innovation_var < 0.0 {
            return Err(Error::NonPositive { name: "innovation_var", value: self.innovation_var });
        }
        for (name, v) in [
            ("amp", self.amp),
            ("freq", self.freq),
            ("phase", self.phase),
            ("innovation_var", self.innovation_var),
        ] {
            if !v.is_finite() {
                return Err(Error::NotFinite { name, value: v });
            }
        }
        Ok(())
    }
}

/// Advance a truncated-Rayleigh scale one tick under `law`:
/// `sigma' = clamp(sigma + amp * sin(freq * k + phase) + N(0, innovation_var))`.
///
/// Consumes exactly one normal draw.
pub fn evolve_rayleigh<R: Rng + ?Sized>(
    sigma: f64,
    law: &RayleighEvolution,
    k: u64,
    rng: &mut R,
) -> f64 {
    let drift = law.amp * (law.freq * k as f64 + law.phase).sin();
    let noise = if law.innovation_var > 0.0 {
        Normal::new(0.0, law.innovation_var.sqrt()).expect("validated variance").sample(rng)
    } else {
        0.0
    };
    (sigma + drift + noise).clamp(law.clamp_lo, law.clamp_hi)
}

/// Deterministic drift law for Weibull parameters: each parameter is its
/// base value modulated by a slow bounded cosine, plus a constant offset,
/// with an optional gust window that multiplies the scale.
///
/// The law is closed-form in the tick index (not a recursion on the
/// previous parameter): a multiplicative recursion with a near-constant
/// factor either explodes or collapses geometrically over long runs,
/// whereas the modulated form stays inside
/// `[base * (1 - 1/1.3) + offset, base * (1 + 1/1.3) + offset]` forever,
/// and a gust can be un-applied exactly when its window ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeibullEvolution {
    pub base_scale: f64,
    pub base_shape: f64,
    /// Cosine phases for the scale and shape modulations (radians).
    pub scale_phase: f64,
    pub shape_phase: f64,
    /// Shared angular rate of both modulations (radians per tick).
    pub rate: f64,
    /// Constant additive offset applied to both parameters.
    pub offset: f64,
    /// Optional scale gust: multiply the scale by `factor` while
    /// `from <= k <= until`.
    pub gust: Option<GustWindow>,
}

/// Multiplicative disturbance window on the Weibull scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GustWindow {
    pub from: u64,
    pub until: u64,
    pub factor: f64,
}

impl WeibullEvolution {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("base_scale", self.base_scale),
            ("base_shape", self.base_shape),
            ("scale_phase", self.scale_phase),
            ("shape_phase", self.shape_phase),
            ("rate", self.rate),
            ("offset", self.offset),
        ] {
            if !v.is_finite() {
                return Err(Error::NotFinite { name, value: v });
            }
        }
        if let Some(g) = &self.gust {
            if !(g.factor > 0.0) || !g.factor.is_finite() {
                return Err(Error::NonPositive { name: "gust factor", value: g.factor });
            }
        }
        // The modulation floor must keep both parameters positive.
        let (scale, shape) = weibull_params_at(self, 0)?;
        let _ = (scale, shape);
        Ok(())
    }
}

/// Weibull `(scale, shape)` at tick `k` under `law`. The modulation factor
/// `1 + cos(rate * k + phase) / 1.3` lies in `[0.23, 1.77]`.
pub fn weibull_params_at(law: &WeibullEvolution, k: u64) -> Result<(f64, f64)> {
    let wobble = |phase: f64| 1.0 + (law.rate * k as f64 + phase).cos() / 1.3;
    let mut scale = law.base_scale * wobble(law.scale_phase) + law.offset;
    let shape = law.base_shape * wobble(law.shape_phase) + law.offset;
    if let Some(g) = &law.gust {
        if (g.from..=g.until).contains(&k) {
            scale *= g.factor;
        }
    }
    if !(scale > 0.0) {
        return Err(Error::NonPositive { name: "evolved scale", value: scale });
    }
    if !(shape > 0.0) {
        return Err(Error::NonPositive { name: "evolved shape", value: shape });
    }
    Ok((scale, shape))
}
