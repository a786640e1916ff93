//! The monotone link `g(x) = a ln(bx + c) + shift` shared by all domains.
//!
//! Training fits the factor model to `g(rating)`; prediction maps the latent
//! score back through `g⁻¹`. Positivity of `a`, `b`, `c` is maintained by
//! optimizing over `(ln a, ln b, ln c, shift)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{DomainViews, RatingScale};
use crate::error::{Error, Result};
use crate::model::ModelState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub shift: f64,
}

impl Default for LinkParams {
    /// `g(x) = ln(x + 1)`.
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            c: 1.0,
            shift: 0.0,
        }
    }
}

impl LinkParams {
    pub fn new(a: f64, b: f64, c: f64, shift: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && c > 0.0 && a.is_finite() && b.is_finite() && c.is_finite())
            || !shift.is_finite()
        {
            return Err(Error::Config(format!(
                "link parameters must satisfy a, b, c > 0 (got a={a}, b={b}, c={c}, shift={shift})"
            )));
        }
        Ok(Self { a, b, c, shift })
    }

    /// Infimum of the link's domain, `-c/b`.
    pub fn domain_lower_bound(&self) -> f64 {
        -self.c / self.b
    }

    fn arg(&self, x: f64) -> Result<f64> {
        let arg = self.b * x + self.c;
        if arg > 0.0 {
            Ok(arg)
        } else {
            Err(Error::LinkDomain { rating: x, arg })
        }
    }

    pub fn apply(&self, x: f64) -> Result<f64> {
        Ok(self.a * self.arg(x)?.ln() + self.shift)
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        Ok(self.a * self.b / self.arg(x)?)
    }

    /// Closed-form inverse. May return `±inf` when `exp` overflows; callers
    /// at prediction time saturate against the rating scale.
    pub fn inverse(&self, z: f64) -> f64 {
        (((z - self.shift) / self.a).exp() - self.c) / self.b
    }

    /// Inverse clamped to `scale`; the flag reports that `exp` overflowed.
    pub fn inverse_saturating(&self, z: f64, scale: RatingScale) -> (f64, bool) {
        let x = self.inverse(z);
        if x.is_finite() {
            (scale.clamp(x), false)
        } else if x.is_nan() {
            (scale.midpoint(), true)
        } else {
            (if x > 0.0 { scale.max } else { scale.min }, true)
        }
    }

    pub fn to_unconstrained(&self) -> [f64; 4] {
        [self.a.ln(), self.b.ln(), self.c.ln(), self.shift]
    }

    pub fn from_unconstrained(phi: [f64; 4]) -> Self {
        Self {
            a: phi[0].exp(),
            b: phi[1].exp(),
            c: phi[2].exp(),
            shift: phi[3],
        }
    }

    /// `(g(x), ∂g/∂φ, ∂ ln g'(x)/∂φ)` with `φ = (ln a, ln b, ln c, shift)`.
    fn sensitivities(&self, x: f64) -> Result<(f64, [f64; 4], [f64; 4])> {
        let arg = self.arg(x)?;
        let log_arg = arg.ln();
        let bx = self.b * x / arg;
        let c = self.c / arg;
        let g = self.a * log_arg + self.shift;
        let dg = [self.a * log_arg, self.a * bx, self.a * c, 1.0];
        // ln g' = ln a + ln b - ln(bx + c)
        let dlog_dg = [1.0, 1.0 - bx, -c, 0.0];
        Ok((g, dg, dlog_dg))
    }
}

/// Root of `f(x) = z` for increasing `f` on `[lo, hi]` by bisection.
///
/// Fallback for link families without a closed-form inverse. Returns the
/// nearer endpoint when `z` lies outside `[f(lo), f(hi)]`.
pub fn invert_by_bisection(f: impl Fn(f64) -> f64, z: f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    if f(lo) >= z {
        return lo;
    }
    if f(hi) <= z {
        return hi;
    }
    while hi - lo > tol * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < z {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Fails with the first rating outside `g`'s domain.
pub fn check_domain(link: &LinkParams, views: &DomainViews) -> Result<()> {
    for dom in views.domains() {
        for (_, _, x) in dom.by_user.entries() {
            link.arg(x)?;
        }
    }
    Ok(())
}

/// Ratings of one domain grouped by distinct value: `(x, count, mean score)`.
///
/// Only `Σ (g(x) - s)²` and `Σ ln g'(x)` depend on the link, and for a fixed
/// value `x` the former is `n (g(x) - s̄)²` plus a constant.
struct RatingGroups {
    domains: Vec<Vec<(f64, f64, f64)>>,
    inv_noise: Vec<f64>,
}

impl RatingGroups {
    fn new(state: &ModelState, views: &DomainViews) -> Self {
        let domains = views
            .domains()
            .iter()
            .enumerate()
            .map(|(i, dom)| {
                let u = &state.user_factors[i];
                let v = &state.item_factors[i];
                let mut acc: HashMap<u64, (f64, f64)> = HashMap::new();
                for (j, k, x) in dom.by_user.entries() {
                    let e = acc.entry(x.to_bits()).or_insert((0.0, 0.0));
                    e.0 += 1.0;
                    e.1 += u.column(j).dot(&v.column(k));
                }
                let mut groups: Vec<(f64, f64, f64)> = acc
                    .into_iter()
                    .map(|(bits, (n, sum))| (f64::from_bits(bits), n, sum / n))
                    .collect();
                groups.sort_by(|a, b| a.0.total_cmp(&b.0));
                groups
            })
            .collect();
        let inv_noise = state.noise_var.iter().map(|s2| 1.0 / s2).collect();
        Self { domains, inv_noise }
    }

    /// Link-dependent part of the objective.
    fn objective(&self, link: &LinkParams) -> Result<f64> {
        let mut total = 0.0;
        for (groups, inv_s2) in self.domains.iter().zip(&self.inv_noise) {
            for &(x, n, mean) in groups {
                let arg = link.arg(x)?;
                let r = link.a * arg.ln() + link.shift - mean;
                let log_slope = link.a.ln() + link.b.ln() - arg.ln();
                total += 0.5 * inv_s2 * n * r * r - n * log_slope;
            }
        }
        if total.is_finite() {
            Ok(total)
        } else {
            Err(Error::NonFinite { term: "link" })
        }
    }

    fn gradient(&self, link: &LinkParams) -> Result<[f64; 4]> {
        let mut grad = [0.0; 4];
        for (groups, inv_s2) in self.domains.iter().zip(&self.inv_noise) {
            for &(x, n, mean) in groups {
                let (g, dg, dlog) = link.sensitivities(x)?;
                let r = g - mean;
                for l in 0..4 {
                    grad[l] += n * (inv_s2 * r * dg[l] - dlog[l]);
                }
            }
        }
        Ok(grad)
    }
}

/// Gradient of the link-form objective with respect to
/// `(ln a, ln b, ln c, shift)`, holding factors and variances fixed.
pub fn link_objective_gradient(state: &ModelState, views: &DomainViews) -> Result<[f64; 4]> {
    let link = state
        .link
        .ok_or_else(|| Error::Config("link function is not enabled".into()))?;
    RatingGroups::new(state, views).gradient(&link)
}

/// Line-search settings for the link step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkStep {
    /// Length of the first trial step along the normalized negative gradient.
    pub initial_step: f64,
    pub max_halvings: usize,
}

impl Default for LinkStep {
    fn default() -> Self {
        Self {
            initial_step: 0.5,
            max_halvings: 40,
        }
    }
}

/// One backtracking gradient step on the link parameters.
///
/// A trial point is accepted only if it strictly lowers the objective (every
/// other term is independent of the link); if every halving fails, the
/// current parameters are returned unchanged.
pub fn optimize_link_params(state: &ModelState, views: &DomainViews, step: &LinkStep) -> Result<LinkParams> {
    let current = state
        .link
        .ok_or_else(|| Error::Config("link function is not enabled".into()))?;
    let groups = RatingGroups::new(state, views);
    let grad = groups.gradient(&current)?;
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Ok(current);
    }
    let base = groups.objective(&current)?;
    let phi = current.to_unconstrained();
    let mut t = step.initial_step;
    for _ in 0..=step.max_halvings {
        let mut trial = phi;
        for l in 0..4 {
            trial[l] -= t * grad[l] / norm;
        }
        let candidate = LinkParams::from_unconstrained(trial);
        let ok = candidate.a > 0.0
            && candidate.b > 0.0
            && candidate.c > 0.0
            && candidate.a.is_finite()
            && candidate.b.is_finite()
            && candidate.c.is_finite();
        if ok {
            if let Ok(value) = groups.objective(&candidate) {
                if value < base {
                    return Ok(candidate);
                }
            }
        }
        t *= 0.5;
    }
    Ok(current)
}
