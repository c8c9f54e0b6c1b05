//! Target distributions `π_D ∝ exp(-U)`.
//!
//! Each [`Potential`] knows its value `U(x)`, a deterministic subgradient
//! selector `h(x) ∈ ∂U(x)`, its semiconvexity triple `(K, μ, R)`, an exact
//! sampler and its second moment.
//!
//! Subgradients at kinks take the minimal-norm element of the Fréchet
//! subdifferential, so for instance `|x|` contributes `0` at the origin.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, CompositeRule};
use crate::rng::{self, Domain};
use crate::samples::Samples;

const INVERSE_CDF_POINTS: usize = 1 << 14;
const REJECTION_MAX_ATTEMPTS: usize = 10_000;

/// `(K, μ, R)`: `⟨h(x)-h(x̄), x-x̄⟩ ≥ -K|x-x̄|²` for `|x-x̄| < R` and
/// `≥ μ|x-x̄|²` for `|x-x̄| ≥ R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiconvexityParams {
    #[serde(rename = "K")]
    pub k: f64,
    pub mu: f64,
    #[serde(rename = "R")]
    pub r: f64,
}

impl SemiconvexityParams {
    pub fn new(k: f64, mu: f64, r: f64) -> Result<Self> {
        if !(k >= 0.0) || !(mu > 0.0) || !(r >= 0.0) {
            return Err(Error::unsupported(format!(
                "semiconvexity parameters need K >= 0, mu > 0, R >= 0 (got K={k}, mu={mu}, R={r})"
            )));
        }
        Ok(SemiconvexityParams { k, mu, r })
    }
}

/// Finite Gaussian mixture `Σ ξ_i N(η_i, s_i² I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    stds: Vec<f64>,
}

impl MixtureParams {
    /// Builds a mixture, normalising the weights to sum to one.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<f64>) -> Result<Self> {
        let count = weights.len();
        if count == 0 {
            return Err(Error::input("mixture needs at least one component"));
        }
        if means.len() != count || stds.len() != count {
            return Err(Error::input(format!(
                "mixture has {count} weights, {} means and {} stds",
                means.len(),
                stds.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::input("mixture means must share a positive dimension"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::input("mixture weights must be finite and nonnegative"));
        }
        if stds.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::input("mixture standard deviations must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::input("mixture weights sum to zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(MixtureParams { weights, means, stds })
    }

    /// Equal-weight one-dimensional two-mode mixture with modes `±eta` and
    /// common variance `s2`.
    pub fn symmetric_pair(eta: f64, s2: f64) -> Result<Self> {
        let s = s2.sqrt();
        MixtureParams::new(vec![0.5, 0.5], vec![vec![eta], vec![-eta]], vec![s, s])
    }

    /// Single standard Gaussian in `dim` dimensions.
    pub fn standard_gaussian(dim: usize) -> Self {
        MixtureParams {
            weights: vec![1.0],
            means: vec![vec![0.0; dim]],
            stds: vec![1.0],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn count(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn second_moment(&self) -> f64 {
        let d = self.dim() as f64;
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((w, m), s)| w * (numeric::dot(m, m) + d * s * s))
            .sum()
    }

    /// Log-density of the mixture after the OU flow for time with decay
    /// factor `m` and added variance `sigma2`: components become
    /// `N(m η_i, (m² s_i² + σ²) I)`. Writes per-component log weights into
    /// `log_w` and returns the log-density.
    pub(crate) fn flowed_log_terms(&self, m: f64, sigma2: f64, x: &[f64], log_w: &mut [f64]) -> f64 {
        let d = x.len() as f64;
        for (i, lw) in log_w.iter_mut().enumerate() {
            let v = m * m * self.stds[i] * self.stds[i] + sigma2;
            let r2: f64 = x.iter().zip(&self.means[i]).map(|(xk, ek)| (xk - m * ek).powi(2)).sum();
            *lw = self.weights[i].ln() - 0.5 * d * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * r2 / v;
        }
        numeric::log_sum_exp(log_w)
    }
}

/// Shape parameter of `exp(-ξx² - |x|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfNormalParams {
    xi: f64,
}

impl HalfNormalParams {
    pub fn new(xi: f64) -> Result<Self> {
        if !(xi > 0.0) || !xi.is_finite() {
            return Err(Error::input(format!("half-normal shape must be positive, got {xi}")));
        }
        Ok(HalfNormalParams { xi })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    GaussianMixture(MixtureParams),
    /// `U(x) = ξx² + |x|`, one-dimensional.
    SymmetricModifiedHalfNormal(HalfNormalParams),
    /// `U(x) = |x|⁴ - |x|²`.
    DoubleWell,
    /// `U(x) = |x|² + Σ|x_i|`.
    ElasticNet,
    /// `U(x) = max{|x|, |x|²}`.
    MaxNorm,
    /// `U(x) = max{|x|, |x|²} - |x|²/2`.
    MaxNormNonconvex,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::GaussianMixture(_) => "gaussian_mixture",
            Family::SymmetricModifiedHalfNormal(_) => "symmetric_modified_half_normal",
            Family::DoubleWell => "double_well",
            Family::ElasticNet => "elastic_net",
            Family::MaxNorm => "max_norm",
            Family::MaxNormNonconvex => "max_norm_nonconvex",
        }
    }
}

/// Inverse CDF of the radial law `r^{d-1} e^{-U(r)}` on `[0, B]`.
#[derive(Debug, Clone)]
struct RadialTable {
    radii: Vec<f64>,
    cdf: Vec<f64>,
}

impl RadialTable {
    fn quantile(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|c| *c < u);
        if i == 0 {
            return self.radii[0];
        }
        if i >= self.cdf.len() {
            return *self.radii.last().unwrap();
        }
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (r0, r1) = (self.radii[i - 1], self.radii[i]);
        if c1 > c0 {
            r0 + (u - c0) / (c1 - c0) * (r1 - r0)
        } else {
            r0
        }
    }
}

/// A target distribution with density proportional to `exp(-U)`.
///
/// Immutable after construction; the lazily built sampling table is
/// initialised at most once and shared between threads.
#[derive(Debug)]
pub struct Potential {
    family: Family,
    dim: usize,
    radius: Option<f64>,
    overrides: Option<SemiconvexityParams>,
    radial: OnceLock<RadialTable>,
}

impl Clone for Potential {
    fn clone(&self) -> Self {
        Potential {
            family: self.family.clone(),
            dim: self.dim,
            radius: self.radius,
            overrides: self.overrides,
            radial: OnceLock::new(),
        }
    }
}

impl Potential {
    pub fn new(family: Family, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("dimension must be positive"));
        }
        match &family {
            Family::GaussianMixture(m) if m.dim() != dim => {
                return Err(Error::input(format!(
                    "mixture means have dimension {} but dim = {dim}",
                    m.dim()
                )))
            }
            Family::SymmetricModifiedHalfNormal(_) if dim != 1 => {
                return Err(Error::input(
                    "the symmetric modified half-normal family is one-dimensional",
                ))
            }
            _ => {}
        }
        Ok(Potential {
            family,
            dim,
            radius: None,
            overrides: None,
            radial: OnceLock::new(),
        })
    }

    pub fn mixture(params: MixtureParams) -> Self {
        let dim = params.dim();
        Potential::new(Family::GaussianMixture(params), dim).expect("mixture dimension is consistent")
    }

    pub fn half_normal(xi: f64) -> Result<Self> {
        Potential::new(Family::SymmetricModifiedHalfNormal(HalfNormalParams::new(xi)?), 1)
    }

    /// The two-mode benchmark mixture: modes `±2`, variance `9`.
    pub fn benchmark_mixture() -> Self {
        Potential::mixture(MixtureParams::symmetric_pair(2.0, 9.0).expect("valid"))
    }

    /// Replace the radius `R` used for the mixture family, where it is a
    /// free parameter.
    pub fn with_radius(mut self, r: f64) -> Self {
        self.radius = Some(r);
        self
    }

    /// User-supplied `(K, μ, R)`, taking precedence over closed forms.
    pub fn with_semiconvexity(mut self, params: SemiconvexityParams) -> Self {
        self.overrides = Some(params);
        self
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_mixture(&self) -> Option<&MixtureParams> {
        match &self.family {
            Family::GaussianMixture(m) => Some(m),
            _ => None,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::input(format!(
                "point has dimension {} but potential has dimension {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `U(x)`. Mixtures return the exact negative log-density; the other
    /// families omit the normalising constant.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.value_unchecked(x))
    }

    pub(crate) fn value_unchecked(&self, x: &[f64]) -> f64 {
        let r2 = numeric::dot(x, x);
        let r = r2.sqrt();
        match &self.family {
            Family::GaussianMixture(m) => {
                let mut lw = vec![0.0; m.count()];
                -m.flowed_log_terms(1.0, 0.0, x, &mut lw)
            }
            Family::SymmetricModifiedHalfNormal(p) => p.xi * r2 + r,
            Family::DoubleWell => r2 * r2 - r2,
            Family::ElasticNet => r2 + x.iter().map(|v| v.abs()).sum::<f64>(),
            Family::MaxNorm => r.max(r2),
            Family::MaxNormNonconvex => r.max(r2) - 0.5 * r2,
        }
    }

    /// A subgradient `h(x) ∈ ∂U(x)`; the gradient wherever `U` is
    /// differentiable, the minimal-norm element at kinks.
    pub fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.dim];
        self.subgradient_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn subgradient_into(&self, x: &[f64], out: &mut [f64]) {
        let r2 = numeric::dot(x, x);
        let r = r2.sqrt();
        match &self.family {
            Family::GaussianMixture(m) => {
                let mut lw = vec![0.0; m.count()];
                let total = m.flowed_log_terms(1.0, 0.0, x, &mut lw);
                out.iter_mut().for_each(|o| *o = 0.0);
                for i in 0..m.count() {
                    let w = (lw[i] - total).exp();
                    let v = m.stds[i] * m.stds[i];
                    for k in 0..x.len() {
                        out[k] += w * (x[k] - m.means[i][k]) / v;
                    }
                }
            }
            Family::SymmetricModifiedHalfNormal(p) => {
                out[0] = 2.0 * p.xi * x[0] + sign0(x[0]);
            }
            Family::DoubleWell => {
                for k in 0..x.len() {
                    out[k] = 4.0 * r2 * x[k] - 2.0 * x[k];
                }
            }
            Family::ElasticNet => {
                for k in 0..x.len() {
                    out[k] = 2.0 * x[k] + sign0(x[k]);
                }
            }
            Family::MaxNorm | Family::MaxNormNonconvex => {
                // ∂max{|x|,|x|²}: x/|x| inside the unit ball, 2x outside,
                // the segment [x, 2x] on the sphere and the unit ball at 0.
                let scale = if r == 0.0 {
                    0.0
                } else if r < 1.0 {
                    1.0 / r
                } else if r > 1.0 {
                    2.0
                } else {
                    1.0
                };
                let shift = if matches!(self.family, Family::MaxNormNonconvex) {
                    1.0
                } else {
                    0.0
                };
                for k in 0..x.len() {
                    out[k] = (scale - shift) * x[k];
                }
            }
        }
    }

    /// `(K, μ, R)` for this target.
    ///
    /// Closed forms: two-component mixtures with a common variance `s²` and
    /// half-separation `η` give `K = 2η²/s⁴`, `μ = (s² - 2η²)/s⁴`; a single
    /// Gaussian gives `K = 0`, `μ = 1/s²`. The remaining values are
    /// certified one-sided monotonicity bounds of each family. Other
    /// mixtures need explicit overrides.
    pub fn semiconvexity_params(&self) -> Result<SemiconvexityParams> {
        if let Some(p) = self.overrides {
            return Ok(p);
        }
        match &self.family {
            Family::GaussianMixture(m) => {
                let r = self.radius.unwrap_or(1.0);
                match m.count() {
                    1 => SemiconvexityParams::new(0.0, 1.0 / (m.stds[0] * m.stds[0]), r),
                    2 if m.stds[0] == m.stds[1] => {
                        let s2 = m.stds[0] * m.stds[0];
                        let eta2 = 0.25 * numeric::dist2(&m.means[0], &m.means[1]);
                        let k = 2.0 * eta2 / (s2 * s2);
                        let mu = (s2 - 2.0 * eta2) / (s2 * s2);
                        if mu <= 0.0 {
                            return Err(Error::unsupported(format!(
                                "two-mode mixture with s² = {s2} <= 2η² = {} has no positive μ",
                                2.0 * eta2
                            )));
                        }
                        SemiconvexityParams::new(k, mu, r)
                    }
                    _ => Err(Error::unsupported(
                        "no closed-form (K, mu, R) for this mixture; supply \"semiconvexity\" overrides",
                    )),
                }
            }
            Family::SymmetricModifiedHalfNormal(p) => SemiconvexityParams::new(0.0, 2.0 * p.xi, 0.0),
            // ⟨|x|²x - |y|²y, x - y⟩ ≥ |x - y|⁴/4, so the pair product is
            // at least |Δ|⁴ - 2|Δ|², which dominates μ|Δ|² for |Δ|² ≥ 2 + μ.
            Family::DoubleWell => SemiconvexityParams::new(2.0, 1.0, 3f64.sqrt()),
            Family::ElasticNet => SemiconvexityParams::new(0.0, 2.0, 0.0),
            // Inside-to-sphere pairs (x → 0⁺, x̄ on the sphere) push the
            // ratio down to 1, so μ = 2 is not attainable with R = 1.
            Family::MaxNorm => SemiconvexityParams::new(0.0, 1.0, 1.0),
            // Ratio for MaxNorm is ≥ 2 - 1/R once R ≥ 2; subtract 1.
            Family::MaxNormNonconvex => SemiconvexityParams::new(1.0, 0.5, 2.0),
        }
    }

    /// `E|X|²` under `π_D`: analytic for mixtures, quadrature otherwise.
    pub fn second_moment(&self) -> Result<f64> {
        let value = match &self.family {
            Family::GaussianMixture(m) => return Ok(m.second_moment()),
            Family::SymmetricModifiedHalfNormal(p) => half_normal_second_moment(p.xi),
            Family::ElasticNet => self.dim as f64 * half_normal_second_moment(1.0),
            _ => {
                let b = self.radial_extent();
                let rule = CompositeRule::new(0.0, b, 256, 16);
                let d = self.dim as f64;
                let peak = self.radial_log_peak(b);
                let log_rad = |r: f64| {
                    if r == 0.0 && self.dim > 1 {
                        f64::NEG_INFINITY
                    } else {
                        (d - 1.0) * numeric::ln0(r) - self.radial_potential(r) - peak
                    }
                };
                let mass = rule.integrate(|r| log_rad(r).exp());
                let m2 = rule.integrate(|r| r * r * log_rad(r).exp());
                m2 / mass
            }
        };
        if !value.is_finite() || value < 0.0 {
            return Err(Error::Numerical(format!(
                "second-moment quadrature did not converge for {}",
                self.family.name()
            )));
        }
        Ok(value)
    }

    /// `U` as a function of the radius, for the rotation-invariant families.
    fn radial_potential(&self, r: f64) -> f64 {
        let r2 = r * r;
        match &self.family {
            Family::DoubleWell => r2 * r2 - r2,
            Family::MaxNorm => r.max(r2),
            Family::MaxNormNonconvex => r.max(r2) - 0.5 * r2,
            Family::SymmetricModifiedHalfNormal(p) => p.xi * r2 + r,
            _ => unreachable!("not a radial family"),
        }
    }

    fn radial_log_peak(&self, b: f64) -> f64 {
        let d = self.dim as f64;
        (0..=2000)
            .map(|i| {
                let r = b * i as f64 / 2000.0;
                if r == 0.0 && self.dim > 1 {
                    f64::NEG_INFINITY
                } else {
                    (d - 1.0) * numeric::ln0(r) - self.radial_potential(r)
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Radius beyond which the radial density is below `e^{-40}` of its
    /// peak; the tail mass past it is far below `1e-12`.
    fn radial_extent(&self) -> f64 {
        let d = self.dim as f64;
        let log_rad = |r: f64| (d - 1.0) * r.ln() - self.radial_potential(r);
        let mut peak = f64::NEG_INFINITY;
        let mut r = 0.01;
        loop {
            let v = log_rad(r);
            peak = peak.max(v);
            if r > 1.0 && v < peak - 40.0 {
                return r;
            }
            r *= 1.05;
        }
    }

    fn radial_table(&self) -> &RadialTable {
        self.radial.get_or_init(|| {
            let b = self.radial_extent();
            let d = self.dim as f64;
            let n = INVERSE_CDF_POINTS;
            let radii: Vec<f64> = (0..n).map(|i| b * i as f64 / (n - 1) as f64).collect();
            let peak = self.radial_log_peak(b);
            let dens: Vec<f64> = radii
                .iter()
                .map(|&r| {
                    if r == 0.0 && self.dim > 1 {
                        0.0
                    } else {
                        ((d - 1.0) * numeric::ln0(r) - self.radial_potential(r) - peak).exp()
                    }
                })
                .collect();
            let mut cdf = vec![0.0; n];
            for i in 1..n {
                cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (radii[i] - radii[i - 1]);
            }
            let total = cdf[n - 1];
            cdf.iter_mut().for_each(|c| *c /= total);
            RadialTable { radii, cdf }
        })
    }

    /// `n` i.i.d. draws from `π_D`; draw `i` uses its own random stream.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Samples> {
        if n == 0 {
            return Err(Error::input("sample count must be at least 1"));
        }
        let mut out = Samples::zeros(n, self.dim);
        for i in 0..n {
            let mut rng = rng::stream(seed, Domain::Target, i as u64);
            self.draw_into(&mut rng, out.row_mut(i))?;
        }
        Ok(out)
    }

    /// One draw from `π_D` into `out`.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        match &self.family {
            Family::GaussianMixture(m) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut comp = m.count() - 1;
                for (i, w) in m.weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        comp = i;
                        break;
                    }
                }
                for k in 0..self.dim {
                    let z: f64 = rng.sample(StandardNormal);
                    out[k] = m.means[comp][k] + m.stds[comp] * z;
                }
            }
            Family::SymmetricModifiedHalfNormal(p) => {
                out[0] = draw_half_normal(rng, p.xi)?;
            }
            Family::ElasticNet => {
                for o in out.iter_mut() {
                    *o = draw_half_normal(rng, 1.0)?;
                }
            }
            Family::DoubleWell | Family::MaxNorm | Family::MaxNormNonconvex => {
                let r = self.radial_table().quantile(rng.gen());
                if self.dim == 1 {
                    out[0] = if rng.gen::<bool>() { r } else { -r };
                } else {
                    let mut norm = 0.0;
                    while norm == 0.0 {
                        for o in out.iter_mut() {
                            *o = rng.sample(StandardNormal);
                        }
                        norm = numeric::norm(out);
                    }
                    out.iter_mut().for_each(|o| *o *= r / norm);
                }
            }
        }
        Ok(())
    }
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Rejection from `N(0, 1/(2ξ))`, accepting with probability `e^{-|x|}`.
fn draw_half_normal<R: Rng + ?Sized>(rng: &mut R, xi: f64) -> Result<f64> {
    let sd = (0.5 / xi).sqrt();
    for _ in 0..REJECTION_MAX_ATTEMPTS {
        let z: f64 = rng.sample(StandardNormal);
        let x = sd * z;
        if rng.gen::<f64>() < (-x.abs()).exp() {
            return Ok(x);
        }
    }
    Err(Error::Sampler(format!(
        "half-normal rejection sampler exceeded {REJECTION_MAX_ATTEMPTS} attempts (xi = {xi})"
    )))
}

fn half_normal_second_moment(xi: f64) -> f64 {
    // Integrand decays like e^{-ξx²}; integrate to 40/sqrt(ξ) + 40 on the
    // half line.
    let b = 40.0 / xi.sqrt() + 40.0;
    let rule = CompositeRule::new(0.0, b, 256, 16);
    let mass = rule.integrate(|x| (-xi * x * x - x).exp());
    let m2 = rule.integrate(|x| x * x * (-xi * x * x - x).exp());
    m2 / mass
}

/// Means accept either a flat list (one-dimensional) or a list of vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeansSpec {
    Flat(Vec<f64>),
    Nested(Vec<Vec<f64>>),
}

fn default_dim() -> usize {
    1
}

/// JSON form of a potential, e.g.
/// `{"family": "gaussian_mixture", "dim": 1, "weights": [0.5, 0.5], "means": [2, -2], "stds": [3, 3]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilyConfig {
    GaussianMixture {
        #[serde(default = "default_dim")]
        dim: usize,
        weights: Vec<f64>,
        means: MeansSpec,
        stds: Vec<f64>,
    },
    #[serde(alias = "half_normal")]
    SymmetricModifiedHalfNormal {
        xi: f64,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    DoubleWell {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    ElasticNet {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    MaxNorm {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    MaxNormNonconvex {
        #[serde(default = "default_dim")]
        dim: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialConfig {
    #[serde(flatten)]
    pub family: FamilyConfig,
    /// Radius `R` for families where it is a free choice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semiconvexity: Option<SemiconvexityParams>,
}

impl PotentialConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<Potential> {
        let mut p = match &self.family {
            FamilyConfig::GaussianMixture {
                dim,
                weights,
                means,
                stds,
            } => {
                let means = match means {
                    MeansSpec::Flat(v) if *dim == 1 => v.iter().map(|m| vec![*m]).collect(),
                    MeansSpec::Flat(_) => return Err(Error::input("flat \"means\" are only allowed when dim = 1")),
                    MeansSpec::Nested(v) => v.clone(),
                };
                let params = MixtureParams::new(weights.clone(), means, stds.clone())?;
                Potential::new(Family::GaussianMixture(params), *dim)?
            }
            FamilyConfig::SymmetricModifiedHalfNormal { xi, dim } => {
                Potential::new(Family::SymmetricModifiedHalfNormal(HalfNormalParams::new(*xi)?), *dim)?
            }
            FamilyConfig::DoubleWell { dim } => Potential::new(Family::DoubleWell, *dim)?,
            FamilyConfig::ElasticNet { dim } => Potential::new(Family::ElasticNet, *dim)?,
            FamilyConfig::MaxNorm { dim } => Potential::new(Family::MaxNorm, *dim)?,
            FamilyConfig::MaxNormNonconvex { dim } => Potential::new(Family::MaxNormNonconvex, *dim)?,
        };
        if let Some(r) = self.radius {
            p = p.with_radius(r);
        }
        if let Some(s) = self.semiconvexity {
            p = p.with_semiconvexity(SemiconvexityParams::new(s.k, s.mu, s.r)?);
        }
        // Two-mode mixtures without a positive μ are rejected at construction.
        if let (None, Some(m)) = (p.overrides, p.as_mixture()) {
            if m.count() == 2 && m.stds[0] == m.stds[1] {
                p.semiconvexity_params()?;
            }
        }
        Ok(p)
    }
}

impl Potential {
    /// Parse a JSON potential block.
    pub fn from_json(text: &str) -> Result<Self> {
        PotentialConfig::from_json(text)?.build()
    }
}

/// Outcome of one pairwise monotonicity check.
#[derive(Debug, Clone, Serialize)]
pub struct PairCheck {
    pub name: String,
    pub pairs: usize,
    /// Smallest observed `⟨Δh, Δx⟩ - bound·|Δx|²`.
    pub worst_margin: f64,
    pub pass: bool,
}

/// Results of the pairwise suite for the semiconvexity triple.
#[derive(Debug, Clone, Serialize)]
pub struct SemiconvexityReport {
    pub family: String,
    pub params: SemiconvexityParams,
    pub checks: Vec<PairCheck>,
}

impl SemiconvexityReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Check `(K, μ, R)` on random pairs: semiconvexity for `|Δx| < R`,
/// strong convexity for `|Δx| ≥ R`, and the global `-K` one-sided bound.
///
/// Anchor points come half from `π_D` and half uniformly from a box
/// `[-3, 3]^d`; partners sit at a uniform direction and a distance drawn
/// for the region being tested.
pub fn check_semiconvexity(p: &Potential, n_pairs: usize, seed: u64, tol: f64) -> Result<SemiconvexityReport> {
    let params = p.semiconvexity_params()?;
    let d = p.dim();
    let anchors = p.sample(n_pairs, rng::derive(seed, 11))?;
    let mut rng = rng::stream(seed, Domain::Pairs, 0);
    let mut x = vec![0.0; d];
    let mut xb = vec![0.0; d];
    let mut u = vec![0.0; d];
    let mut hx = vec![0.0; d];
    let mut hb = vec![0.0; d];

    let regions: [(&str, f64); 3] = [
        ("semiconvex_inside_R", -params.k),
        ("strongly_convex_outside_R", params.mu),
        ("global_minus_K", -params.k),
    ];
    let mut checks = Vec::new();
    for (which, (name, bound)) in regions.iter().enumerate() {
        if which == 0 && params.r == 0.0 {
            checks.push(PairCheck {
                name: name.to_string(),
                pairs: 0,
                worst_margin: f64::INFINITY,
                pass: true,
            });
            continue;
        }
        let mut worst = f64::INFINITY;
        for i in 0..n_pairs {
            if i % 2 == 0 {
                x.copy_from_slice(anchors.row(i));
            } else {
                x.iter_mut().for_each(|v| *v = rng.gen_range(-3.0..3.0));
            }
            random_direction(&mut rng, &mut u);
            let r = match which {
                0 => rng.gen::<f64>() * params.r,
                1 => params.r + 5.0 * rng.gen::<f64>(),
                _ => (params.r + 5.0) * rng.gen::<f64>(),
            };
            if r == 0.0 {
                continue;
            }
            for k in 0..d {
                xb[k] = x[k] + r * u[k];
            }
            p.subgradient_into(&x, &mut hx);
            p.subgradient_into(&xb, &mut hb);
            let prod: f64 = (0..d).map(|k| (hx[k] - hb[k]) * (x[k] - xb[k])).sum();
            let dx2 = numeric::dist2(&x, &xb);
            worst = worst.min(prod - bound * dx2);
        }
        checks.push(PairCheck {
            name: name.to_string(),
            pairs: n_pairs,
            worst_margin: worst,
            pass: worst >= -tol,
        });
    }
    Ok(SemiconvexityReport {
        family: p.family().name().to_string(),
        params,
        checks,
    })
}

pub(crate) fn random_direction<R: Rng + ?Sized>(rng: &mut R, u: &mut [f64]) {
    loop {
        for v in u.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let n = numeric::norm(u);
        if n > 0.0 {
            u.iter_mut().for_each(|v| *v /= n);
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fam(f: Family, d: usize) -> Potential {
        Potential::new(f, d).unwrap()
    }

    #[test]
    fn values_from_closed_forms() {
        assert_eq!(fam(Family::DoubleWell, 2).value(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(fam(Family::ElasticNet, 1).value(&[2.0]).unwrap(), 6.0);
        assert_eq!(fam(Family::MaxNorm, 2).value(&[0.5, 0.0]).unwrap(), 0.5);
        assert_eq!(fam(Family::MaxNormNonconvex, 1).value(&[2.0]).unwrap(), 2.0);
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        let p = fam(Family::DoubleWell, 2);
        assert!(matches!(p.value(&[1.0]), Err(Error::Input(_))));
        assert!(matches!(p.subgradient(&[1.0, 2.0, 3.0]), Err(Error::Input(_))));
    }

    #[test]
    fn subgradients_at_reference_points() {
        assert_eq!(fam(Family::ElasticNet, 1).subgradient(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(
            fam(Family::DoubleWell, 2).subgradient(&[1.0, 0.0]).unwrap(),
            vec![2.0, 0.0]
        );
        let g = Potential::benchmark_mixture().subgradient(&[0.0]).unwrap();
        assert!(g[0].abs() < 1e-15);
        // Kinks: minimal-norm selections.
        assert_eq!(
            fam(Family::MaxNorm, 2).subgradient(&[0.0, 0.0]).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(fam(Family::MaxNorm, 1).subgradient(&[1.0]).unwrap(), vec![1.0]);
        assert_eq!(
            fam(Family::MaxNormNonconvex, 1).subgradient(&[-1.0]).unwrap(),
            vec![0.0]
        );
        assert_eq!(
            Potential::half_normal(2.0).unwrap().subgradient(&[0.0]).unwrap(),
            vec![0.0]
        );
    }

    #[test]
    fn closed_form_parameters() {
        let p = Potential::benchmark_mixture().semiconvexity_params().unwrap();
        assert_relative_eq!(p.k, 8.0 / 81.0, max_relative = 1e-15);
        assert_relative_eq!(p.mu, 1.0 / 81.0, max_relative = 1e-14);
        let h = Potential::half_normal(0.7).unwrap().semiconvexity_params().unwrap();
        assert_eq!((h.k, h.mu), (0.0, 1.4));
        let g = Potential::mixture(MixtureParams::standard_gaussian(3))
            .semiconvexity_params()
            .unwrap();
        assert_eq!((g.k, g.mu), (0.0, 1.0));
    }

    #[test]
    fn mixture_without_positive_mu_is_rejected() {
        let p = Potential::mixture(MixtureParams::symmetric_pair(3.0, 9.0).unwrap());
        assert!(matches!(p.semiconvexity_params(), Err(Error::Unsupported(_))));
        let cfg = r#"{"family":"gaussian_mixture","dim":1,"weights":[1,1],"means":[3,-3],"stds":[3,3]}"#;
        assert!(matches!(Potential::from_json(cfg), Err(Error::Unsupported(_))));
    }

    #[test]
    fn general_mixture_needs_overrides() {
        let m = MixtureParams::new(
            vec![1.0, 1.0, 1.0],
            vec![vec![-1.0], vec![0.0], vec![1.0]],
            vec![1.0; 3],
        )
        .unwrap();
        let p = Potential::mixture(m);
        assert!(p.semiconvexity_params().is_err());
        let p = p.with_semiconvexity(SemiconvexityParams::new(1.0, 0.2, 3.0).unwrap());
        assert_eq!(p.semiconvexity_params().unwrap().mu, 0.2);
    }

    #[test]
    fn weights_are_normalised() {
        let m = MixtureParams::new(vec![2.0, 6.0], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).unwrap();
        assert_eq!(m.weights(), &[0.25, 0.75]);
        assert!(MixtureParams::new(vec![1.0], vec![vec![0.0]], vec![0.0]).is_err());
    }

    #[test]
    fn json_configs() {
        let p = Potential::from_json(
            r#"{"family":"gaussian_mixture","dim":1,"weights":[0.5,0.5],"means":[2,-2],"stds":[3,3]}"#,
        )
        .unwrap();
        assert_eq!(p.second_moment().unwrap(), 13.0);
        let p = Potential::from_json(r#"{"family":"double_well","dim":3}"#).unwrap();
        assert_eq!(p.dim(), 3);
        let p = Potential::from_json(r#"{"family":"half_normal","xi":2.0}"#).unwrap();
        assert_eq!(p.semiconvexity_params().unwrap().mu, 4.0);
        let p = Potential::from_json(
            r#"{"family":"gaussian_mixture","dim":2,"weights":[1],"means":[[0,0]],"stds":[1],"semiconvexity":{"K":0.5,"mu":0.25,"R":2}}"#,
        )
        .unwrap();
        assert_eq!(p.semiconvexity_params().unwrap().k, 0.5);
        assert!(Potential::from_json(r#"{"family":"half_normal","xi":1.0,"dim":2}"#).is_err());
    }

    #[test]
    fn second_moments() {
        assert_eq!(
            Potential::mixture(MixtureParams::standard_gaussian(1))
                .second_moment()
                .unwrap(),
            1.0
        );
        assert_eq!(Potential::benchmark_mixture().second_moment().unwrap(), 13.0);
        // ElasticNet is a product of half-normal (ξ = 1) coordinates.
        let one = Potential::half_normal(1.0).unwrap().second_moment().unwrap();
        let en = fam(Family::ElasticNet, 3).second_moment().unwrap();
        assert_relative_eq!(en, 3.0 * one, max_relative = 1e-12);
    }

    #[test]
    fn half_normal_sampler_matches_quadrature_moment() {
        let p = Potential::half_normal(1.0).unwrap();
        let s = p.sample(50_000, 3).unwrap();
        let m2 = p.second_moment().unwrap();
        let emp = s.second_moment();
        assert!((emp - m2).abs() < 0.03 * m2, "{emp} vs {m2}");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = fam(Family::DoubleWell, 2);
        assert_eq!(p.sample(10, 5).unwrap(), p.sample(10, 5).unwrap());
        assert_ne!(p.sample(10, 5).unwrap(), p.sample(10, 6).unwrap());
        assert!(p.sample(0, 1).is_err());
    }

    #[test]
    fn claimed_maxnorm_mu_two_is_violated() {
        // μ = 2 at R = 1 fails: x = 0.5, x̄ = -0.6 gives 2.2 < 2·1.1².
        let p = fam(Family::MaxNorm, 1);
        let (x, xb) = (0.5, -0.6);
        let prod = (p.subgradient(&[x]).unwrap()[0] - p.subgradient(&[xb]).unwrap()[0]) * (x - xb);
        assert!(prod < 2.0 * (x - xb) * (x - xb));
        assert!(prod >= 1.0 * (x - xb) * (x - xb));
    }

    #[test]
    fn suite_passes_for_certified_triples() {
        for (f, d) in [
            (Family::DoubleWell, 1),
            (Family::DoubleWell, 2),
            (Family::ElasticNet, 2),
            (Family::MaxNorm, 2),
            (Family::MaxNormNonconvex, 3),
        ] {
            let p = fam(f, d);
            let rep = check_semiconvexity(&p, 2000, 1, 1e-12).unwrap();
            assert!(rep.pass(), "{rep:?}");
        }
    }

    #[test]
    fn suite_detects_a_false_triple() {
        let p = fam(Family::MaxNorm, 1).with_semiconvexity(SemiconvexityParams::new(0.0, 2.0, 1.0).unwrap());
        let rep = check_semiconvexity(&p, 4000, 2, 1e-12).unwrap();
        assert!(!rep.pass());
    }
}
