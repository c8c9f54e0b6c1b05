//! Ornstein–Uhlenbeck forward process `dX = -X dt + sqrt(2) dB`.
//!
//! `X_t = m_t X_0 + σ_t Z` with `m_t = e^{-t}` and `σ_t² = 1 - e^{-2t}`.
//! For Gaussian mixtures `p_t` stays a mixture and the score is closed
//! form; for other one-dimensional targets [`QuadratureScore`] integrates
//! the OU kernel against `π_D` numerically.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{self, CompositeRule};
use crate::potentials::{MixtureParams, Potential};
use crate::rng::{self, Domain};
use crate::sampler::ScoreFn;
use crate::samples::Samples;

/// Law of `X_t` given `X_0`: mean factor `m` and added variance `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OuMarginal {
    pub t: f64,
    pub m: f64,
    pub sigma2: f64,
}

impl OuMarginal {
    pub fn new(t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::input(format!("time must be finite and nonnegative, got {t}")));
        }
        Ok(OuMarginal::at(t))
    }

    /// Unchecked constructor for internal hot loops; `t ≥ 0`.
    pub(crate) fn at(t: f64) -> Self {
        OuMarginal {
            t,
            m: (-t).exp(),
            sigma2: -(-2.0 * t).exp_m1(),
        }
    }
}

pub fn ou_coeffs(t: f64) -> Result<OuMarginal> {
    OuMarginal::new(t)
}

/// `n` draws of `X_t = m_t X_0 + σ_t Z`, `X_0 ~ π_D`.
pub fn sample_forward(p: &Potential, t: f64, n: usize, seed: u64) -> Result<Samples> {
    let ou = OuMarginal::new(t)?;
    let mut x = p.sample(n, seed)?;
    let sigma = ou.sigma2.sqrt();
    let d = x.dim();
    for i in 0..n {
        let mut rng = rng::stream(seed, Domain::Forward, i as u64);
        for v in x.row_mut(i) {
            let z: f64 = rng.sample(StandardNormal);
            *v = ou.m * *v + sigma * z;
        }
    }
    debug_assert_eq!(x.dim(), d);
    Ok(x)
}

/// The mixture `p_t` at one time: components `N(m η_i, v_i I)` with
/// `v_i = m² s_i² + σ²`.
#[derive(Debug, Clone)]
pub(crate) struct FlowedMixture {
    dim: usize,
    centers: Vec<f64>,
    inv_v: Vec<f64>,
    log_c: Vec<f64>,
}

impl FlowedMixture {
    pub(crate) fn new(mix: &MixtureParams, t: f64) -> Self {
        let ou = OuMarginal::at(t);
        let d = mix.dim();
        let mut centers = Vec::with_capacity(mix.count() * d);
        let mut inv_v = Vec::with_capacity(mix.count());
        let mut log_c = Vec::with_capacity(mix.count());
        for i in 0..mix.count() {
            let s = mix.stds()[i];
            let v = ou.m * ou.m * s * s + ou.sigma2;
            centers.extend(mix.means()[i].iter().map(|e| ou.m * e));
            inv_v.push(1.0 / v);
            log_c.push(mix.weights()[i].ln() - 0.5 * d as f64 * v.ln());
        }
        FlowedMixture {
            dim: d,
            centers,
            inv_v,
            log_c,
        }
    }

    /// Score at `x`; `lw` has one slot per component.
    #[inline]
    pub(crate) fn score_into(&self, x: &[f64], out: &mut [f64], lw: &mut [f64]) {
        let d = self.dim;
        let mut top = f64::NEG_INFINITY;
        for (i, l) in lw.iter_mut().enumerate() {
            let c = &self.centers[i * d..(i + 1) * d];
            let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            *l = self.log_c[i] - 0.5 * r2 * self.inv_v[i];
            top = top.max(*l);
        }
        let mut total = 0.0;
        for l in lw.iter_mut() {
            *l = (*l - top).exp();
            total += *l;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, l) in lw.iter().enumerate() {
            let w = l / total * self.inv_v[i];
            let c = &self.centers[i * d..(i + 1) * d];
            for k in 0..d {
                out[k] -= w * (x[k] - c[k]);
            }
        }
    }

    pub(crate) fn count(&self) -> usize {
        self.inv_v.len()
    }
}

/// `∇ log p_t(x)` for a Gaussian mixture target.
pub fn mixture_score(mix: &MixtureParams, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    OuMarginal::new(t)?;
    if x.len() != mix.dim() {
        return Err(Error::input(format!(
            "point has dimension {} but mixture has dimension {}",
            x.len(),
            mix.dim()
        )));
    }
    let flowed = FlowedMixture::new(mix, t);
    let mut lw = vec![0.0; flowed.count()];
    let mut out = vec![0.0; x.len()];
    flowed.score_into(x, &mut out, &mut lw);
    Ok(out)
}

const QUADRATURE_PANELS: usize = 256;
const QUADRATURE_ORDER: usize = 16;

/// Score oracle for one-dimensional targets:
/// `p_t(x) = ∫ π_D(y) N(x; m_t y, σ_t²) dy` on a composite Gauss–Legendre
/// grid of `2^12` nodes over `[-B, B]`, `B = max(10, 8 sqrt(E|X|²))`,
/// accumulated in the log domain.
#[derive(Debug, Clone)]
pub struct QuadratureScore {
    nodes: Vec<f64>,
    /// `ln w_j + ln π_D(y_j)`, normalised so the weights sum to one.
    base: Vec<f64>,
}

impl QuadratureScore {
    pub fn new(p: &Potential) -> Result<Self> {
        if p.dim() != 1 {
            return Err(Error::unsupported("the quadrature score oracle is one-dimensional"));
        }
        let b = 10f64.max(8.0 * p.second_moment()?.sqrt());
        let rule = CompositeRule::new(-b, b, QUADRATURE_PANELS, QUADRATURE_ORDER);
        let mut base: Vec<f64> = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(y, w)| w.ln() - p.value_unchecked(&[*y]))
            .collect();
        let norm = numeric::log_sum_exp(&base);
        if !norm.is_finite() {
            return Err(Error::Numerical(
                "target density does not integrate on the quadrature grid".into(),
            ));
        }
        base.iter_mut().for_each(|v| *v -= norm);
        Ok(QuadratureScore {
            nodes: rule.nodes,
            base,
        })
    }

    fn check_t(t: f64) -> Result<OuMarginal> {
        if !(t > 0.0) {
            return Err(Error::input(format!(
                "the quadrature score needs t > 0 (got {t}); the score may diverge at t = 0"
            )));
        }
        OuMarginal::new(t)
    }

    /// `ln p_t(x)`.
    pub fn log_density(&self, t: f64, x: f64) -> Result<f64> {
        let ou = Self::check_t(t)?;
        let half_inv = 0.5 / ou.sigma2;
        let mut top = f64::NEG_INFINITY;
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.base)
            .map(|(y, b)| {
                let l = b - (x - ou.m * y).powi(2) * half_inv;
                top = top.max(l);
                l
            })
            .collect();
        let s: f64 = terms.iter().map(|l| (l - top).exp()).sum();
        Ok(top + s.ln() - 0.5 * (2.0 * std::f64::consts::PI * ou.sigma2).ln())
    }

    /// `∂_x ln p_t(x)`.
    pub fn score(&self, t: f64, x: f64) -> Result<f64> {
        let ou = Self::check_t(t)?;
        Ok(self.score_at(&ou, x))
    }

    fn score_at(&self, ou: &OuMarginal, x: f64) -> f64 {
        let half_inv = 0.5 / ou.sigma2;
        let top = self
            .nodes
            .iter()
            .zip(&self.base)
            .map(|(y, b)| b - (x - ou.m * y).powi(2) * half_inv)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut mass = 0.0;
        let mut first = 0.0;
        for (y, b) in self.nodes.iter().zip(&self.base) {
            let diff = ou.m * y - x;
            let w = (b - diff * diff * half_inv - top).exp();
            mass += w;
            first += w * diff;
        }
        first / mass / ou.sigma2
    }
}

/// The true score `∇ log p_t` of a target: closed form for mixtures,
/// quadrature for the other one-dimensional families.
#[derive(Debug, Clone)]
pub enum ExactScore {
    Mixture(MixtureParams),
    Quadrature(QuadratureScore),
}

impl ExactScore {
    pub fn new(p: &Potential) -> Result<Self> {
        if let Some(m) = p.as_mixture() {
            return Ok(ExactScore::Mixture(m.clone()));
        }
        if p.dim() == 1 {
            return Ok(ExactScore::Quadrature(QuadratureScore::new(p)?));
        }
        Err(Error::unsupported(format!(
            "no exact score for {} in dimension {}",
            p.family().name(),
            p.dim()
        )))
    }

    pub fn score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            ExactScore::Mixture(m) => mixture_score(m, t, x),
            ExactScore::Quadrature(q) => {
                if x.len() != 1 {
                    return Err(Error::input("quadrature score takes one-dimensional points"));
                }
                Ok(vec![q.score(t, x[0])?])
            }
        }
    }
}

impl ScoreFn for ExactScore {
    fn dim(&self) -> usize {
        match self {
            ExactScore::Mixture(m) => m.dim(),
            ExactScore::Quadrature(_) => 1,
        }
    }

    fn eval_batch(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        match self {
            ExactScore::Mixture(m) => {
                let flowed = FlowedMixture::new(m, t);
                let d = m.dim();
                let mut lw = vec![0.0; flowed.count()];
                for (x, o) in xs.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
                    flowed.score_into(x, o, &mut lw);
                }
            }
            ExactScore::Quadrature(q) => {
                // The EM grid never reaches t = 0; clamp guards the last
                // step against rounding.
                let ou = OuMarginal::at(t.max(f64::MIN_POSITIVE));
                for (x, o) in xs.iter().zip(out.iter_mut()) {
                    *o = q.score_at(&ou, *x);
                }
            }
        }
    }
}
