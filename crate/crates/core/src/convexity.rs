//! Weak-convexity profile of `U` and the induced one-sided bound on the
//! score.
//!
//! With `L = K + μ` the score satisfies
//! `⟨∇log p_t(x) - ∇log p_t(x̄), x - x̄⟩ ≤ -β_t |x - x̄|²`, where
//! `β_t = μ/D_t - e^{-2t} L / D_t²` and `D_t = μ + (1 - μ) e^{-2t}`.
//! `B(t) = ∫_0^t β_s ds` has a closed form; it decreases until `t̄` and
//! turns positive at `t*`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric;
use crate::potentials::{random_direction, Potential, SemiconvexityParams};
use crate::rng::{self, Domain};

/// Bisection tolerance for `t*`.
pub const T_STAR_TOL: f64 = 1e-10;
/// Width of the `t*` bracket above `t̄`.
pub const T_STAR_BRACKET: f64 = 60.0;

/// `(μ, K, L, R, β)`; `L` defaults to the proxy `K + μ` and `β` to `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexityParams {
    pub mu: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub beta: f64,
}

impl ConvexityParams {
    pub fn new(mu: f64, k: f64, l: f64, r: f64) -> Result<Self> {
        if !(mu > 0.0) || !(k >= 0.0) || !(l > 0.0) || !(r >= 0.0) {
            return Err(Error::input(format!(
                "need mu > 0, K >= 0, L > 0, R >= 0 (got mu={mu}, K={k}, L={l}, R={r})"
            )));
        }
        Ok(ConvexityParams { mu, k, l, r, beta: mu })
    }

    /// Proxy scale `L = K + μ`.
    pub fn from_semiconvexity(p: &SemiconvexityParams) -> Result<Self> {
        ConvexityParams::new(p.mu, p.k, p.k + p.mu, p.r)
    }

    pub fn t_bar(&self) -> f64 {
        t_bar(self.mu, self.k)
    }

    pub fn t_star(&self) -> Result<f64> {
        t_star(self.mu, self.k)
    }

    pub fn r0(&self) -> Result<f64> {
        r0_threshold(self.mu, self.l)
    }

    pub fn beta_os_kmu(&self, t: f64) -> Result<f64> {
        beta_os_kmu(t, self.mu, self.k)
    }

    pub fn b_integral(&self, t: f64) -> Result<f64> {
        b_integral(t, self.mu, self.k)
    }
}

/// `f_L(r) = 2 sqrt(L) tanh(r sqrt(L) / 2)`.
pub fn f_l(r: f64, l: f64) -> f64 {
    let s = l.sqrt();
    2.0 * s * (0.5 * r * s).tanh()
}

/// `β_t` with an explicit scale `L`.
pub fn beta_os(t: f64, mu: f64, l: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::input(format!("time must be nonnegative, got {t}")));
    }
    let e = (-2.0 * t).exp();
    let den = mu + (1.0 - mu) * e;
    if !(den > 0.0) {
        return Err(Error::unsupported(format!(
            "mu + (1 - mu) e^(-2t) = {den} is not positive (mu = {mu}, t = {t})"
        )));
    }
    Ok(mu / den - e * l / (den * den))
}

/// `β_t` with the proxy `L = K + μ`.
pub fn beta_os_kmu(t: f64, mu: f64, k: f64) -> Result<f64> {
    beta_os(t, mu, k + mu)
}

/// `B(t) = ½[ln(1 + a) - (K/μ + 1) a/(1 + a)]`, `a = μ(e^{2t} - 1)`.
pub fn b_integral(t: f64, mu: f64, k: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::input(format!("time must be nonnegative, got {t}")));
    }
    if !(mu > 0.0) {
        return Err(Error::input(format!("mu must be positive, got {mu}")));
    }
    let c = k / mu + 1.0;
    if 2.0 * t < 600.0 {
        let a = mu * (2.0 * t).exp_m1();
        Ok(0.5 * (a.ln_1p() - c * a / (1.0 + a)))
    } else {
        // ln(1 + a) = ln a + ln(1 + 1/a) with ln a = ln μ + 2t + ln(1 - e^{-2t}).
        let ln_a = mu.ln() + 2.0 * t + (-(-2.0 * t).exp()).ln_1p();
        let inv_a = (-ln_a).exp();
        Ok(0.5 * (ln_a + inv_a.ln_1p() - c / (1.0 + inv_a)))
    }
}

/// `t̄ = ln sqrt(1 + K/μ²)`, the minimiser of `B`.
pub fn t_bar(mu: f64, k: f64) -> f64 {
    0.5 * (k / (mu * mu)).ln_1p()
}

/// First positive time after which `B > 0`; `0` when `K = 0`.
pub fn t_star(mu: f64, k: f64) -> Result<f64> {
    if !(mu > 0.0) || !(k >= 0.0) {
        return Err(Error::input(format!("need mu > 0 and K >= 0 (got mu={mu}, K={k})")));
    }
    if k == 0.0 {
        return Ok(0.0);
    }
    let lo = t_bar(mu, k);
    let f = |t: f64| b_integral(t, mu, k).unwrap_or(f64::NAN);
    numeric::bisect(f, lo, lo + T_STAR_BRACKET, T_STAR_TOL)
}

fn tanh_ratio(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        let z2 = z * z;
        1.0 - z2 / 3.0 + 2.0 * z2 * z2 / 15.0
    } else {
        z.tanh() / z
    }
}

/// `z₀` solving `tanh(z)/z = μ/L`; `None` when `μ ≥ L`.
pub fn z0(mu: f64, l: f64) -> Result<Option<f64>> {
    if !(mu > 0.0) {
        return Err(Error::input(format!("mu must be positive, got {mu}")));
    }
    if !(l > 0.0) {
        return Err(Error::input(format!("L must be positive, got {l}")));
    }
    let q = mu / l;
    if q >= 1.0 {
        return Ok(None);
    }
    // tanh(z)/z < 1/z, so the root lies below 1/q.
    let hi = 1.0 / q + 1.0;
    numeric::bisect(|z| tanh_ratio(z) - q, 0.0, hi, 0.0).map(Some)
}

/// `R₀ = 2 z₀ / sqrt(L)`; `0` when `μ > L`.
pub fn r0_threshold(mu: f64, l: f64) -> Result<f64> {
    Ok(z0(mu, l)?.map_or(0.0, |z| 2.0 * z / l.sqrt()))
}

/// `μ̃ = μ - f_L(R)/R`.
pub fn mu_tilde(mu: f64, l: f64, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::input(format!("R must be positive, got {r}")));
    }
    Ok(mu - f_l(r, l) / r)
}

/// Lower profile `μ - f_L(r)/r` for `κ_U(r)`.
pub fn kappa_lower(mu: f64, l: f64, r: f64) -> f64 {
    mu - f_l(r, l) / r
}

/// `min ⟨h(x) - h(x̄), x - x̄⟩ / r²` over `n_pairs` pairs at distance `r`
/// with `x ~ π_D`, `x̄ = x + r u`, `u` uniform on the sphere. An upper
/// estimate of `κ_U(r)`.
pub fn empirical_kappa(p: &Potential, r: f64, n_pairs: usize, seed: u64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::input(format!("distance must be positive, got {r}")));
    }
    if n_pairs == 0 {
        return Err(Error::input("need at least one pair"));
    }
    let anchors = p.sample(n_pairs, seed)?;
    let d = p.dim();
    let worst = (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, Domain::Pairs, i as u64);
            let x = anchors.row(i);
            let mut u = vec![0.0; d];
            random_direction(&mut rng, &mut u);
            let xb: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + r * b).collect();
            let mut hx = vec![0.0; d];
            let mut hb = vec![0.0; d];
            p.subgradient_into(x, &mut hx);
            p.subgradient_into(&xb, &mut hb);
            let prod: f64 = (0..d).map(|k| (hb[k] - hx[k]) * (xb[k] - x[k])).sum();
            prod / (r * r)
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(worst)
}

/// `empirical_kappa` over a radius grid, as `(r, κ̂(r))` pairs.
pub fn kappa_scan(p: &Potential, radii: &[f64], n_pairs: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    radii
        .iter()
        .enumerate()
        .map(|(i, &r)| Ok((r, empirical_kappa(p, r, n_pairs, rng::derive(seed, i as u64))?)))
        .collect()
}

/// Summary of the convexity quantities for one target.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsReport {
    #[serde(rename = "K")]
    pub k: f64,
    pub mu: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub t_bar: f64,
    pub t_star: f64,
    #[serde(rename = "R0")]
    pub r0: f64,
    /// `μ̃` at `R`; absent when `R = 0`.
    pub mu_tilde: Option<f64>,
    pub mu_tilde_positive: Option<bool>,
}

pub fn constants_report(p: &SemiconvexityParams) -> Result<ConstantsReport> {
    let c = ConvexityParams::from_semiconvexity(p)?;
    let mt = if c.r > 0.0 {
        Some(mu_tilde(c.mu, c.l, c.r)?)
    } else {
        None
    };
    Ok(ConstantsReport {
        k: c.k,
        mu: c.mu,
        l: c.l,
        r: c.r,
        t_bar: c.t_bar(),
        t_star: c.t_star()?,
        r0: c.r0()?,
        mu_tilde: mt,
        mu_tilde_positive: mt.map(|m| m > 0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{Family, MixtureParams};
    use approx::assert_relative_eq;

    #[test]
    fn f_l_reference_values() {
        assert_eq!(f_l(0.0, 3.0), 0.0);
        assert!((f_l(1e3 / 2f64.sqrt(), 2.0) - 2.0 * 2f64.sqrt()).abs() < 1e-9);
        // tanh(1) from its continued fraction 1/(1 + 1/(3 + 1/(5 + ...))).
        let mut cf = 0.0;
        for k in (0..30).rev() {
            cf = 1.0 / ((2 * k + 1) as f64 + cf);
        }
        assert_relative_eq!(f_l(1.0, 4.0), 4.0 * cf, max_relative = 1e-14);
    }

    #[test]
    fn beta_limits() {
        assert_relative_eq!(beta_os(0.0, 0.3, 2.0).unwrap(), 0.3 - 2.0, max_relative = 1e-14);
        assert!((beta_os(60.0, 0.3, 2.0).unwrap() - 1.0).abs() < 1e-12);
        let t: f64 = 0.7;
        assert_relative_eq!(
            beta_os(t, 1.0, 2.5).unwrap(),
            1.0 - (-2.0 * t).exp() * 2.5,
            max_relative = 1e-14
        );
        assert!((beta_os_kmu(0.0, 0.2, 1.5).unwrap() + 1.5).abs() < 1e-12);
    }

    #[test]
    fn beta_rejects_invalid_denominator() {
        // μ > 1 makes D_t vanish at a finite negative time only; use μ < 0.
        assert!(beta_os(0.5, -2.0, 1.0).is_err());
    }

    #[test]
    fn b_integral_basics() {
        assert_eq!(b_integral(0.0, 0.5, 1.0).unwrap(), 0.0);
        for t in [0.1, 1.0, 10.0] {
            assert!(b_integral(t, 0.7, 0.0).unwrap() > 0.0);
        }
        // Large-time branch is continuous with the direct branch.
        let a = b_integral(299.999, 0.01, 0.1).unwrap();
        let b = b_integral(300.001, 0.01, 0.1).unwrap();
        assert!((a - b).abs() < 0.01);
        assert!(b_integral(1000.0, 0.01, 0.1).unwrap().is_finite());
    }

    #[test]
    fn t_bar_reference_values() {
        assert_eq!(t_bar(0.4, 0.0), 0.0);
        assert_relative_eq!(t_bar(1.0, 3.0), 2f64.ln(), max_relative = 1e-15);
        assert!((t_bar(1.0 / 81.0, 8.0 / 81.0) - 3.2377).abs() < 5e-4);
    }

    #[test]
    fn t_star_brackets_zero() {
        assert_eq!(t_star(0.5, 0.0).unwrap(), 0.0);
        let ts = t_star(1.0, 1.0).unwrap();
        assert!(b_integral(ts - 1e-6, 1.0, 1.0).unwrap() < 0.0);
        assert!(b_integral(ts + 1e-6, 1.0, 1.0).unwrap() > 0.0);
        let ts = t_star(1.0 / 81.0, 8.0 / 81.0).unwrap();
        assert!(ts > t_bar(1.0 / 81.0, 8.0 / 81.0));
    }

    #[test]
    fn r0_reference_values() {
        assert_eq!(r0_threshold(2.0, 1.0).unwrap(), 0.0);
        let l = 3.0;
        let r = r0_threshold(1f64.tanh() * l, l).unwrap();
        assert!((r - 2.0 / l.sqrt()).abs() < 1e-12);
        let z = z0(0.5, 1.0).unwrap().unwrap();
        assert!((z.tanh() / z - 0.5).abs() < 1e-12);
        assert!(r0_threshold(0.0, 1.0).is_err());
    }

    #[test]
    fn mu_tilde_limits() {
        assert!((mu_tilde(0.3, 2.0, 1e6).unwrap() - 0.3).abs() < 1e-5);
        assert!(mu_tilde(2.0, 1.0, 0.5).unwrap() > 0.0);
        // μ̃ changes sign at R₀.
        let r0 = r0_threshold(0.5, 1.0).unwrap();
        assert!(mu_tilde(0.5, 1.0, r0 * 0.99).unwrap() < 0.0);
        assert!(mu_tilde(0.5, 1.0, r0 * 1.01).unwrap() > 0.0);
        assert!(mu_tilde(0.5, 1.0, r0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn empirical_kappa_examples() {
        let g = Potential::mixture(MixtureParams::standard_gaussian(2));
        for r in [0.1, 1.0, 4.0] {
            assert!((empirical_kappa(&g, r, 500, 1).unwrap() - 1.0).abs() < 1e-12);
        }
        let en = Potential::new(Family::ElasticNet, 1).unwrap();
        for r in [0.05, 0.5, 3.0] {
            assert!(empirical_kappa(&en, r, 2000, 2).unwrap() >= 2.0 - 1e-9);
        }
        let m = Potential::benchmark_mixture();
        let (mu, k) = (1.0 / 81.0, 8.0 / 81.0);
        for r in [0.1, 1.0, 5.0] {
            let kap = empirical_kappa(&m, r, 4000, 3).unwrap();
            assert!(kap >= kappa_lower(mu, k + mu, r) - 1e-9);
        }
    }

    #[test]
    fn constants_report_for_benchmark() {
        let p = Potential::benchmark_mixture().semiconvexity_params().unwrap();
        let rep = constants_report(&p).unwrap();
        assert_relative_eq!(rep.l, 9.0 / 81.0, max_relative = 1e-14);
        assert!(rep.t_star > rep.t_bar);
    }
}
