//! Explicit constants of the `W2` error bounds for the backward
//! Euler–Maruyama sampler, the two right-hand sides and the thresholds that
//! make each term smaller than `δ/4`.
//!
//! Every constant is carried as its natural logarithm. Values are only
//! exponentiated when reported; an overflow shows up as `+inf` with
//! [`Term::saturated`] set.

use serde::{Deserialize, Serialize};

use crate::convexity;
use crate::error::{Error, Result};
use crate::numeric::{self, log_sum_exp as lse};

const LN2: f64 = std::f64::consts::LN_2;
/// Width of the search interval for `T_δ` above `max(t̄, ε)`.
pub const T_DELTA_BRACKET: f64 = 200.0;

fn default_zeta() -> f64 {
    0.5
}

fn default_alpha() -> f64 {
    1.0
}

/// Everything the constants depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub d: usize,
    /// `E|X_0|²`.
    pub second_moment: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub mu: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub epsilon: f64,
    pub gamma: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K3")]
    pub k3: f64,
    #[serde(rename = "K4")]
    pub k4: f64,
    #[serde(rename = "K_total")]
    pub k_total: f64,
    /// `|θ*|²`.
    #[serde(default)]
    pub theta_star_norm2: f64,
    #[serde(default)]
    pub eps_al: f64,
    /// `E|θ̂|⁴`.
    #[serde(default)]
    pub theta_hat_m4: f64,
    #[serde(default)]
    pub eps_sn: f64,
}

impl BoundInputs {
    pub fn from_json(text: &str) -> Result<Self> {
        let b: BoundInputs = serde_json::from_str(text)?;
        b.validate()?;
        Ok(b)
    }

    /// Checks every field except `γ` and `ε_SN`.
    fn validate_structure(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::input("d must be positive"));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::input(format!("zeta must lie in (0, 1), got {}", self.zeta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::input(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.horizon > self.epsilon) {
            return Err(Error::input("T must exceed epsilon"));
        }
        if !(self.mu > 0.0) || !(self.alpha > 0.0) {
            return Err(Error::input("mu and alpha must be positive"));
        }
        let nonneg = [
            self.second_moment,
            self.k,
            self.k1,
            self.k3,
            self.k4,
            self.k_total,
            self.theta_star_norm2,
            self.eps_al,
            self.theta_hat_m4,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::input("bound constants must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::input(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.eps_sn >= 0.0) || !self.eps_sn.is_finite() {
            return Err(Error::input("eps_sn must be finite and nonnegative"));
        }
        Ok(())
    }

    fn sqrt_sum(&self) -> f64 {
        self.second_moment.sqrt() + (self.d as f64).sqrt()
    }

    fn tpow(&self, k: f64) -> f64 {
        self.horizon.powf(k * self.alpha)
    }

    /// `∫_ε^T β_t dt = B(T) - B(ε)`.
    pub fn beta_integral(&self) -> Result<f64> {
        Ok(convexity::b_integral(self.horizon, self.mu, self.k)?
            - convexity::b_integral(self.epsilon, self.mu, self.k)?)
    }
}

/// A nonnegative quantity reported through its logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub ln: f64,
    pub value: f64,
    /// `value` overflowed to `+inf`.
    pub saturated: bool,
}

impl Term {
    pub fn from_ln(ln: f64) -> Self {
        let value = ln.exp();
        Term {
            ln,
            value,
            saturated: value.is_infinite(),
        }
    }
}

/// Logarithms of the explicit constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c4_tilde: f64,
    pub c_em2: f64,
    pub c_em4: f64,
    pub c_emose2: f64,
    pub c_emose4: f64,
}

/// `ln C_EM,p(T)`, `p ∈ {2, 4}`, with `E|Ŷ_0|² = d`, `E|Ŷ_0|⁴ = d(d+2)`.
/// Only `d`, `T`, `α`, `K_total`, `ε_AL`, `|θ*|²` and `E|θ̂|⁴` are read;
/// `T = 0` is allowed.
pub fn ln_c_em(inputs: &BoundInputs, p: u32) -> Result<f64> {
    let t = inputs.horizon;
    if !(t >= 0.0) {
        return Err(Error::input("T must be nonnegative"));
    }
    let d = inputs.d as f64;
    let lkt = numeric::ln0(inputs.k_total);
    let lt = numeric::ln0(t);
    match p {
        2 => {
            let poly = 1.0 + inputs.tpow(2.0);
            let expo = t * (4.0 + 8.0 * inputs.k_total.powi(2) * poly);
            let add = lse(&[
                d.ln(),
                16f64.ln()
                    + 2.0 * lkt
                    + lt
                    + (1.0 + 2.0 * inputs.eps_al + 2.0 * inputs.theta_star_norm2).ln()
                    + poly.ln(),
                LN2 + d.ln() + lt,
            ]);
            Ok(expo + add)
        }
        4 => {
            let poly = 1.0 + inputs.tpow(4.0);
            let expo = t * (10.5 + 128.0 * inputs.k_total.powi(4) * poly);
            let add = lse(&[
                (d * (d + 2.0)).ln(),
                1024f64.ln() + 4.0 * lkt + lt + (1.0 + inputs.theta_hat_m4).ln() + poly.ln(),
                8f64.ln() + (d * d + 4.0 * d + 4.0).ln() + lt,
            ]);
            Ok(expo + add)
        }
        _ => Err(Error::input(format!("moment order must be 2 or 4, got {p}"))),
    }
}

pub fn c_em_p(inputs: &BoundInputs, p: u32) -> Result<f64> {
    Ok(ln_c_em(inputs, p)?.exp())
}

/// `ln C_EMose,p`.
pub fn ln_c_emose(inputs: &BoundInputs, p: u32) -> Result<f64> {
    let d = inputs.d as f64;
    let lkt = numeric::ln0(inputs.k_total);
    let em = ln_c_em(inputs, p)?;
    match p {
        2 => {
            let lkp = 2.0 * lkt + (1.0 + inputs.tpow(2.0)).ln();
            let inner = lse(&[
                em + lse(&[0.0, 16f64.ln() + lkp]),
                32f64.ln() + lkp + (1.0 + 2.0 * inputs.eps_al + 2.0 * inputs.theta_star_norm2).ln(),
            ]);
            Ok(lse(&[LN2 + inner, (2.0 * d).ln()]))
        }
        4 => {
            let lkp = 4.0 * lkt + (1.0 + inputs.tpow(4.0)).ln();
            let inner = lse(&[
                em + lse(&[0.0, 1024f64.ln() + lkp]),
                8192f64.ln() + lkp + (1.0 + inputs.theta_hat_m4).ln(),
            ]);
            Ok(lse(&[8f64.ln() + inner, (144.0 * d * d).ln()]))
        }
        _ => Err(Error::input(format!("moment order must be 2 or 4, got {p}"))),
    }
}

pub fn c_emose_p(inputs: &BoundInputs, p: u32) -> Result<f64> {
    Ok(ln_c_emose(inputs, p)?.exp())
}

/// `ln` of the bracket `C_EMose,2^{1/2}(1 + 2K3(1+2T^α)) + 2√2 K1 (1+8ε_AL+8|θ*|²)^{1/2}`.
fn ln_c4_bracket(b: &BoundInputs, ln_emose2: f64) -> f64 {
    let q3 = 1.0 + 2.0 * b.k3 * (1.0 + 2.0 * b.tpow(1.0));
    lse(&[
        0.5 * ln_emose2 + q3.ln(),
        (2.0 * std::f64::consts::SQRT_2).ln()
            + numeric::ln0(b.k1)
            + 0.5 * (1.0 + 8.0 * b.eps_al + 8.0 * b.theta_star_norm2).ln(),
    ])
}

/// `(1 + 1.5ζ + 2K3(1+2T^α))`.
fn c4_rate(b: &BoundInputs) -> f64 {
    1.0 + 1.5 * b.zeta + 2.0 * b.k3 * (1.0 + 2.0 * b.tpow(1.0))
}

/// `(1 + ζ + K3(1 + 2T^α + 4K3(1+4T^{2α})))`.
fn c4_tilde_rate(b: &BoundInputs) -> f64 {
    1.0 + b.zeta + b.k3 * (1.0 + 2.0 * b.tpow(1.0) + 4.0 * b.k3 * (1.0 + 4.0 * b.tpow(2.0)))
}

/// `ln` of the sum under the square root in `C̃4`.
fn ln_c4_tilde_sum(b: &BoundInputs, c: &LogConstants) -> f64 {
    let d = b.d as f64;
    let lz = b.zeta.ln();
    let h = 1.0 + 8.0 * b.k3 * b.k3 * (1.0 + 4.0 * b.tpow(2.0));
    let lh = h.ln();
    let lkt2 = 2.0 * numeric::ln0(b.k_total) + (1.0 + b.tpow(2.0)).ln();
    let theta_al = (1.0 + 2.0 * b.eps_al + 2.0 * b.theta_star_norm2).ln();
    let theta_al8 = (1.0 + 8.0 * b.eps_al + 8.0 * b.theta_star_norm2).ln();
    let lk1 = numeric::ln0(b.k1);
    lse(&[
        2.0 * numeric::ln0(b.k4) - lz + (1.0 + 4.0 * b.tpow(2.0)).ln() + c.c_emose4,
        4f64.ln() + d.ln() + lh,
        LN2 - lz + 2.0 * lk1 + theta_al8,
        4f64.ln() - lz + d.ln() + lh + lse(&[c.c_em2 + lse(&[0.0, 16f64.ln() + lkt2]), 32f64.ln() + lkt2 + theta_al]),
        LN2 + lse(&[0.5 * lh + 0.5 * c.c_emose2, LN2 + lk1 + 0.5 * theta_al8]) + d.ln() + 0.5 * LN2 + 0.5 * lh,
    ])
}

/// All constants at `(T, ε)` of `inputs`.
pub fn log_constants(b: &BoundInputs) -> Result<LogConstants> {
    b.validate_structure()?;
    let span = b.horizon - b.epsilon;
    let ib = b.beta_integral()?;
    let c_em2 = ln_c_em(b, 2)?;
    let c_em4 = ln_c_em(b, 4)?;
    let c_emose2 = ln_c_emose(b, 2)?;
    let c_emose4 = ln_c_emose(b, 4)?;
    let mut c = LogConstants {
        c1: LN2 + b.sqrt_sum().ln(),
        c2: 0.5 * LN2 + b.sqrt_sum().ln(),
        c3: 0.5 * (2.0 / b.zeta).ln() + (1.0 + b.zeta) * span - 2.0 * ib,
        c4: -0.5 * b.zeta.ln() + 0.5 * span.ln() + c4_rate(b) * span + ln_c4_bracket(b, c_emose2),
        c4_tilde: 0.0,
        c_em2,
        c_em4,
        c_emose2,
        c_emose4,
    };
    c.c4_tilde = 0.5 * LN2 + 2.0 * c4_tilde_rate(b) * span + 0.5 * span.ln() + 0.5 * ln_c4_tilde_sum(b, &c);
    Ok(c)
}

/// The four terms of the bound with the `√γ` discretisation term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfOrderTerms {
    /// `C1 √ε`.
    pub early_stopping: Term,
    /// `C2 exp(-2∫_ε^T β_t dt - ε)`.
    pub initialisation: Term,
    /// `C3 √ε_SN`.
    pub score_error: Term,
    /// `C4 √γ`.
    pub discretisation: Term,
    /// Exact sum of the four values.
    pub total: Term,
}

/// Same as [`HalfOrderTerms`] with `C̃4 γ^α` as the discretisation term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullOrderTerms {
    pub early_stopping: Term,
    pub initialisation: Term,
    pub score_error: Term,
    pub discretisation: Term,
    pub total: Term,
}

fn total(lns: [f64; 4]) -> Term {
    let ln = lse(&lns);
    let value: f64 = lns.iter().map(|l| l.exp()).sum();
    Term {
        ln,
        value,
        saturated: value.is_infinite(),
    }
}

fn common_terms(b: &BoundInputs, c: &LogConstants, ln_eps_sn: f64) -> Result<[f64; 3]> {
    let ib = b.beta_integral()?;
    Ok([
        c.c1 + 0.5 * b.epsilon.ln(),
        c.c2 - 2.0 * ib - b.epsilon,
        c.c3 + 0.5 * ln_eps_sn,
    ])
}

/// Bound with `√γ` rate, `γ` and `ε_SN` given through their logarithms so
/// that values below the smallest double remain usable.
pub fn half_order_terms_ln(b: &BoundInputs, ln_gamma: f64, ln_eps_sn: f64) -> Result<HalfOrderTerms> {
    let c = log_constants(b)?;
    let [a, i, s] = common_terms(b, &c, ln_eps_sn)?;
    let g = c.c4 + 0.5 * ln_gamma;
    Ok(HalfOrderTerms {
        early_stopping: Term::from_ln(a),
        initialisation: Term::from_ln(i),
        score_error: Term::from_ln(s),
        discretisation: Term::from_ln(g),
        total: total([a, i, s, g]),
    })
}

pub fn half_order_bound(b: &BoundInputs) -> Result<HalfOrderTerms> {
    b.validate()?;
    half_order_terms_ln(b, b.gamma.ln(), numeric::ln0(b.eps_sn))
}

/// Bound with `γ^α` rate.
pub fn full_order_terms_ln(b: &BoundInputs, ln_gamma: f64, ln_eps_sn: f64) -> Result<FullOrderTerms> {
    let c = log_constants(b)?;
    let [a, i, s] = common_terms(b, &c, ln_eps_sn)?;
    let g = c.c4_tilde + b.alpha * ln_gamma;
    Ok(FullOrderTerms {
        early_stopping: Term::from_ln(a),
        initialisation: Term::from_ln(i),
        score_error: Term::from_ln(s),
        discretisation: Term::from_ln(g),
        total: total([a, i, s, g]),
    })
}

pub fn full_order_bound(b: &BoundInputs) -> Result<FullOrderTerms> {
    b.validate()?;
    full_order_terms_ln(b, b.gamma.ln(), numeric::ln0(b.eps_sn))
}

/// Parameter thresholds for accuracy `δ`. `T_δ` uses the `ε` of the inputs;
/// `ε_SN,δ`, `γ_δ` and `γ̃_δ` use its `(T, ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub delta: f64,
    pub eps_delta: f64,
    pub t_delta: f64,
    pub eps_sn_delta: Term,
    pub gamma_delta: Term,
    pub gamma_tilde_delta: Term,
}

/// Smallest `T ≥ max(t̄, ε)` with
/// `ln(μ(e^{2T}-1)+1) + (K/μ+1)/(μ(e^{2T}-1)+1) > ln(4√2(√E+√d)/δ) + 2B(ε) + K/μ + 1 - ε`.
pub fn t_delta(b: &BoundInputs, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::input("delta must be positive"));
    }
    let (mu, k) = (b.mu, b.k);
    let rhs = (4.0 * std::f64::consts::SQRT_2 * b.sqrt_sum() / delta).ln()
        + 2.0 * convexity::b_integral(b.epsilon, mu, k)?
        + k / mu
        + 1.0
        - b.epsilon;
    let g = |t: f64| {
        let (ln_u, inv_u) = if 2.0 * t > 600.0 {
            let l = mu.ln() + 2.0 * t;
            (l, (-l).exp())
        } else {
            let u = mu * (2.0 * t).exp_m1() + 1.0;
            (u.ln(), 1.0 / u)
        };
        ln_u + (k / mu + 1.0) * inv_u - rhs
    };
    let lo = convexity::t_bar(mu, k).max(b.epsilon);
    if g(lo) > 0.0 {
        return Ok(lo);
    }
    numeric::bisect(g, lo, lo + T_DELTA_BRACKET, 1e-12)
}

pub fn delta_thresholds(b: &BoundInputs, delta: f64) -> Result<Thresholds> {
    b.validate_structure()?;
    if !(delta > 0.0) {
        return Err(Error::input("delta must be positive"));
    }
    let c = log_constants(b)?;
    let span = b.horizon - b.epsilon;
    let ib = b.beta_integral()?;
    let z = b.zeta;
    let eps_delta = delta * delta / (64.0 * b.sqrt_sum().powi(2));
    let ln_eps_sn = (delta * delta * z / 32.0).ln() - 2.0 * (1.0 + z) * span + 4.0 * ib;
    let ln_gamma =
        (delta * delta * z / 16.0).ln() - span.ln() - 2.0 * c4_rate(b) * span - 2.0 * ln_c4_bracket(b, c.c_emose2);
    let ln_gamma_tilde = ((delta / (4.0 * std::f64::consts::SQRT_2)).ln()
        - 0.5 * span.ln()
        - 2.0 * c4_tilde_rate(b) * span
        - 0.5 * ln_c4_tilde_sum(b, &c))
        / b.alpha;
    Ok(Thresholds {
        delta,
        eps_delta,
        t_delta: t_delta(b, delta)?,
        eps_sn_delta: Term::from_ln(ln_eps_sn),
        gamma_delta: Term::from_ln(ln_gamma),
        gamma_tilde_delta: Term::from_ln(ln_gamma_tilde.min(0.0)),
    })
}

/// Parameters `(ε_δ/2, T_δ+1, ε_SN,δ/2, γ_δ/2)` with the last two thresholds
/// taken at the chosen `(T, ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub inputs: BoundInputs,
    pub thresholds: Thresholds,
    pub ln_gamma: f64,
    pub ln_eps_sn: f64,
}

pub fn operating_point(b: &BoundInputs, delta: f64) -> Result<OperatingPoint> {
    let mut op = *b;
    op.epsilon = b.sqrt_sum().powi(-2) * delta * delta / 128.0;
    op.horizon = t_delta(&op, delta)? + 1.0;
    let th = delta_thresholds(&op, delta)?;
    let ln_gamma = th.gamma_delta.ln - LN2;
    let ln_eps_sn = th.eps_sn_delta.ln - LN2;
    op.gamma = ln_gamma.exp();
    op.eps_sn = ln_eps_sn.exp();
    Ok(OperatingPoint {
        inputs: op,
        thresholds: th,
        ln_gamma,
        ln_eps_sn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_inputs() -> BoundInputs {
        BoundInputs {
            d: 1,
            second_moment: 13.0,
            k: 8.0 / 81.0,
            mu: 1.0 / 81.0,
            horizon: 8.0,
            epsilon: 0.01,
            gamma: 1e-3,
            alpha: 1.0,
            zeta: 0.5,
            k1: 0.5,
            k3: 1.0,
            k4: 0.3,
            k_total: 1.5,
            theta_star_norm2: 0.0,
            eps_al: 0.0,
            theta_hat_m4: 0.0,
            eps_sn: 1e-4,
        }
    }

    #[test]
    fn c_em2_small_case_by_hand() {
        let b = BoundInputs {
            horizon: 1.0,
            k_total: 1.0,
            ..sample_inputs()
        };
        // exp(1 (4 + 8·2)) (1 + 16·2 + 2) = 35 e^20
        let want = 35.0 * 20f64.exp();
        assert!((c_em_p(&b, 2).unwrap() / want - 1.0).abs() < 1e-13);
    }

    #[test]
    fn c_em_at_zero_time_is_initial_moment() {
        let b = BoundInputs {
            horizon: 0.0,
            d: 3,
            ..sample_inputs()
        };
        assert!((c_em_p(&b, 2).unwrap() - 3.0).abs() < 1e-12);
        assert!((c_em_p(&b, 4).unwrap() - 15.0).abs() < 1e-12);
    }

    #[test]
    fn c1_example() {
        let b = BoundInputs {
            second_moment: 1.0,
            ..sample_inputs()
        };
        assert!((log_constants(&b).unwrap().c1.exp() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn eps_delta_example() {
        let b = BoundInputs {
            second_moment: 1.0,
            ..sample_inputs()
        };
        let th = delta_thresholds(&b, 0.4).unwrap();
        assert!((th.eps_delta - 6.25e-4).abs() < 1e-16);
    }

    #[test]
    fn total_is_sum_and_gamma_scaling() {
        let b = sample_inputs();
        let r = half_order_bound(&b).unwrap();
        let s = r.early_stopping.value + r.initialisation.value + r.score_error.value + r.discretisation.value;
        assert_eq!(r.total.value, s);
        let r4 = half_order_bound(&BoundInputs { gamma: 4e-3, ..b }).unwrap();
        assert!((r4.discretisation.ln - r.discretisation.ln - LN2).abs() < 1e-14 * r.discretisation.ln.abs().max(1.0));
        let q = full_order_bound(&b).unwrap();
        let q4 = full_order_bound(&BoundInputs { gamma: 4e-3, ..b }).unwrap();
        assert!(
            (q4.discretisation.ln - q.discretisation.ln - 4f64.ln()).abs() < 1e-14 * q.discretisation.ln.abs().max(1.0)
        );
        // Finite values at a short horizon.
        let short = BoundInputs { horizon: 0.5, ..b };
        let r = half_order_bound(&short).unwrap();
        let r4 = half_order_bound(&BoundInputs { gamma: 4e-3, ..short }).unwrap();
        assert!(!r.discretisation.saturated);
        assert!((r4.discretisation.value / r.discretisation.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_operating_point_beats_delta() {
        for delta in [0.5, 0.2, 0.05] {
            let op = operating_point(&sample_inputs(), delta).unwrap();
            let r = half_order_terms_ln(&op.inputs, op.ln_gamma, op.ln_eps_sn).unwrap();
            assert!(r.total.value < delta, "{delta}: {:?}", r);
        }
    }

    #[test]
    fn rejects_bad_zeta() {
        let b = BoundInputs {
            zeta: 1.0,
            ..sample_inputs()
        };
        assert!(half_order_bound(&b).is_err());
    }
}
