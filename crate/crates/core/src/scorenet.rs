//! Linear-in-θ score approximations built from frozen random tanh
//! features, their regularity constants, least-squares fitting against the
//! exact score and Monte-Carlo estimation of `ε_SN`.
//!
//! Each output coordinate is
//!
//! ```text
//! s_k(t, θ, x) = Σ_{f,g} θ_{k,f,g} φ_f(x) τ_g(t)  [+ Σ_l θ_{k,l} x_l]
//! φ_f(x) = tanh(a_f·x + c_f),   τ_0 = 1,   τ_g(t) = tanh(b_g e^{-t} + e_g)
//! ```
//!
//! so per time step the `τ_g` are shared by every trajectory and one
//! evaluation costs `F` tanh calls. Every feature is bounded by one, which
//! makes the Lipschitz constants in `t`, `θ` and `x` explicit. The optional
//! linear block is unbounded in `x`; with it the `θ`-Lipschitz bound only
//! holds on bounded sets, which [`ModelConstants::uniform_in_x`] reports.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ExactScore, OuMarginal};
use crate::numeric;
use crate::potentials::Potential;
use crate::rng::{self, Domain};
use crate::sampler::{simulate_aux, AuxOptions, SamplerConfig, ScoreFn};

/// `max_z |d/dz sech²(z)| = 4/(3 sqrt 3)`.
pub const SECH2_SLOPE_MAX: f64 = 0.769_800_358_919_501_4;

const TIME_STREAM_OFFSET: u64 = 1 << 32;

/// `tanh` through one `exp`; absolute error below `1e-15`.
#[inline]
pub fn fast_tanh(z: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * z).exp() + 1.0)
}

fn default_x_features() -> usize {
    16
}
fn default_t_features() -> usize {
    8
}
fn default_t_scale() -> f64 {
    5.0
}

/// Shape of the frozen feature layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// `F`, number of tanh features in `x`.
    #[serde(default = "default_x_features")]
    pub x_features: usize,
    /// `G`, number of tanh features in time (plus the constant one).
    #[serde(default = "default_t_features")]
    pub t_features: usize,
    /// Standard deviation of the `a_f` entries; defaults to
    /// `1/sqrt(E|X_0|²)` so that `a_f·x` is of order one on the data.
    #[serde(default)]
    pub x_scale: Option<f64>,
    /// Standard deviation of the `b_g`.
    #[serde(default = "default_t_scale")]
    pub t_scale: f64,
    /// Include a time-independent linear block `Θ x`.
    #[serde(default)]
    pub linear: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            x_features: default_x_features(),
            t_features: default_t_features(),
            x_scale: None,
            t_scale: default_t_scale(),
            linear: false,
            seed: 0,
        }
    }
}

/// A linear-in-θ tanh-feature score model with frozen inner weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    dim: usize,
    /// `a_f`, row-major `F × d`.
    x_weights: Vec<f64>,
    x_bias: Vec<f64>,
    t_weights: Vec<f64>,
    t_bias: Vec<f64>,
    linear: bool,
    /// `θ`, row-major `d × P`.
    theta: Vec<f64>,
    alpha: f64,
}

impl ScoreModel {
    /// Frozen features drawn from `spec.seed`; `θ = 0`. Feature `f` uses its
    /// own random stream, so models with more features extend smaller ones.
    pub fn new(spec: &FeatureSpec, dim: usize, x_scale: f64) -> Result<Self> {
        if dim == 0 || spec.x_features == 0 {
            return Err(Error::input(
                "model needs a positive dimension and at least one x feature",
            ));
        }
        let x_scale = spec.x_scale.unwrap_or(x_scale);
        if !(x_scale > 0.0) || !(spec.t_scale >= 0.0) {
            return Err(Error::input("feature scales must be positive"));
        }
        let mut x_weights = Vec::with_capacity(spec.x_features * dim);
        let mut x_bias = Vec::with_capacity(spec.x_features);
        for f in 0..spec.x_features {
            let mut r = rng::stream(spec.seed, Domain::Features, f as u64);
            for _ in 0..dim {
                x_weights.push(x_scale * r.sample::<f64, _>(StandardNormal));
            }
            x_bias.push(r.sample(StandardNormal));
        }
        let mut t_weights = Vec::with_capacity(spec.t_features);
        let mut t_bias = Vec::with_capacity(spec.t_features);
        for g in 0..spec.t_features {
            let mut r = rng::stream(spec.seed, Domain::Features, TIME_STREAM_OFFSET + g as u64);
            t_weights.push(spec.t_scale * r.sample::<f64, _>(StandardNormal));
            t_bias.push(r.sample(StandardNormal));
        }
        let mut m = ScoreModel {
            dim,
            x_weights,
            x_bias,
            t_weights,
            t_bias,
            linear: spec.linear,
            theta: Vec::new(),
            alpha: 1.0,
        };
        m.theta = vec![0.0; dim * m.params_per_output()];
        Ok(m)
    }

    /// Features scaled to the second moment of `p`.
    pub fn for_potential(spec: &FeatureSpec, p: &Potential) -> Result<Self> {
        let m2 = p.second_moment()?.max(1e-12);
        ScoreModel::new(spec, p.dim(), 1.0 / m2.sqrt())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x_features(&self) -> usize {
        self.x_bias.len()
    }

    pub fn t_features(&self) -> usize {
        self.t_bias.len()
    }

    pub fn has_linear_block(&self) -> bool {
        self.linear
    }

    /// `P`, parameters per output coordinate.
    pub fn params_per_output(&self) -> usize {
        self.x_features() * (self.t_features() + 1) + if self.linear { self.dim } else { 0 }
    }

    /// `M = d P`.
    pub fn param_count(&self) -> usize {
        self.dim * self.params_per_output()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::input(format!(
                "theta has {} entries, model expects {}",
                theta.len(),
                self.param_count()
            )));
        }
        self.theta = theta;
        Ok(())
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Result<Self> {
        self.set_theta(theta)?;
        Ok(self)
    }

    fn time_features(&self, t: f64, tau: &mut [f64]) {
        let u = (-t).exp();
        tau[0] = 1.0;
        for g in 0..self.t_features() {
            tau[g + 1] = (self.t_weights[g] * u + self.t_bias[g]).tanh();
        }
    }

    fn x_feature(&self, f: usize, x: &[f64]) -> f64 {
        let a = &self.x_weights[f * self.dim..(f + 1) * self.dim];
        fast_tanh(numeric::dot(a, x) + self.x_bias[f])
    }

    /// Full feature vector `ψ(t, x)` of length `P`.
    pub fn features(&self, t: f64, x: &[f64], psi: &mut [f64]) {
        let g1 = self.t_features() + 1;
        let mut tau = vec![0.0; g1];
        self.time_features(t, &mut tau);
        for f in 0..self.x_features() {
            let phi = self.x_feature(f, x);
            for g in 0..g1 {
                psi[f * g1 + g] = phi * tau[g];
            }
        }
        if self.linear {
            let base = self.x_features() * g1;
            psi[base..base + self.dim].copy_from_slice(x);
        }
    }

    /// `s(t, θ, x)` for an explicit parameter vector.
    pub fn eval_with(&self, theta: &[f64], t: f64, x: &[f64]) -> Vec<f64> {
        let p = self.params_per_output();
        let mut psi = vec![0.0; p];
        self.features(t, x, &mut psi);
        (0..self.dim)
            .map(|k| numeric::dot(&theta[k * p..(k + 1) * p], &psi))
            .collect()
    }

    /// Regularity constants at the current `θ`.
    pub fn constants(&self) -> ModelConstants {
        self.constants_at(&self.theta)
    }

    /// Regularity constants at `theta`.
    ///
    /// * `K1 = sqrt(F Σ_g b_g²)`: `|∂_t s| ≤ K1 |θ|` since `|∂_t τ_g| ≤ |b_g|`.
    /// * `K2 = sqrt(F (G + 1))`: the norm bound of the bounded features.
    /// * `K3`: bound on the `x`-Jacobian, `sqrt(Σ_k (Σ_f w_kf |a_f|)²)`
    ///   plus the Frobenius norm of the linear block, where
    ///   `w_kf = Σ_g |θ_kfg|`.
    /// * `K4 = max_k Σ_f w_kf |a_f|² · 4/(3 sqrt 3)`.
    pub fn constants_at(&self, theta: &[f64]) -> ModelConstants {
        let f_count = self.x_features();
        let g1 = self.t_features() + 1;
        let p = self.params_per_output();
        let a_norm: Vec<f64> = (0..f_count)
            .map(|f| numeric::norm(&self.x_weights[f * self.dim..(f + 1) * self.dim]))
            .collect();
        let mut jac2 = 0.0;
        let mut k4: f64 = 0.0;
        let mut lin2 = 0.0;
        for k in 0..self.dim {
            let row = &theta[k * p..(k + 1) * p];
            let mut lip = 0.0;
            let mut curv = 0.0;
            for f in 0..f_count {
                let w: f64 = row[f * g1..(f + 1) * g1].iter().map(|v| v.abs()).sum();
                lip += w * a_norm[f];
                curv += w * a_norm[f] * a_norm[f];
            }
            jac2 += lip * lip;
            k4 = k4.max(curv * SECH2_SLOPE_MAX);
            if self.linear {
                lin2 += row[f_count * g1..].iter().map(|v| v * v).sum::<f64>();
            }
        }
        let k1 = (f_count as f64 * self.t_weights.iter().map(|b| b * b).sum::<f64>()).sqrt();
        let k2 = ((f_count * g1) as f64).sqrt();
        let k3 = jac2.sqrt() + lin2.sqrt();
        let s000 = 0.0;
        ModelConstants {
            k1,
            k2,
            k3,
            k4,
            k_total: k1 + k2 + k3 + s000,
            alpha: self.alpha,
            s000,
            uniform_in_x: !self.linear,
        }
    }
}

impl ScoreFn for ScoreModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_batch(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let f_count = self.x_features();
        let g1 = self.t_features() + 1;
        let p = self.params_per_output();
        let mut tau = vec![0.0; g1];
        self.time_features(t, &mut tau);
        // Collapse the time features: w[k][f] = Σ_g θ_kfg τ_g.
        let mut w = vec![0.0; d * f_count];
        for k in 0..d {
            for f in 0..f_count {
                let base = k * p + f * g1;
                w[k * f_count + f] = numeric::dot(&self.theta[base..base + g1], &tau);
            }
        }
        let lin_base = f_count * g1;
        for (x, o) in xs.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            o.iter_mut().for_each(|v| *v = 0.0);
            for f in 0..f_count {
                let phi = self.x_feature(f, x);
                for k in 0..d {
                    o[k] += w[k * f_count + f] * phi;
                }
            }
            if self.linear {
                for k in 0..d {
                    o[k] += numeric::dot(&self.theta[k * p + lin_base..(k + 1) * p], x);
                }
            }
        }
    }
}

/// Constants of the regularity assumptions on `s`, with `α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    #[serde(rename = "K3")]
    pub k3: f64,
    #[serde(rename = "K4")]
    pub k4: f64,
    #[serde(rename = "K_total")]
    pub k_total: f64,
    pub alpha: f64,
    /// `|s(0, 0, 0)|`.
    pub s000: f64,
    /// Whether the `θ`-Lipschitz bound holds uniformly in `x`.
    pub uniform_in_x: bool,
}

/// Outcome of a least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean squared residual `|s(t, θ̂, x) - ∇log p_t(x)|²` on the data.
    pub residual: f64,
    /// Ridge added to the normal equations.
    pub ridge: f64,
    pub n_data: usize,
}

/// On-disk model format: the model, its constants at the stored `θ` and
/// optionally the fit and reference statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub model: ScoreModel,
    pub constants: ModelConstants,
    #[serde(default)]
    pub fit: Option<FitReport>,
    #[serde(default)]
    pub reference: Option<ReferenceReport>,
}

impl ModelFile {
    pub fn new(model: ScoreModel, fit: Option<FitReport>, reference: Option<ReferenceReport>) -> Self {
        ModelFile {
            constants: model.constants(),
            model,
            fit,
            reference,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let m = &file.model;
        let ok = m.dim > 0
            && m.x_weights.len() == m.x_bias.len() * m.dim
            && m.t_weights.len() == m.t_bias.len()
            && m.theta.len() == m.param_count();
        if !ok {
            return Err(Error::input("model file has inconsistent array sizes"));
        }
        Ok(file)
    }
}

/// Where and how many regression points to draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub epsilon: f64,
    pub n_data: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Regression data `(t_i, x_i, ∇log p_{t_i}(x_i))` with `t ~ U[ε, T]` and
/// `x ~ L(X_t)`; point `i` uses its own random stream.
pub struct FitData {
    pub dim: usize,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FitData {
    pub fn generate(p: &Potential, exact: &ExactScore, cfg: &FitConfig) -> Result<Self> {
        if !(cfg.epsilon > 0.0 && cfg.epsilon < cfg.horizon) {
            return Err(Error::input("fit needs 0 < epsilon < T"));
        }
        if cfg.n_data == 0 {
            return Err(Error::input("fit needs at least one data point"));
        }
        let d = p.dim();
        let mut t = Vec::with_capacity(cfg.n_data);
        let mut x = vec![0.0; cfg.n_data * d];
        let mut y = vec![0.0; cfg.n_data * d];
        for i in 0..cfg.n_data {
            let mut r = rng::stream(cfg.seed, Domain::FitData, i as u64);
            let ti = cfg.epsilon + (cfg.horizon - cfg.epsilon) * r.gen::<f64>();
            let ou = OuMarginal::at(ti);
            let row = &mut x[i * d..(i + 1) * d];
            p.draw_into(&mut r, row)?;
            let sd = ou.sigma2.sqrt();
            for v in row.iter_mut() {
                *v = ou.m * *v + sd * r.sample::<f64, _>(StandardNormal);
            }
            t.push(ti);
        }
        for i in 0..cfg.n_data {
            exact.eval_batch(t[i], &x[i * d..(i + 1) * d], &mut y[i * d..(i + 1) * d]);
        }
        Ok(FitData { dim: d, t, x, y })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Least squares `min_θ Σ_i |s(t_i, θ, x_i) - y_i|²` through the normal
/// equations. A ridge `λ = 1e-10 tr(A)/P` is added and multiplied by 100
/// until the Cholesky factorisation succeeds.
pub fn fit_data(model: &mut ScoreModel, data: &FitData) -> Result<FitReport> {
    if data.dim != model.dim {
        return Err(Error::input("fit data dimension differs from the model"));
    }
    let d = model.dim;
    let p = model.params_per_output();
    let n = data.len();
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p * d];
    let mut psi = vec![0.0; p];
    for i in 0..n {
        let x = &data.x[i * d..(i + 1) * d];
        let y = &data.y[i * d..(i + 1) * d];
        model.features(data.t[i], x, &mut psi);
        for a in 0..p {
            let pa = psi[a];
            if pa == 0.0 {
                continue;
            }
            let row = &mut gram[a * p..(a + 1) * p];
            for b in a..p {
                row[b] += pa * psi[b];
            }
            for k in 0..d {
                rhs[k * p + a] += pa * y[k];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[a * p + b] = gram[b * p + a];
        }
    }
    let trace: f64 = (0..p).map(|a| gram[a * p + a]).sum();
    let mut ridge = 1e-10 * trace / p as f64;
    let base = DMatrix::from_row_slice(p, p, &gram);
    let chol = loop {
        let mut a = base.clone();
        for i in 0..p {
            a[(i, i)] += ridge;
        }
        if let Some(c) = a.cholesky() {
            break c;
        }
        ridge *= 100.0;
        if !ridge.is_finite() || ridge > trace {
            return Err(Error::Numerical("normal equations could not be regularised".into()));
        }
    };
    let mut theta = vec![0.0; d * p];
    for k in 0..d {
        let b = DVector::from_column_slice(&rhs[k * p..(k + 1) * p]);
        let sol = chol.solve(&b);
        theta[k * p..(k + 1) * p].copy_from_slice(sol.as_slice());
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("least-squares solution is not finite".into()));
    }
    model.set_theta(theta)?;
    let mut sse = 0.0;
    for i in 0..n {
        let x = &data.x[i * d..(i + 1) * d];
        let s = model.eval_with(&model.theta, data.t[i], x);
        sse += s
            .iter()
            .zip(&data.y[i * d..(i + 1) * d])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(FitReport {
        residual: sse / n as f64,
        ridge,
        n_data: n,
    })
}

/// Generate data for `p` and fit `model` to it.
pub fn fit(model: &mut ScoreModel, p: &Potential, cfg: &FitConfig) -> Result<FitReport> {
    let exact = ExactScore::new(p)?;
    let data = FitData::generate(p, &exact, cfg)?;
    fit_data(model, &data)
}

/// `θ*`, `ε_AL = E|θ̂ - θ*|²` and `E|θ̂|⁴` for a fitting procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReport {
    pub theta_star: Vec<f64>,
    pub theta_star_norm2: f64,
    pub eps_al: f64,
    pub theta_hat_m4: f64,
    pub refits: usize,
}

/// `θ*` from one large fit of `n_ref` points; `ε_AL` and `E|θ̂|⁴` from
/// `refits` fits of `cfg.n_data` points with seeds `cfg.seed + 1, ...`.
pub fn estimate_reference(
    template: &ScoreModel,
    p: &Potential,
    cfg: &FitConfig,
    n_ref: usize,
    refits: usize,
) -> Result<ReferenceReport> {
    if refits == 0 {
        return Err(Error::input("need at least one refit"));
    }
    let mut star = template.clone();
    let ref_cfg = FitConfig {
        n_data: n_ref,
        seed: rng::derive(cfg.seed, 0x7e5),
        ..*cfg
    };
    fit(&mut star, p, &ref_cfg)?;
    let mut eps_al = 0.0;
    let mut m4 = 0.0;
    for r in 0..refits {
        let mut m = template.clone();
        let c = FitConfig {
            seed: cfg.seed.wrapping_add(1 + r as u64),
            ..*cfg
        };
        fit(&mut m, p, &c)?;
        eps_al += numeric::dist2(m.theta(), star.theta());
        m4 += numeric::dot(m.theta(), m.theta()).powi(2);
    }
    let theta_star = star.theta().to_vec();
    Ok(ReferenceReport {
        theta_star_norm2: numeric::dot(&theta_star, &theta_star),
        theta_star,
        eps_al: eps_al / refits as f64,
        theta_hat_m4: m4 / refits as f64,
        refits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSn {
    pub value: f64,
    pub stderr: f64,
    pub n_traj: usize,
}

/// Monte-Carlo estimate of `E ∫_0^{T-ε} |∇log p_{T-r}(Y_r) - s(T-r, Y_r)|² dr`
/// along the auxiliary process driven by `model`, as the trajectory average
/// of the left-point sums over the grid.
pub fn epsilon_sn_estimate(model: &dyn ScoreFn, exact: &dyn ScoreFn, cfg: &SamplerConfig) -> Result<EpsilonSn> {
    let run = simulate_aux(model, Some(exact), cfg, AuxOptions::default())?;
    if let Some(d) = run.output.diverged.first() {
        return Err(Error::Diverged {
            trajectory: d.trajectory,
            step: d.step,
            norm: d.norm,
        });
    }
    let v = run.discrepancy.expect("reference supplied");
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(EpsilonSn {
        value: mean,
        stderr: (var / n).sqrt(),
        n_traj: v.len(),
    })
}

/// Finite-difference estimates of the regularity constants of a score
/// without parameters on `[t_min, T] × [-half_width, half_width]^d`:
/// `K1 = sup|∂_t s|`, `K3 = sup|∂_x s|` (operator norm along the probed
/// directions), `K4 = sup` of the per-coordinate gradient variation and
/// `K2 = 0`. These are lower estimates of the suprema on the box.
pub fn estimate_score_constants(
    score: &dyn ScoreFn,
    t_min: f64,
    horizon: f64,
    half_width: f64,
    points: usize,
    seed: u64,
) -> Result<ModelConstants> {
    if !(t_min > 0.0 && t_min < horizon) || points == 0 {
        return Err(Error::input("need 0 < t_min < T and a positive point count"));
    }
    let d = score.dim();
    let mut r = rng::stream(seed, Domain::Pairs, 0);
    let (mut k1, mut k3, mut k4): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let h: f64 = 1e-4;
    let mut x = vec![0.0; d];
    let mut u = vec![0.0; d];
    for i in 0..points {
        let t = if d == 1 {
            // Stratified in t on a square grid for the one-dimensional case.
            let side = (points as f64).sqrt().ceil() as usize;
            let (it, ix) = (i / side, i % side);
            x[0] = -half_width + 2.0 * half_width * (ix as f64 + 0.5) / side as f64;
            t_min + (horizon - t_min) * (it as f64 + 0.5) / side as f64
        } else {
            x.iter_mut()
                .for_each(|v| *v = half_width * (2.0 * r.gen::<f64>() - 1.0));
            t_min + (horizon - t_min) * r.gen::<f64>()
        };
        let th = h.min(0.5 * (t - t_min).max(1e-7));
        let sp = score.eval(t + th, &x);
        let sm = score.eval(t - th, &x);
        let dt: Vec<f64> = sp.iter().zip(&sm).map(|(a, b)| (a - b) / (2.0 * th)).collect();
        k1 = k1.max(numeric::norm(&dt));
        crate::potentials::random_direction(&mut r, &mut u);
        let xp: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - h * b).collect();
        let s0 = score.eval(t, &x);
        let s_p = score.eval(t, &xp);
        let s_m = score.eval(t, &xm);
        let dx: Vec<f64> = s_p.iter().zip(&s_m).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        k3 = k3.max(numeric::norm(&dx));
        // Second directional derivative bounds the gradient variation along u.
        let d2: Vec<f64> = (0..d).map(|k| (s_p[k] - 2.0 * s0[k] + s_m[k]) / (h * h)).collect();
        k4 = k4.max(d2.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    let s000 = numeric::norm(&score.eval(t_min, &vec![0.0; d]));
    Ok(ModelConstants {
        k1,
        k2: 0.0,
        k3,
        k4,
        k_total: k1 + k3 + s000,
        alpha: 1.0,
        s000,
        uniform_in_x: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::MixtureParams;

    fn small_spec() -> FeatureSpec {
        FeatureSpec {
            x_features: 6,
            t_features: 3,
            ..FeatureSpec::default()
        }
    }

    #[test]
    fn fast_tanh_matches_libm() {
        for i in -4000..=4000 {
            let z = i as f64 * 0.01;
            assert!((fast_tanh(z) - z.tanh()).abs() < 1e-15);
        }
        assert_eq!(fast_tanh(1e6), 1.0);
        assert_eq!(fast_tanh(-1e6), -1.0);
    }

    #[test]
    fn zero_theta_gives_zero() {
        let m = ScoreModel::new(&small_spec(), 2, 0.5).unwrap();
        assert_eq!(m.eval(1.0, &[0.3, -2.0]), vec![0.0, 0.0]);
        assert_eq!(m.param_count(), 2 * 6 * 4);
    }

    #[test]
    fn batch_matches_explicit_features() {
        let mut m = ScoreModel::new(
            &FeatureSpec {
                linear: true,
                ..small_spec()
            },
            2,
            0.5,
        )
        .unwrap();
        let theta: Vec<f64> = (0..m.param_count()).map(|i| (i as f64 * 0.37).sin()).collect();
        m.set_theta(theta.clone()).unwrap();
        let x = [0.4, -1.1];
        let a = m.eval(2.5, &x);
        let b = m.eval_with(&theta, 2.5, &x);
        for k in 0..2 {
            assert!((a[k] - b[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn features_are_nested_in_f() {
        let small = ScoreModel::new(
            &FeatureSpec {
                x_features: 3,
                ..small_spec()
            },
            1,
            0.3,
        )
        .unwrap();
        let big = ScoreModel::new(
            &FeatureSpec {
                x_features: 7,
                ..small_spec()
            },
            1,
            0.3,
        )
        .unwrap();
        assert_eq!(small.x_weights[..], big.x_weights[..3]);
        assert_eq!(small.t_weights, big.t_weights);
    }

    #[test]
    fn exactly_representable_score() {
        // Standard Gaussian: score -x is the linear block with Θ = -I.
        let p = Potential::mixture(MixtureParams::standard_gaussian(1));
        let mut m = ScoreModel::for_potential(
            &FeatureSpec {
                linear: true,
                ..small_spec()
            },
            &p,
        )
        .unwrap();
        let rep = fit(
            &mut m,
            &p,
            &FitConfig {
                horizon: 4.0,
                epsilon: 0.01,
                n_data: 2000,
                seed: 1,
            },
        )
        .unwrap();
        assert!(rep.residual < 1e-10, "{rep:?}");
    }

    #[test]
    fn fit_is_deterministic_and_permutation_invariant() {
        let p = Potential::benchmark_mixture();
        let exact = ExactScore::new(&p).unwrap();
        let cfg = FitConfig {
            horizon: 4.0,
            epsilon: 0.01,
            n_data: 3000,
            seed: 5,
        };
        let data = FitData::generate(&p, &exact, &cfg).unwrap();
        let mut a = ScoreModel::for_potential(&small_spec(), &p).unwrap();
        let mut b = a.clone();
        fit_data(&mut a, &data).unwrap();
        fit_data(&mut b, &data).unwrap();
        assert_eq!(a.theta(), b.theta());
        let n = data.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7919) % n).collect();
        let shuffled = FitData {
            dim: 1,
            t: perm.iter().map(|&i| data.t[i]).collect(),
            x: perm.iter().map(|&i| data.x[i]).collect(),
            y: perm.iter().map(|&i| data.y[i]).collect(),
        };
        let mut c = ScoreModel::for_potential(&small_spec(), &p).unwrap();
        fit_data(&mut c, &shuffled).unwrap();
        // The normal equations are ill-conditioned; compare the fitted functions.
        for i in 0..200 {
            let t = 0.01 + 0.02 * i as f64;
            let x = [-6.0 + 0.06 * i as f64];
            assert!((a.eval(t, &x)[0] - c.eval(t, &x)[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn constants_bound_finite_differences() {
        let p = Potential::benchmark_mixture();
        let mut m = ScoreModel::for_potential(&small_spec(), &p).unwrap();
        fit(
            &mut m,
            &p,
            &FitConfig {
                horizon: 8.0,
                epsilon: 0.01,
                n_data: 2000,
                seed: 2,
            },
        )
        .unwrap();
        let c = m.constants();
        let est = estimate_score_constants(&m, 0.01, 8.0, 10.0, 2500, 3).unwrap();
        let theta_norm = numeric::norm(m.theta());
        assert!(est.k1 <= c.k1 * theta_norm * (1.0 + 1e-6));
        assert!(est.k3 <= c.k3 * (1.0 + 1e-6));
        assert!(est.k4 <= c.k4 * (1.0 + 1e-3) + 1e-9);
    }

    #[test]
    fn json_round_trip() {
        let p = Potential::benchmark_mixture();
        let mut m = ScoreModel::for_potential(&small_spec(), &p).unwrap();
        let rep = fit(
            &mut m,
            &p,
            &FitConfig {
                horizon: 8.0,
                epsilon: 0.01,
                n_data: 500,
                seed: 2,
            },
        )
        .unwrap();
        let text = ModelFile::new(m.clone(), Some(rep.clone()), None).to_json().unwrap();
        let back = ModelFile::from_json(&text).unwrap();
        assert_eq!(back.model, m);
        assert_eq!(back.fit.unwrap(), rep);
    }

    #[test]
    fn exact_wrapper_has_zero_epsilon_sn() {
        let p = Potential::benchmark_mixture();
        let exact = ExactScore::new(&p).unwrap();
        let cfg = SamplerConfig::new(2.0, 0.01, 0.05, 64, 1).unwrap();
        let e = epsilon_sn_estimate(&exact, &exact, &cfg).unwrap();
        assert!(e.value < 1e-10);
    }
}
