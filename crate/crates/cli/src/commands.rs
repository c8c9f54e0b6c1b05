use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sgmlab_core::bounds::{self, BoundInputs};
use sgmlab_core::convexity::{self, constants_report};
use sgmlab_core::numeric::linear_fit;
use sgmlab_core::potentials::{check_semiconvexity, Family, MixtureParams, Potential, PotentialConfig};
use sgmlab_core::rng;
use sgmlab_core::sampler::{backward_em, SamplerConfig, ScoreFn};
use sgmlab_core::scorenet::{
    self, estimate_score_constants, FeatureSpec, FitConfig, ModelConstants, ModelFile, ScoreModel,
};
use sgmlab_core::wasserstein::{self, W2Method, ASSIGNMENT_LIMIT};
use sgmlab_core::{Error as CoreError, ExactScore, Samples};

use crate::output::{config_hash, num, read_numeric_csv, OutDir};
use crate::svg;
use crate::InvariantFailure;

pub struct Context {
    out: OutDir,
    seed: Option<u64>,
}

impl Context {
    pub fn new(out: &Path, seed: Option<u64>) -> Result<Self> {
        Ok(Context {
            out: OutDir::create(out)?,
            seed,
        })
    }

    fn seed_or(&self, config_seed: u64) -> u64 {
        self.seed.unwrap_or(config_seed)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_potential(path: &Path) -> Result<(PotentialConfig, Potential)> {
    let cfg: PotentialConfig = read_json(path)?;
    let p = cfg
        .build()
        .with_context(|| format!("building potential from {}", path.display()))?;
    Ok((cfg, p))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Serialize)]
struct ConstantsOut {
    family: &'static str,
    dim: usize,
    second_moment: f64,
    semiconvexity: sgmlab_core::SemiconvexityParams,
    constants: convexity::ConstantsReport,
}

pub fn constants(ctx: &Context, potential: &Path) -> Result<()> {
    let (_, p) = load_potential(potential)?;
    let params = p.semiconvexity_params()?;
    let out = ConstantsOut {
        family: p.family().name(),
        dim: p.dim(),
        second_moment: p.second_moment()?,
        semiconvexity: params,
        constants: constants_report(&params)?,
    };
    ctx.out.write_json("constants.json", &out)?;
    print_json(&out)
}

/// `∇log p_t(x)`; at `t = 0` the negative minimal-norm subgradient of `U`.
fn score_value(p: &Potential, exact: &ExactScore, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    if t == 0.0 {
        Ok(p.subgradient(x)?.into_iter().map(|g| -g).collect())
    } else {
        Ok(exact.score(t, x)?)
    }
}

pub fn score_profile(ctx: &Context, potential: &Path, points: usize, t_max: f64) -> Result<()> {
    ensure!(points >= 2, "need at least two time points");
    ensure!(t_max > 0.0, "t_max must be positive");
    let (cfg, p) = load_potential(potential)?;
    let exact = ExactScore::new(&p)?;
    let d = p.dim();
    let xs = [-0.8, 0.5];
    let point = |x: f64| {
        let mut v = vec![0.0; d];
        v[0] = x;
        v
    };
    let mut rows = Vec::with_capacity(points);
    let mut series: Vec<svg::Series> = xs
        .iter()
        .map(|x| svg::Series {
            label: format!("x = {x}"),
            points: Vec::with_capacity(points),
        })
        .collect();
    for i in 0..points {
        let t = t_max * i as f64 / (points - 1) as f64;
        let mut row = vec![num(t)];
        for (k, &x) in xs.iter().enumerate() {
            let s = score_value(&p, &exact, t, &point(x))?[0];
            row.push(num(s));
            series[k].points.push((t, s));
        }
        rows.push(row);
    }
    let t_bar = p.semiconvexity_params().ok().map(|s| convexity::t_bar(s.mu, s.k));
    let hash = config_hash(&cfg, 0)?;
    ctx.out
        .write_csv("score_profile.csv", &hash, &["t", "score_x=-0.8", "score_x=0.5"], &rows)?;
    let chart = svg::Chart {
        title: format!("score of {} against time", p.family().name()),
        x_label: "t".into(),
        y_label: "score".into(),
        series,
        markers: t_bar
            .map(|tb| {
                vec![svg::Marker {
                    x: tb,
                    label: format!("t̄ = {tb:.4}"),
                }]
            })
            .unwrap_or_default(),
    };
    ctx.out.write_text("score_profile.svg", &svg::render(&chart))?;
    let mut worst: f64 = 0.0;
    for &x in &xs {
        worst = worst.max((score_value(&p, &exact, 10.0, &point(x))?[0] + x).abs());
    }
    print_json(&serde_json::json!({
        "t_bar": t_bar,
        "points": points,
        "max_gap_to_minus_x_at_t10": worst,
    }))?;
    if worst > 1e-3 {
        return Err(InvariantFailure(format!("score(10, x) differs from -x by {worst:.3e}")).into());
    }
    Ok(())
}

enum Score {
    Exact(ExactScore),
    Model(Box<ModelFile>),
}

impl Score {
    fn as_fn(&self) -> &dyn ScoreFn {
        match self {
            Score::Exact(e) => e,
            Score::Model(m) => &m.model,
        }
    }
}

#[derive(Serialize)]
struct W2Summary {
    method: W2Method,
    value: f64,
    baseline: f64,
    corrected: f64,
}

/// W2 to a fresh target sample, minus the W2 between two target samples.
fn corrected_w2(p: &Potential, y: &Samples, seed: u64, method: Option<W2Method>) -> Result<Option<W2Summary>> {
    let method = match method {
        Some(m) => m,
        None if y.dim() == 1 => W2Method::Quantile1d,
        None if y.len() <= ASSIGNMENT_LIMIT => W2Method::ExactAssignment,
        None => return Ok(None),
    };
    let n = y.len();
    let f1 = p.sample(n, rng::derive(seed, 1))?;
    let f2 = p.sample(n, rng::derive(seed, 2))?;
    let value = wasserstein::w2(y, &f1, method)?.value;
    let baseline = wasserstein::w2(&f1, &f2, method)?.value;
    Ok(Some(W2Summary {
        method,
        value,
        baseline,
        corrected: value - baseline,
    }))
}

#[derive(Serialize)]
struct SampleSummary {
    n: usize,
    steps: usize,
    terminal_time: f64,
    diverged: usize,
    mean: Vec<f64>,
    second_moment: f64,
    w2: Option<W2Summary>,
}

pub fn sample(ctx: &Context, potential: &Path, sampler: &Path, model: Option<&Path>) -> Result<()> {
    let (pcfg, p) = load_potential(potential)?;
    let mut cfg: SamplerConfig = read_json(sampler)?;
    cfg.seed = ctx.seed_or(cfg.seed);
    cfg.validate()?;
    let score = match model {
        Some(m) => Score::Model(Box::new(ModelFile::from_json(&fs::read_to_string(m)?)?)),
        None => Score::Exact(ExactScore::new(&p)?),
    };
    ensure!(
        score.as_fn().dim() == p.dim(),
        "score dimension differs from the potential"
    );
    let out = backward_em(score.as_fn(), &cfg)?;
    let y = out.finite_samples();
    let hash = config_hash(&(&pcfg, &cfg, model), cfg.seed)?;
    let header: Vec<String> = (0..y.dim()).map(|k| format!("x{k}")).collect();
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = y.rows().map(|r| r.iter().map(|v| num(*v)).collect()).collect();
    ctx.out.write_csv("samples.csv", &hash, &header_ref, &rows)?;
    let summary = SampleSummary {
        n: cfg.n,
        steps: cfg.steps(),
        terminal_time: cfg.terminal_time(),
        diverged: out.diverged.len(),
        mean: y.mean(),
        second_moment: y.second_moment(),
        w2: if y.is_empty() {
            None
        } else {
            corrected_w2(&p, &y, cfg.seed, None)?
        },
    };
    ctx.out.write_json("sample_summary.json", &summary)?;
    print_json(&summary)?;
    if let Some(d) = out.diverged.first() {
        return Err(CoreError::Diverged {
            trajectory: d.trajectory,
            step: d.step,
            norm: d.norm,
        }
        .into());
    }
    Ok(())
}

pub fn fit(
    ctx: &Context,
    potential: &Path,
    fit_cfg: &Path,
    features: Option<&Path>,
    refits: usize,
    n_ref: usize,
) -> Result<()> {
    let (_, p) = load_potential(potential)?;
    let mut cfg: FitConfig = read_json(fit_cfg)?;
    cfg.seed = ctx.seed_or(cfg.seed);
    let spec: FeatureSpec = match features {
        Some(f) => read_json(f)?,
        None => FeatureSpec::default(),
    };
    let mut model = ScoreModel::for_potential(&spec, &p)?;
    let report = scorenet::fit(&mut model, &p, &cfg)?;
    let reference = if refits > 0 {
        Some(scorenet::estimate_reference(&model, &p, &cfg, n_ref, refits)?)
    } else {
        None
    };
    let file = ModelFile::new(model, Some(report.clone()), reference.clone());
    ctx.out.write_text("model.json", &file.to_json()?)?;
    print_json(&serde_json::json!({
        "fit": report,
        "rms_residual": report.residual.sqrt(),
        "constants": file.constants,
        "params": file.model.param_count(),
        "theta_star_norm2": reference.as_ref().map(|r| r.theta_star_norm2),
        "eps_al": reference.as_ref().map(|r| r.eps_al),
        "theta_hat_m4": reference.as_ref().map(|r| r.theta_hat_m4),
    }))
}

fn read_samples(path: &Path) -> Result<Samples> {
    let (header, rows) = read_numeric_csv(path)?;
    ensure!(!rows.is_empty(), "{} has no rows", path.display());
    let d = header.len();
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Samples::new(d, data)?)
}

pub fn w2(ctx: &Context, a: &Path, b: &Path, method: &str, bootstrap: usize) -> Result<()> {
    let method: W2Method = method.parse()?;
    let (sa, sb) = (read_samples(a)?, read_samples(b)?);
    let report = wasserstein::w2_bootstrap(&sa, &sb, method, bootstrap, ctx.seed_or(0))?;
    ctx.out.write_json("w2.json", &report)?;
    print_json(&report)
}

#[derive(Serialize)]
struct OperatingOut {
    inputs: BoundInputs,
    ln_gamma: f64,
    ln_eps_sn: f64,
    half_order: bounds::HalfOrderTerms,
}

#[derive(Serialize)]
struct BoundsOut {
    inputs: BoundInputs,
    ln_constants: bounds::LogConstants,
    half_order: bounds::HalfOrderTerms,
    full_order: bounds::FullOrderTerms,
    thresholds: Option<bounds::Thresholds>,
    operating_point: Option<OperatingOut>,
}

pub fn bounds(ctx: &Context, inputs: &Path, delta: Option<f64>) -> Result<()> {
    let b =
        BoundInputs::from_json(&fs::read_to_string(inputs).with_context(|| format!("reading {}", inputs.display()))?)?;
    let (thresholds, operating_point) = match delta {
        Some(delta) => {
            let op = bounds::operating_point(&b, delta)?;
            let terms = bounds::half_order_terms_ln(&op.inputs, op.ln_gamma, op.ln_eps_sn)?;
            (
                Some(bounds::delta_thresholds(&b, delta)?),
                Some(OperatingOut {
                    inputs: op.inputs,
                    ln_gamma: op.ln_gamma,
                    ln_eps_sn: op.ln_eps_sn,
                    half_order: terms,
                }),
            )
        }
        None => (None, None),
    };
    let out = BoundsOut {
        inputs: b,
        ln_constants: bounds::log_constants(&b)?,
        half_order: bounds::half_order_bound(&b)?,
        full_order: bounds::full_order_bound(&b)?,
        thresholds,
        operating_point,
    };
    ctx.out.write_json("bounds.json", &out)?;
    print_json(&out)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    #[default]
    Exact,
    Model(PathBuf),
}

fn default_replicates() -> usize {
    1
}

/// Sweep configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub potential: PotentialConfig,
    pub gammas: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub horizons: Vec<f64>,
    #[serde(default)]
    pub score: ScoreSource,
    #[serde(default)]
    pub method: Option<W2Method>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub n: usize,
    #[serde(default)]
    pub zeta: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

struct SweepRow {
    gamma: f64,
    epsilon: f64,
    horizon: f64,
    replicate: usize,
    eps_sn: f64,
    w2: W2Summary,
    half: bounds::HalfOrderTerms,
    full: bounds::FullOrderTerms,
}

#[derive(Serialize)]
struct Regression {
    axis: &'static str,
    group: String,
    points: usize,
    slope: f64,
    stderr: f64,
}

type AxisSum = (f64, f64, usize);

/// Slope of `ln(mean corrected W2)` against `ln(axis)` within each group.
fn regress(
    rows: &[SweepRow],
    axis: &'static str,
    x: fn(&SweepRow) -> f64,
    group: fn(&SweepRow) -> String,
) -> Vec<Regression> {
    // Per group: (axis value, sum of corrected W2, count).
    let mut groups: Vec<(String, Vec<AxisSum>)> = Vec::new();
    for r in rows {
        let g = group(r);
        let idx = match groups.iter().position(|(k, _)| *k == g) {
            Some(i) => i,
            None => {
                groups.push((g, Vec::new()));
                groups.len() - 1
            }
        };
        let pts = &mut groups[idx].1;
        match pts.iter_mut().find(|(xv, _, _)| *xv == x(r)) {
            Some(p) => {
                p.1 += r.w2.corrected;
                p.2 += 1;
            }
            None => pts.push((x(r), r.w2.corrected, 1)),
        }
    }
    groups
        .into_iter()
        .filter_map(|(g, pts)| {
            let means: Vec<(f64, f64)> = pts.iter().map(|(xv, s, c)| (*xv, s / *c as f64)).collect();
            if means.len() < 2 || means.iter().any(|(_, m)| !(*m > 0.0)) {
                return None;
            }
            let lx: Vec<f64> = means.iter().map(|(xv, _)| xv.ln()).collect();
            let ly: Vec<f64> = means.iter().map(|(_, m)| m.ln()).collect();
            let (slope, _, se) = linear_fit(&lx, &ly);
            Some(Regression {
                axis,
                group: g,
                points: means.len(),
                slope,
                stderr: se,
            })
        })
        .collect()
}

pub fn sweep(ctx: &Context, spec_path: &Path) -> Result<()> {
    let spec: ExperimentSpec = read_json(spec_path)?;
    ensure!(
        !spec.gammas.is_empty() && !spec.epsilons.is_empty() && !spec.horizons.is_empty(),
        "sweep grids must be non-empty"
    );
    ensure!(spec.replicates >= 1, "replicates must be at least 1");
    ensure!(spec.n >= 2, "need at least two samples per run");
    let seed = ctx.seed_or(spec.seed);
    let p = spec.potential.build()?;
    let exact = ExactScore::new(&p)?;
    let model = match &spec.score {
        ScoreSource::Exact => None,
        ScoreSource::Model(path) => {
            let path = if path.is_relative() {
                spec_path.parent().unwrap_or(Path::new(".")).join(path)
            } else {
                path.clone()
            };
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            Some(ModelFile::from_json(&text)?)
        }
    };
    if let Some(m) = &model {
        ensure!(m.model.dim() == p.dim(), "model dimension differs from the potential");
    }
    let sc = p.semiconvexity_params()?;
    let second_moment = p.second_moment()?;
    let half_width = 10f64.max(4.0 * second_moment.sqrt());

    let mut horizon_constants: Vec<(f64, ModelConstants)> = Vec::new();
    for &t in &spec.horizons {
        let c = match &model {
            Some(m) => m.constants,
            None => estimate_score_constants(&exact, 1e-3_f64.min(0.5 * t), t, half_width, 4_000, seed)?,
        };
        horizon_constants.push((t, c));
    }

    let mut jobs = Vec::new();
    for &gamma in &spec.gammas {
        for &epsilon in &spec.epsilons {
            for (hi, &horizon) in spec.horizons.iter().enumerate() {
                for replicate in 0..spec.replicates {
                    jobs.push((gamma, epsilon, horizon, hi, replicate));
                }
            }
        }
    }
    let score: &dyn ScoreFn = match &model {
        Some(m) => &m.model,
        None => &exact,
    };
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(gamma, epsilon, horizon, hi, replicate)| -> Result<SweepRow> {
            let run_seed = rng::derive(seed, replicate as u64);
            let cfg = SamplerConfig::new(horizon, epsilon, gamma, spec.n, run_seed)?;
            let y = backward_em(score, &cfg)?.into_samples()?;
            let Some(w2) = corrected_w2(&p, &y, run_seed, spec.method)? else {
                bail!("no W2 method applies to {} samples in dimension {}", y.len(), y.dim());
            };
            let eps_sn = match &model {
                Some(m) => scorenet::epsilon_sn_estimate(&m.model, &exact, &cfg)?.value,
                None => 0.0,
            };
            let c = horizon_constants[hi].1;
            let reference = model.as_ref().and_then(|m| m.reference.as_ref());
            let inputs = BoundInputs {
                d: p.dim(),
                second_moment,
                k: sc.k,
                mu: sc.mu,
                horizon,
                epsilon,
                gamma,
                alpha: c.alpha,
                zeta: spec.zeta.unwrap_or(0.5),
                k1: c.k1,
                k3: c.k3,
                k4: c.k4,
                k_total: c.k_total,
                theta_star_norm2: reference.map_or(0.0, |r| r.theta_star_norm2),
                eps_al: reference.map_or(0.0, |r| r.eps_al),
                theta_hat_m4: reference.map_or(0.0, |r| r.theta_hat_m4),
                eps_sn,
            };
            Ok(SweepRow {
                gamma,
                epsilon,
                horizon,
                replicate,
                eps_sn,
                w2,
                half: bounds::half_order_bound(&inputs)?,
                full: bounds::full_order_bound(&inputs)?,
            })
        })
        .collect::<Result<_>>()?;

    let header = [
        "gamma",
        "epsilon",
        "T",
        "replicate",
        "eps_sn",
        "w2",
        "w2_baseline",
        "w2_corrected",
        "early_stopping",
        "initialisation",
        "score_error",
        "discretisation",
        "bound_half_order",
        "ln_bound_half_order",
        "bound_full_order",
        "ln_bound_full_order",
    ];
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.gamma),
                num(r.epsilon),
                num(r.horizon),
                r.replicate.to_string(),
                num(r.eps_sn),
                num(r.w2.value),
                num(r.w2.baseline),
                num(r.w2.corrected),
                num(r.half.early_stopping.value),
                num(r.half.initialisation.value),
                num(r.half.score_error.value),
                num(r.half.discretisation.value),
                num(r.half.total.value),
                num(r.half.total.ln),
                num(r.full.total.value),
                num(r.full.total.ln),
            ]
        })
        .collect();
    let hash = config_hash(&spec, seed)?;
    ctx.out.write_csv("sweep.csv", &hash, &header, &csv_rows)?;
    let mut regressions = regress(
        &rows,
        "gamma",
        |r| r.gamma,
        |r| format!("epsilon={},T={}", r.epsilon, r.horizon),
    );
    regressions.extend(regress(
        &rows,
        "epsilon",
        |r| r.epsilon,
        |r| format!("gamma={},T={}", r.gamma, r.horizon),
    ));
    regressions.extend(regress(
        &rows,
        "T",
        |r| r.horizon,
        |r| format!("gamma={},epsilon={}", r.gamma, r.epsilon),
    ));
    let bound_violations = rows.iter().filter(|r| r.w2.value > r.half.total.value).count();
    let summary = serde_json::json!({
        "config_hash": hash,
        "rows": rows.len(),
        "regressions": regressions,
        "bound_violations": bound_violations,
    });
    ctx.out.write_json("sweep_summary.json", &summary)?;
    print_json(&summary)?;
    if bound_violations > 0 {
        return Err(InvariantFailure(format!("{bound_violations} runs exceed the W2 bound")).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct FamilyCheck {
    family: String,
    dim: usize,
    pass: bool,
    report: sgmlab_core::potentials::SemiconvexityReport,
    /// `κ̂(0.05)`; negative values show the potential is not convex.
    kappa_small_r: f64,
    k_positive_detected: bool,
}

fn builtin_families() -> Result<Vec<Potential>> {
    Ok(vec![
        Potential::benchmark_mixture(),
        Potential::mixture(MixtureParams::standard_gaussian(2)),
        Potential::half_normal(1.0)?,
        Potential::new(Family::DoubleWell, 2)?,
        Potential::new(Family::ElasticNet, 2)?,
        Potential::new(Family::MaxNorm, 2)?,
        Potential::new(Family::MaxNormNonconvex, 2)?,
    ])
}

pub fn verify_assumptions(ctx: &Context, potentials: &[PathBuf], pairs: usize) -> Result<()> {
    let list = if potentials.is_empty() {
        builtin_families()?
    } else {
        potentials
            .iter()
            .map(|p| load_potential(p).map(|(_, p)| p))
            .collect::<Result<_>>()?
    };
    let seed = ctx.seed_or(0);
    let mut checks = Vec::new();
    for (i, p) in list.iter().enumerate() {
        let s = rng::derive(seed, i as u64);
        let report = check_semiconvexity(p, pairs, s, 1e-9)?;
        let kappa = convexity::empirical_kappa(p, 0.05, pairs.clamp(1, 5_000), s)?;
        checks.push(FamilyCheck {
            family: report.family.clone(),
            dim: p.dim(),
            pass: report.pass(),
            kappa_small_r: kappa,
            k_positive_detected: kappa < 0.0,
            report,
        });
    }
    ctx.out.write_json("verify_assumptions.json", &checks)?;
    print_json(&checks)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.family.as_str()).collect();
    if !failed.is_empty() {
        return Err(InvariantFailure(format!("semiconvexity checks failed for {}", failed.join(", "))).into());
    }
    Ok(())
}
