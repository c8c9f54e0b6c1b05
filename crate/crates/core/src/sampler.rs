//! Backward Euler–Maruyama scheme for the time-reversed OU diffusion.
//!
//! ```text
//! Y_0 ~ N(0, I),   Y_{j+1} = Y_j + γ (Y_j + 2 s(T - t_j, Y_j)) + sqrt(2γ) Z_{j+1}
//! ```
//!
//! on the grid `t_j = jγ`, `j = 0..J`, `J = ⌊(T - ε)/γ⌋`. The partial step
//! that would reach `T - ε` exactly is dropped.
//!
//! Trajectory `i` draws every Gaussian from its own stream keyed by
//! `(seed, i)`, so results do not depend on thread count or batching.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::samples::Samples;

/// States with norm above this abort their trajectory.
pub const DIVERGENCE_THRESHOLD: f64 = 1e8;

const BLOCK: usize = 256;

/// A (possibly approximate) score `s(t, x)`.
pub trait ScoreFn: Sync {
    fn dim(&self) -> usize;

    /// Evaluate at time `t` for every row of `xs` (row-major, `dim` wide).
    fn eval_batch(&self, t: f64, xs: &[f64], out: &mut [f64]);

    fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.eval_batch(t, x, &mut out);
        out
    }
}

impl<S: ScoreFn + ?Sized> ScoreFn for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval_batch(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        (**self).eval_batch(t, xs, out)
    }
}

/// A score given by a closure `f(t, x, out)`.
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64]) + Sync> FnScore<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnScore { dim, f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64]) + Sync> ScoreFn for FnScore<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_batch(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        for (x, o) in xs.chunks_exact(self.dim).zip(out.chunks_exact_mut(self.dim)) {
            (self.f)(t, x, o);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Horizon `T`.
    #[serde(rename = "T")]
    pub horizon: f64,
    pub epsilon: f64,
    pub gamma: f64,
    /// Number of trajectories.
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(horizon: f64, epsilon: f64, gamma: f64, n: usize, seed: u64) -> Result<Self> {
        let cfg = SamplerConfig {
            horizon,
            epsilon,
            gamma,
            n,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < self.horizon) || !self.horizon.is_finite() {
            return Err(Error::input(format!(
                "need 0 < epsilon < T (got epsilon = {}, T = {})",
                self.epsilon, self.horizon
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::input(format!(
                "step size must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if self.n == 0 {
            return Err(Error::input("trajectory count must be at least 1"));
        }
        Ok(())
    }

    /// `J = ⌊(T - ε)/γ⌋`. Ratios within `1e-9` (relative) of an integer
    /// count as that integer, so decimal step sizes give the expected count.
    pub fn steps(&self) -> usize {
        let q = (self.horizon - self.epsilon) / self.gamma;
        let r = q.round();
        if (q - r).abs() <= 1e-9 * q.max(1.0) {
            r as usize
        } else {
            q.floor() as usize
        }
    }

    /// `t_J = Jγ`.
    pub fn terminal_time(&self) -> f64 {
        self.steps() as f64 * self.gamma
    }
}

/// Grid `t_j = jγ`, `j = 0..=J`.
pub fn time_grid(cfg: &SamplerConfig) -> Vec<f64> {
    (0..=cfg.steps()).map(|j| j as f64 * cfg.gamma).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Divergence {
    pub trajectory: usize,
    pub step: usize,
    pub norm: f64,
}

/// Terminal states of a run. Rows of diverged trajectories hold their last
/// finite state and are listed in `diverged`.
#[derive(Debug, Clone)]
pub struct SamplerOutput {
    pub terminal: Samples,
    pub diverged: Vec<Divergence>,
}

impl SamplerOutput {
    /// The terminal samples, or the first divergence as an error.
    pub fn into_samples(self) -> Result<Samples> {
        match self.diverged.first() {
            Some(d) => Err(Error::Diverged {
                trajectory: d.trajectory,
                step: d.step,
                norm: d.norm,
            }),
            None => Ok(self.terminal),
        }
    }

    /// Terminal samples of the trajectories that did not diverge.
    pub fn finite_samples(&self) -> Samples {
        if self.diverged.is_empty() {
            return self.terminal.clone();
        }
        let bad: std::collections::HashSet<usize> = self.diverged.iter().map(|d| d.trajectory).collect();
        let d = self.terminal.dim();
        let data: Vec<f64> = self
            .terminal
            .rows()
            .enumerate()
            .filter(|(i, _)| !bad.contains(i))
            .flat_map(|(_, r)| r.iter().copied())
            .collect();
        Samples::new(d, data).expect("rows have the sample dimension")
    }
}

/// Options for [`simulate_aux`].
#[derive(Debug, Clone, Copy, Default)]
pub struct AuxOptions {
    /// Keep every `k`-th state (and the terminal one) when `Some(k)`.
    pub keep_every: Option<usize>,
}

/// States retained along the grid: `data[(i * steps.len() + s) * d + k]`.
#[derive(Debug, Clone)]
pub struct TrajectoryStore {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl TrajectoryStore {
    pub fn state(&self, trajectory: usize, slot: usize) -> &[f64] {
        let base = (trajectory * self.steps.len() + slot) * self.dim;
        &self.data[base..base + self.dim]
    }
}

#[derive(Debug, Clone)]
pub struct AuxRun {
    pub output: SamplerOutput,
    pub store: Option<TrajectoryStore>,
    /// Per trajectory `Σ_j γ |reference - s|²` over the grid, when a
    /// reference score was supplied.
    pub discrepancy: Option<Vec<f64>>,
}

/// Run the backward scheme with `score` and return the terminal states.
pub fn backward_em<S: ScoreFn + ?Sized>(score: &S, cfg: &SamplerConfig) -> Result<SamplerOutput> {
    Ok(run(score, None, cfg, AuxOptions::default())?.output)
}

/// The auxiliary process: the same recursion, optionally retaining states
/// and integrating `|reference - score|²` along each trajectory.
pub fn simulate_aux<S: ScoreFn + ?Sized>(
    score: &S,
    reference: Option<&dyn ScoreFn>,
    cfg: &SamplerConfig,
    opts: AuxOptions,
) -> Result<AuxRun> {
    run(score, reference, cfg, opts)
}

struct BlockResult {
    terminal: Vec<f64>,
    diverged: Vec<Divergence>,
    store: Vec<f64>,
    discrepancy: Vec<f64>,
}

fn run<S: ScoreFn + ?Sized>(
    score: &S,
    reference: Option<&dyn ScoreFn>,
    cfg: &SamplerConfig,
    opts: AuxOptions,
) -> Result<AuxRun> {
    cfg.validate()?;
    let d = score.dim();
    if let Some(r) = reference {
        if r.dim() != d {
            return Err(Error::input("reference score dimension differs from the model"));
        }
    }
    if opts.keep_every == Some(0) {
        return Err(Error::input("keep_every must be positive"));
    }
    let j_steps = cfg.steps();
    let kept: Vec<usize> = match opts.keep_every {
        Some(k) => {
            let mut v: Vec<usize> = (0..=j_steps).step_by(k).collect();
            if *v.last().unwrap() != j_steps {
                v.push(j_steps);
            }
            v
        }
        None => Vec::new(),
    };

    let starts: Vec<usize> = (0..cfg.n).step_by(BLOCK).collect();
    let blocks: Vec<BlockResult> = starts
        .par_iter()
        .map(|&start| {
            let len = BLOCK.min(cfg.n - start);
            run_block(score, reference, cfg, start, len, d, j_steps, &kept)
        })
        .collect();

    let mut terminal = Vec::with_capacity(cfg.n * d);
    let mut diverged = Vec::new();
    let mut store = Vec::new();
    let mut discrepancy = Vec::new();
    for b in blocks {
        terminal.extend(b.terminal);
        diverged.extend(b.diverged);
        store.extend(b.store);
        discrepancy.extend(b.discrepancy);
    }
    let output = SamplerOutput {
        terminal: Samples::new(d, terminal)?,
        diverged,
    };
    let store = opts.keep_every.map(|_| TrajectoryStore {
        times: kept.iter().map(|j| *j as f64 * cfg.gamma).collect(),
        steps: kept,
        dim: d,
        data: store,
    });
    Ok(AuxRun {
        output,
        store,
        discrepancy: reference.map(|_| discrepancy),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_block<S: ScoreFn + ?Sized>(
    score: &S,
    reference: Option<&dyn ScoreFn>,
    cfg: &SamplerConfig,
    start: usize,
    len: usize,
    d: usize,
    j_steps: usize,
    kept: &[usize],
) -> BlockResult {
    let gamma = cfg.gamma;
    let noise = (2.0 * gamma).sqrt();
    let mut rngs: Vec<ChaCha8Rng> = (start..start + len)
        .map(|i| rng::stream(cfg.seed, Domain::Backward, i as u64))
        .collect();
    let mut y = vec![0.0; len * d];
    for (row, r) in y.chunks_exact_mut(d).zip(rngs.iter_mut()) {
        for v in row {
            *v = r.sample(StandardNormal);
        }
    }
    let mut alive = vec![true; len];
    let mut diverged = Vec::new();
    let mut s = vec![0.0; len * d];
    let mut s_ref = if reference.is_some() {
        vec![0.0; len * d]
    } else {
        Vec::new()
    };
    let mut discrepancy = vec![0.0; if reference.is_some() { len } else { 0 }];
    let mut store = vec![0.0; len * kept.len() * d];
    let mut next_kept = 0;
    let mut buf = vec![0.0; d];

    for j in 0..=j_steps {
        if next_kept < kept.len() && kept[next_kept] == j {
            for i in 0..len {
                let dst = (i * kept.len() + next_kept) * d;
                store[dst..dst + d].copy_from_slice(&y[i * d..(i + 1) * d]);
            }
            next_kept += 1;
        }
        if j == j_steps {
            break;
        }
        let t = cfg.horizon - j as f64 * gamma;
        score.eval_batch(t, &y, &mut s);
        if let Some(r) = reference {
            r.eval_batch(t, &y, &mut s_ref);
            for i in 0..len {
                if alive[i] {
                    let e: f64 = (0..d).map(|k| (s_ref[i * d + k] - s[i * d + k]).powi(2)).sum();
                    discrepancy[i] += gamma * e;
                }
            }
        }
        for i in 0..len {
            if !alive[i] {
                continue;
            }
            let row = &mut y[i * d..(i + 1) * d];
            let mut norm2 = 0.0;
            for k in 0..d {
                let z: f64 = rngs[i].sample(StandardNormal);
                let v = row[k] + gamma * (row[k] + 2.0 * s[i * d + k]) + noise * z;
                buf[k] = v;
                norm2 += v * v;
            }
            let norm = norm2.sqrt();
            if !(norm <= DIVERGENCE_THRESHOLD) {
                alive[i] = false;
                diverged.push(Divergence {
                    trajectory: start + i,
                    step: j + 1,
                    norm,
                });
            } else {
                row.copy_from_slice(&buf);
            }
        }
    }
    // Diverged rows keep their last finite state; stored slots past the
    // divergence repeat it as well.
    BlockResult {
        terminal: y,
        diverged,
        store,
        discrepancy,
    }
}
