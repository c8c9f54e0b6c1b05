//! Wasserstein-2 distances between empirical measures.
//!
//! * [`w2_1d`]: monotone coupling of the quantile functions (exact in 1-D,
//!   any sample sizes).
//! * [`w2_assignment`]: exact optimal matching of two equal-size point
//!   clouds with squared Euclidean cost, by shortest augmenting paths.
//! * [`w2_gaussian`]: closed form between isotropic Gaussians.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;
use crate::rng::{self, Domain};
use crate::samples::Samples;

/// Largest point cloud accepted by [`w2_assignment`].
pub const ASSIGNMENT_LIMIT: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum W2Method {
    #[serde(rename = "quantile-1d")]
    Quantile1d,
    ExactAssignment,
    GaussianClosedForm,
}

impl std::str::FromStr for W2Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile-1d" | "quantile" => Ok(W2Method::Quantile1d),
            "exact-assignment" | "assignment" => Ok(W2Method::ExactAssignment),
            "gaussian-closed-form" | "gaussian" => Ok(W2Method::GaussianClosedForm),
            _ => Err(Error::input(format!("unknown W2 method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W2Report {
    pub value: f64,
    pub n: usize,
    pub method: W2Method,
    /// Bootstrap standard error, when replicates were requested.
    pub stderr: Option<f64>,
}

fn nonempty(a: &Samples, b: &Samples) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("W2 needs nonempty sample sets"));
    }
    if a.dim() != b.dim() {
        return Err(Error::input(format!(
            "sample dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Exact W2 between one-dimensional empirical measures. Unequal sizes are
/// handled by integrating the squared difference of the two step quantile
/// functions over their merged breakpoints.
pub fn w2_1d(a: &Samples, b: &Samples) -> Result<W2Report> {
    nonempty(a, b)?;
    if a.dim() != 1 {
        return Err(Error::input("quantile W2 needs one-dimensional samples"));
    }
    let value = w2_1d_sorted(&sorted(a.as_slice()), &sorted(b.as_slice()));
    Ok(W2Report {
        value,
        n: a.len().min(b.len()),
        method: W2Method::Quantile1d,
        stderr: None,
    })
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn w2_1d_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        return (s / na as f64).sqrt();
    }
    // Breakpoints i/na and j/nb, compared exactly as i·nb vs j·na.
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0u128;
    let total = (na as u128) * (nb as u128);
    let mut acc = 0.0;
    while i < na && j < nb {
        let ea = (i as u128 + 1) * nb as u128;
        let eb = (j as u128 + 1) * na as u128;
        let next = ea.min(eb);
        let diff = a[i] - b[j];
        acc += diff * diff * (next - prev) as f64;
        prev = next;
        if ea == next {
            i += 1;
        }
        if eb == next {
            j += 1;
        }
    }
    (acc / total as f64).sqrt()
}

/// Exact W2 between two equal-size point clouds.
pub fn w2_assignment(a: &Samples, b: &Samples) -> Result<W2Report> {
    nonempty(a, b)?;
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "assignment W2 needs equal sample counts (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n > ASSIGNMENT_LIMIT {
        return Err(Error::Size {
            n,
            limit: ASSIGNMENT_LIMIT,
        });
    }
    let value = (assignment_cost(a, b) / n as f64).sqrt();
    Ok(W2Report {
        value,
        n,
        method: W2Method::ExactAssignment,
        stderr: None,
    })
}

/// Minimum total squared distance over perfect matchings; `O(n³)`
/// shortest augmenting paths with row/column potentials.
fn assignment_cost(a: &Samples, b: &Samples) -> f64 {
    let n = a.len();
    let mut c = vec![0.0; n * n];
    for (i, row) in c.chunks_exact_mut(n).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = numeric::dist2(a.row(i), b.row(j));
        }
    }
    let cost = |i: usize, j: usize| c[i * n + j];
    // 1-based arrays; p[j] is the row matched to column j.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut free: Vec<usize> = Vec::with_capacity(n);
    let mut used: Vec<usize> = Vec::with_capacity(n + 1);
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        free.clear();
        free.extend(1..=n);
        used.clear();
        used.push(0);
        loop {
            let i0 = p[j0];
            let crow = &c[(i0 - 1) * n..i0 * n];
            let ui = u[i0];
            let mut delta = f64::INFINITY;
            let mut best = 0;
            for (k, &j) in free.iter().enumerate() {
                let cur = crow[j - 1] - ui - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    best = k;
                }
            }
            for &j in &used {
                u[p[j]] += delta;
                v[j] -= delta;
            }
            for &j in &free {
                minv[j] -= delta;
            }
            j0 = free.swap_remove(best);
            used.push(j0);
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost(p[j] - 1, j - 1)).sum()
}

/// `sqrt(|m1 - m2|² + d (s1 - s2)²)` for `N(m1, s1² I)` and `N(m2, s2² I)`.
pub fn w2_gaussian(m1: &[f64], s1: f64, m2: &[f64], s2: f64) -> Result<f64> {
    if m1.len() != m2.len() || m1.is_empty() {
        return Err(Error::input("Gaussian means must have the same positive dimension"));
    }
    if !(s1 >= 0.0) || !(s2 >= 0.0) {
        return Err(Error::input("standard deviations must be nonnegative"));
    }
    let d = m1.len() as f64;
    Ok((numeric::dist2(m1, m2) + d * (s1 - s2).powi(2)).sqrt())
}

/// W2 by the requested method; `GaussianClosedForm` fits isotropic
/// Gaussians to both sets by moments.
pub fn w2(a: &Samples, b: &Samples, method: W2Method) -> Result<W2Report> {
    match method {
        W2Method::Quantile1d => w2_1d(a, b),
        W2Method::ExactAssignment => w2_assignment(a, b),
        W2Method::GaussianClosedForm => {
            nonempty(a, b)?;
            let (ma, sa) = isotropic_fit(a);
            let (mb, sb) = isotropic_fit(b);
            Ok(W2Report {
                value: w2_gaussian(&ma, sa, &mb, sb)?,
                n: a.len().min(b.len()),
                method,
                stderr: None,
            })
        }
    }
}

fn isotropic_fit(s: &Samples) -> (Vec<f64>, f64) {
    let m = s.mean();
    let var = s.variance().iter().sum::<f64>() / s.dim() as f64;
    (m, var.sqrt())
}

/// `w2` plus a bootstrap standard error from `reps` resamples (with
/// replacement, both sets independently).
pub fn w2_bootstrap(a: &Samples, b: &Samples, method: W2Method, reps: usize, seed: u64) -> Result<W2Report> {
    let mut report = w2(a, b, method)?;
    if reps < 2 {
        return Ok(report);
    }
    let values: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, Domain::Bootstrap, r as u64);
            let ra = resample(a, &mut rng);
            let rb = resample(b, &mut rng);
            w2(&ra, &rb, method).map(|w| w.value)
        })
        .collect::<Result<_>>()?;
    let mean = values.iter().sum::<f64>() / reps as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    report.stderr = Some(var.sqrt());
    Ok(report)
}

fn resample<R: Rng>(s: &Samples, rng: &mut R) -> Samples {
    let n = s.len();
    let d = s.dim();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        data.extend_from_slice(s.row(rng.gen_range(0..n)));
    }
    Samples::new(d, data).expect("resample keeps the dimension")
}
