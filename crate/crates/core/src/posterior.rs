//! Posterior distribution of the graphon value `W(u, v)` under a fitted SBM.
//!
//! With `alpha ~ Dir(a)` and `pi_ql ~ Beta(eta_ql, zeta_ql)` independent, the
//! value `W(u, v) = pi_{C(u), C(v)}` is a Beta mixture
//!
//! ```text
//! p(w | X, Q) = sum_{q <= l} omega_ql(u, v) b(w; eta_ql, zeta_ql),     u <= v,
//! omega_ql    = F_{q-1,l-1} - F_{q,l-1} - F_{q-1,l} + F_{q,l},
//! F_{q,l}(u, v) = P(sigma_q < u, sigma_l < v)
//! ```
//!
//! where `sigma_q` are the cumulative proportions. Aggregating the Dirichlet
//! into three parts `(sigma_q, sigma_l - sigma_q, 1 - sigma_l)` gives
//! `F_{q,l}(u, v) = G_1(u) - G_{1,3}(u, 1 - v)`. `G_1` is a Beta cdf and the
//! bivariate `G_{1,3}` is computed by conditioning on the first part:
//!
//! ```text
//! G_{1,3}(x, y) = int_0^x b(t; a1, a2 + a3) I_{min(1, y/(1-t))}(a3, a2) dt.
//! ```
//!
//! Boundary conventions: `sigma_0 = 0` and `sigma_Q = 1`. The event
//! `{sigma_0 < u}` is taken as sure for every `u >= 0` (so that `u = 0` falls
//! in the first block, like the binning function) and `{sigma_Q < v}` is
//! impossible for `v <= 1`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::GraphonSpec;
use crate::quadrature::{self, Tolerance};
use crate::special::BetaDist;
use crate::vbem::{FitEnsemble, VariationalPosterior};

/// Absolute tolerance of the bivariate Dirichlet cdf quadrature.
pub const CDF_QUAD_TOL: f64 = 1e-8;
/// Fréchet bound gap under which `G_{1,3}` is taken from the bounds directly.
const BOUND_GAP: f64 = 1e-13;
const NEG_CLAMP: f64 = 1e-10;
const SUM_ERROR: f64 = 1e-4;

/// Dirichlet parameters with their cumulative sums.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    a: Vec<f64>,
    /// `s[q] = a_1 + ... + a_q`, with `s[0] = 0`.
    s: Vec<f64>,
}

impl DirichletParams {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidArgument("Dirichlet parameters must be positive".into()));
        }
        let mut s = Vec::with_capacity(a.len() + 1);
        s.push(0.0);
        for &x in &a {
            s.push(s.last().unwrap() + x);
        }
        Ok(DirichletParams { a, s })
    }

    pub fn q(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// Cumulative sum `s_q`, `q` in `0..=Q`.
    pub fn cumulative(&self, q: usize) -> f64 {
        self.s[q]
    }

    /// Parameters of `(sigma_i, sigma_j - sigma_i, 1 - sigma_j)` for `0 < i < j < Q`.
    fn aggregate(&self, i: usize, j: usize) -> [f64; 3] {
        let total = self.s[self.q()];
        [self.s[i], self.s[j] - self.s[i], total - self.s[j]]
    }

    /// `P(sigma_i < x)`.
    fn marginal(&self, i: usize, x: f64) -> f64 {
        let q = self.q();
        if i == 0 {
            if x >= 0.0 {
                1.0
            } else {
                0.0
            }
        } else if i == q {
            if x > 1.0 {
                1.0
            } else {
                0.0
            }
        } else {
            BetaDist::new(self.s[i], self.s[q] - self.s[i]).cdf(x)
        }
    }
}

fn check_three(a3: &[f64; 3]) -> Result<()> {
    if a3.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("Dirichlet parameters must be positive, got {a3:?}")));
    }
    Ok(())
}

/// `G_1(x) = P(first component < x)` for `Dir(a3)`, i.e. the
/// `Beta(a1, a2 + a3)` cdf.
pub fn dirichlet_cdf_uni(x: f64, a3: [f64; 3]) -> Result<f64> {
    check_three(&a3)?;
    Ok(BetaDist::new(a3[0], a3[1] + a3[2]).cdf(x))
}

/// `G_{1,3}(x, y) = P(first < x, third < y)` for `Dir(a3)`.
pub fn dirichlet_cdf_biv(x: f64, y: f64, a3: [f64; 3]) -> Result<f64> {
    check_three(&a3)?;
    let first = BetaDist::new(a3[0], a3[1] + a3[2]);
    if x <= 0.0 || y <= 0.0 {
        return Ok(0.0);
    }
    let x = x.min(1.0);
    let g1 = first.cdf(x);
    if y >= 1.0 {
        return Ok(g1);
    }
    let g3 = BetaDist::new(a3[2], a3[0] + a3[1]).cdf(y);
    let upper = g1.min(g3);
    let lower = (g1 + g3 - 1.0).max(0.0);
    if upper - lower <= BOUND_GAP {
        return Ok(0.5 * (upper + lower));
    }
    // For t >= 1 - y the conditional probability of the third part is 1.
    let split = 1.0 - y;
    let tail = if x > split { g1 - first.cdf(split) } else { 0.0 };
    let end = x.min(split);
    let inner = BetaDist::new(a3[2], a3[1]);
    let mean = first.mean();
    let sd = first.variance().sqrt();
    let breaks: Vec<f64> = [-8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0]
        .iter()
        .map(|k| mean + k * sd)
        .collect();
    let integrand = |t: f64| {
        let z = y / (1.0 - t);
        first.pdf(t) * if z >= 1.0 { 1.0 } else { inner.cdf(z) }
    };
    let tol = Tolerance { abs: CDF_QUAD_TOL * 0.1, rel: 0.0, max_intervals: 2000 };
    let est = quadrature::integrate(integrand, 0.0, end, &breaks, tol)?;
    Ok((est.value + tail).clamp(lower, upper))
}

/// Joint cdf `F_{i,j}(u, v) = P(sigma_i < u, sigma_j < v)` of two cumulative
/// proportions, for any `i, j` in `0..=Q`.
pub fn joint_sigma_cdf(i: usize, j: usize, u: f64, v: f64, d: &DirichletParams) -> Result<f64> {
    let q = d.q();
    if i > q || j > q {
        return Err(Error::InvalidArgument(format!("index ({i}, {j}) outside 0..={q}")));
    }
    if i > j {
        return joint_sigma_cdf(j, i, v, u, d);
    }
    if i == j {
        return Ok(d.marginal(i, u.min(v)));
    }
    // i < j, hence sigma_i <= sigma_j.
    if v <= u {
        return Ok(d.marginal(j, v));
    }
    if i == 0 {
        return Ok(if u >= 0.0 { d.marginal(j, v) } else { 0.0 });
    }
    if j == q {
        return Ok(if v > 1.0 { d.marginal(i, u) } else { 0.0 });
    }
    let a3 = d.aggregate(i, j);
    let g1 = d.marginal(i, u);
    let g13 = dirichlet_cdf_biv(u, 1.0 - v, a3)?;
    Ok((g1 - g13).max(0.0))
}

/// Posterior probabilities `P(C(u) = q, C(v) = l)` for `q <= l`, at `u <= v`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellWeights {
    q: usize,
    /// Row-major `Q x Q`; entries with `q > l` are zero.
    w: Vec<f64>,
}

impl CellWeights {
    pub fn q(&self) -> usize {
        self.q
    }

    /// Weight of cell `(q, l)`, 0-based.
    pub fn get(&self, q: usize, l: usize) -> f64 {
        self.w[q * self.q + l]
    }

    pub fn sum(&self) -> f64 {
        self.w.iter().sum()
    }

    /// Nonzero cells as `(q, l, weight)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let q = self.q;
        self.w
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(move |(k, &w)| (k / q, k % q, w))
    }
}

fn check_unit(u: f64, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(Error::OutOfRange { u, v });
    }
    Ok(())
}

/// Cell weights from Dirichlet parameters; `(u, v)` is swapped if `u > v`.
pub fn cell_weights_dirichlet(u: f64, v: f64, d: &DirichletParams) -> Result<CellWeights> {
    check_unit(u, v)?;
    let (u, v) = if u <= v { (u, v) } else { (v, u) };
    let q = d.q();
    let dim = q + 1;
    let mut table: Vec<Option<f64>> = vec![None; dim * dim];
    let mut f = |i: usize, j: usize| -> Result<f64> {
        if let Some(x) = table[i * dim + j] {
            return Ok(x);
        }
        let x = joint_sigma_cdf(i, j, u, v, d)?;
        table[i * dim + j] = Some(x);
        Ok(x)
    };
    let mut w = vec![0.0; q * q];
    for a in 1..=q {
        for b in a..=q {
            let raw = f(a - 1, b - 1)? - f(a, b - 1)? - f(a - 1, b)? + f(a, b)?;
            if raw < -NEG_CLAMP {
                return Err(Error::Numerical(format!(
                    "negative cell weight {raw:e} at ({a}, {b}) for (u, v) = ({u}, {v})"
                )));
            }
            w[(a - 1) * q + (b - 1)] = raw.max(0.0);
        }
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > SUM_ERROR {
        return Err(Error::Numerical(format!("cell weights sum to {total} at ({u}, {v})")));
    }
    Ok(CellWeights { q, w })
}

pub fn cell_weights(u: f64, v: f64, post: &VariationalPosterior) -> Result<CellWeights> {
    post.validate_parameters()?;
    cell_weights_dirichlet(u, v, &DirichletParams::new(post.a.clone())?)
}

fn components(post: &VariationalPosterior) -> Vec<BetaDist> {
    let q = post.q;
    (0..q * q)
        .map(|k| BetaDist::new(post.eta[k / q][k % q], post.zeta[k / q][k % q]))
        .collect()
}

/// Mixture density of `W(u, v)` on `w_grid`.
pub fn posterior_pdf(u: f64, v: f64, post: &VariationalPosterior, w_grid: &[f64]) -> Result<Vec<f64>> {
    let cw = cell_weights(u, v, post)?;
    let comps = components(post);
    Ok(w_grid
        .iter()
        .map(|&w| cw.iter().map(|(a, b, p)| p * comps[a * post.q + b].pdf(w)).sum())
        .collect())
}

/// Mixture cdf of `W(u, v)` on `w_grid`.
pub fn posterior_cdf(u: f64, v: f64, post: &VariationalPosterior, w_grid: &[f64]) -> Result<Vec<f64>> {
    let cw = cell_weights(u, v, post)?;
    let comps = components(post);
    Ok(w_grid
        .iter()
        .map(|&w| cw.iter().map(|(a, b, p)| p * comps[a * post.q + b].cdf(w)).sum())
        .collect())
}

/// Posterior mean and standard deviation of `W(u, v)`.
pub fn posterior_moments(u: f64, v: f64, post: &VariationalPosterior) -> Result<(f64, f64)> {
    let cw = cell_weights(u, v, post)?;
    Ok(moments_from_weights(&cw, post))
}

fn moments_from_weights(cw: &CellWeights, post: &VariationalPosterior) -> (f64, f64) {
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (a, b, p) in cw.iter() {
        let (eta, zeta) = (post.eta[a][b], post.zeta[a][b]);
        let s = eta + zeta;
        m1 += p * eta / s;
        m2 += p * eta * (eta + 1.0) / (s * (s + 1.0));
    }
    let m1 = m1.clamp(0.0, 1.0);
    (m1, (m2 - m1 * m1).max(0.0).sqrt().min(1.0))
}

pub fn posterior_mean(u: f64, v: f64, post: &VariationalPosterior) -> Result<f64> {
    posterior_moments(u, v, post).map(|m| m.0)
}

pub fn posterior_sd(u: f64, v: f64, post: &VariationalPosterior) -> Result<f64> {
    posterior_moments(u, v, post).map(|m| m.1)
}

/// Model-averaged density of `W(u, v)`.
pub fn averaged_pdf(u: f64, v: f64, ens: &FitEnsemble, w_grid: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; w_grid.len()];
    for (_, weight, post) in ens.weighted_fits() {
        let pdf = posterior_pdf(u, v, post, w_grid)?;
        for (o, p) in out.iter_mut().zip(pdf) {
            *o += weight * p;
        }
    }
    Ok(out)
}

/// Model-averaged posterior mean of `W(u, v)`.
pub fn averaged_mean(u: f64, v: f64, ens: &FitEnsemble) -> Result<f64> {
    let mut total = 0.0;
    for (_, weight, post) in ens.weighted_fits() {
        total += weight * posterior_mean(u, v, post)?;
    }
    Ok(total.clamp(0.0, 1.0))
}

/// What a grid estimate is computed from.
#[derive(Debug, Clone, Copy)]
pub enum GridSource<'a> {
    Posterior(&'a VariationalPosterior),
    /// Model-averaged mean over all fits with positive weight.
    Averaged(&'a FitEnsemble),
}

/// Posterior mean on the `m x m` midpoint grid `((i - 0.5)/m, (j - 0.5)/m)`,
/// 1-based. The upper triangle is computed and mirrored.
pub fn grid_estimate(source: GridSource<'_>, m: usize) -> Result<GraphonSpec> {
    let (values, _) = grid_moments(source, m, false)?;
    GraphonSpec::grid(m, values)
}

/// Mean grid and, when `with_sd` is set, the posterior standard deviation
/// grid (single posterior only; for averaged sources the mixture sd over
/// models is used).
pub fn grid_moments(source: GridSource<'_>, m: usize, with_sd: bool) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if m < 2 {
        return Err(Error::InvalidArgument("grid size must be at least 2".into()));
    }
    let fits: Vec<(f64, &VariationalPosterior)> = match source {
        GridSource::Posterior(p) => {
            p.validate_parameters()?;
            vec![(1.0, p)]
        }
        GridSource::Averaged(ens) => ens.weighted_fits().map(|(_, w, p)| (w, p)).collect(),
    };
    let dirichlets: Vec<DirichletParams> = fits
        .iter()
        .map(|(_, p)| DirichletParams::new(p.a.clone()))
        .collect::<Result<_>>()?;
    let mid = |i: usize| (i as f64 + 0.5) / m as f64;
    let rows: Vec<Vec<(f64, f64)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            (i..m)
                .map(|j| {
                    let (mut m1, mut m2) = (0.0, 0.0);
                    for ((w, post), d) in fits.iter().zip(&dirichlets) {
                        let cw = cell_weights_dirichlet(mid(i), mid(j), d)?;
                        let (mean, sd) = moments_from_weights(&cw, post);
                        m1 += w * mean;
                        m2 += w * (sd * sd + mean * mean);
                    }
                    let m1 = m1.clamp(0.0, 1.0);
                    Ok((m1, (m2 - m1 * m1).max(0.0).sqrt()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut mean = vec![0.0; m * m];
    let mut sd = vec![0.0; m * m];
    for (i, row) in rows.iter().enumerate() {
        for (k, &(mu, s)) in row.iter().enumerate() {
            let j = i + k;
            mean[i * m + j] = mu;
            mean[j * m + i] = mu;
            sd[i * m + j] = s;
            sd[j * m + i] = s;
        }
    }
    Ok((mean, with_sd.then_some(sd)))
}
