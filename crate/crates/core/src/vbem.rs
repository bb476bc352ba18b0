//! Variational Bayes EM for the Bernoulli stochastic block model.
//!
//! Priors are conjugate: `alpha ~ Dir(a0)` and `pi_ql ~ Beta(eta0_ql, zeta0_ql)`
//! for `q <= l`. The variational family factorizes into a Dirichlet for
//! `alpha`, independent Betas for the upper triangle of `pi`, and independent
//! categorical rows `tau_i` for the labels.
//!
//! Updates:
//!
//! ```text
//! E-step (row i):
//!   ln tau_iq = psi(a_q) - psi(sum a)
//!             + sum_l [ nb_il (psi(eta_ql) - psi(zeta_ql)) + rest_il (psi(zeta_ql) - psi(eta_ql + zeta_ql)) ]
//!   nb_il   = sum_{j in N(i)} tau_jl,    rest_il = sum_{j != i} tau_jl
//! M-step:
//!   a_q     = a0_q + sum_i tau_iq
//!   eta_ql  = eta0_ql  + sum_{i<j} (tau_iq tau_jl + tau_il tau_jq) X_ij        (q != l)
//!   eta_qq  = eta0_qq  + sum_{i<j} tau_iq tau_jq X_ij
//!   zeta    = same with (1 - X_ij)
//! ```
//!
//! All rows are updated from the same previous `tau`, so the result does not
//! depend on node order. The full update can overshoot, so the E-step moves
//! along `tau_old -> tau_new` with step `s = 1, 1/2, 1/4, ...` until the
//! lower bound at the current `(a, eta, zeta)` does not decrease. The
//! direction is an ascent direction (its derivative is a symmetrized KL
//! divergence), and the M-step is an exact maximization, so the bound never
//! decreases over iterations.
//!
//! The converged lower bound `J` is used both as the model-selection
//! criterion (sometimes called ILvb) and for the model-averaging weights
//! `p(Q | X) ∝ exp J_Q`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::seed;
use crate::special::{digamma, ln_beta, ln_dirichlet_norm};

const TAU_FLOOR: f64 = 1e-12;

/// Conjugate prior hyperparameters for a `Q`-group SBM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmPrior {
    pub a0: Vec<f64>,
    pub eta0: Vec<Vec<f64>>,
    pub zeta0: Vec<Vec<f64>>,
}

impl SbmPrior {
    /// Uniform Dirichlet and uniform Beta priors.
    pub fn uniform(q: usize) -> Self {
        PriorFamily::default().for_q(q)
    }

    pub fn q(&self) -> usize {
        self.a0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.q();
        if q == 0 {
            return Err(Error::InvalidArgument("prior with zero groups".into()));
        }
        if self.a0.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidArgument("a0 must be positive".into()));
        }
        for (name, m) in [("eta0", &self.eta0), ("zeta0", &self.zeta0)] {
            if m.len() != q || m.iter().any(|r| r.len() != q) {
                return Err(Error::InvalidArgument(format!("{name} must be {q}x{q}")));
            }
            for i in 0..q {
                for j in 0..q {
                    if !(m[i][j] > 0.0) || !m[i][j].is_finite() {
                        return Err(Error::InvalidArgument(format!("{name} must be positive")));
                    }
                    if m[i][j] != m[j][i] {
                        return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Exchangeable prior used for every `Q` of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorFamily {
    pub a0: f64,
    pub eta0: f64,
    pub zeta0: f64,
}

impl Default for PriorFamily {
    fn default() -> Self {
        PriorFamily { a0: 1.0, eta0: 1.0, zeta0: 1.0 }
    }
}

impl PriorFamily {
    pub fn for_q(&self, q: usize) -> SbmPrior {
        SbmPrior {
            a0: vec![self.a0; q],
            eta0: vec![vec![self.eta0; q]; q],
            zeta0: vec![vec![self.zeta0; q]; q],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Relative change of the lower bound below which a run stops.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { max_iter: 500, tol: 1e-6, restarts: 5, seed: 0 }
    }
}

/// Variational posterior of a `Q`-group SBM.
///
/// Matrices are `Q x Q` and symmetric; only `q <= l` entries are free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalPosterior {
    pub q: usize,
    pub a: Vec<f64>,
    pub eta: Vec<Vec<f64>>,
    pub zeta: Vec<Vec<f64>>,
    /// `n x Q` row-stochastic soft labels.
    pub tau: Vec<Vec<f64>>,
    /// Lower bound `J` at the returned parameters.
    pub elbo: f64,
    /// Lower bound after every M-step of the winning run, starting with the initial M-step.
    #[serde(default, skip_serializing)]
    pub elbo_trace: Vec<f64>,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub converged: bool,
}

impl VariationalPosterior {
    /// Posterior mean of the group proportions.
    pub fn alpha_mean(&self) -> Vec<f64> {
        let total: f64 = self.a.iter().sum();
        self.a.iter().map(|x| x / total).collect()
    }

    /// Posterior mean of the connectivity matrix.
    pub fn pi_mean(&self) -> Vec<Vec<f64>> {
        (0..self.q)
            .map(|i| (0..self.q).map(|j| self.eta[i][j] / (self.eta[i][j] + self.zeta[i][j])).collect())
            .collect()
    }

    /// Plug-in expected degrees `d_q = sum_l alpha_l pi_ql`.
    pub fn plug_in_degrees(&self) -> Vec<f64> {
        let alpha = self.alpha_mean();
        let pi = self.pi_mean();
        pi.iter().map(|row| row.iter().zip(&alpha).map(|(p, a)| p * a).sum()).collect()
    }

    /// Posterior without the label matrix.
    pub fn summary(&self) -> PosteriorSummary {
        PosteriorSummary {
            q: self.q,
            a: self.a.clone(),
            eta: self.eta.clone(),
            zeta: self.zeta.clone(),
            elbo: self.elbo,
            iterations: self.iterations,
            converged: self.converged,
        }
    }

    /// Posterior with the given parameters and no label matrix; the lower
    /// bound is left at NaN. Used for posteriors read back from JSON
    /// summaries and for tests.
    pub fn from_parameters(a: Vec<f64>, eta: Vec<Vec<f64>>, zeta: Vec<Vec<f64>>) -> Result<Self> {
        let q = a.len();
        let post = VariationalPosterior {
            q,
            a,
            eta,
            zeta,
            tau: Vec::new(),
            elbo: f64::NAN,
            elbo_trace: Vec::new(),
            iterations: 0,
            converged: false,
        };
        post.validate_parameters()?;
        Ok(post)
    }

    pub(crate) fn validate_parameters(&self) -> Result<()> {
        let q = self.q;
        if q == 0 || self.a.len() != q {
            return Err(Error::InvalidArgument("posterior dimension mismatch".into()));
        }
        if self.a.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidArgument("Dirichlet parameters must be positive".into()));
        }
        for m in [&self.eta, &self.zeta] {
            if m.len() != q || m.iter().any(|r| r.len() != q) {
                return Err(Error::InvalidArgument("Beta parameter matrices must be QxQ".into()));
            }
            for i in 0..q {
                for j in 0..q {
                    if !(m[i][j] > 0.0) || !m[i][j].is_finite() || m[i][j] != m[j][i] {
                        return Err(Error::InvalidArgument(
                            "Beta parameters must be positive and symmetric".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub q: usize,
    pub a: Vec<f64>,
    pub eta: Vec<Vec<f64>>,
    pub zeta: Vec<Vec<f64>>,
    pub elbo: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Sufficient statistics of the soft labels.
struct Stats {
    /// Expected group sizes `N_q`.
    size: Vec<f64>,
    /// Expected edge counts between groups, upper triangle (diagonal counts pairs once).
    edges: Vec<Vec<f64>>,
    /// Expected non-edge counts, same convention.
    non_edges: Vec<Vec<f64>>,
}

fn stats(graph: &Graph, tau: &[Vec<f64>], q: usize) -> Stats {
    let n = graph.n();
    let mut size = vec![0.0; q];
    for row in tau {
        for (s, t) in size.iter_mut().zip(row) {
            *s += t;
        }
    }
    // ordered[q][l] = sum_{i != j} tau_iq X_ij tau_jl
    let mut ordered = vec![vec![0.0; q]; q];
    let mut self_pairs = vec![vec![0.0; q]; q];
    let mut nb = vec![0.0; q];
    for i in 0..n {
        nb.iter_mut().for_each(|x| *x = 0.0);
        for &j in graph.neighbors(i) {
            for (acc, t) in nb.iter_mut().zip(&tau[j]) {
                *acc += t;
            }
        }
        let ti = &tau[i];
        for a in 0..q {
            for b in 0..q {
                ordered[a][b] += ti[a] * nb[b];
                self_pairs[a][b] += ti[a] * ti[b];
            }
        }
    }
    let mut edges = vec![vec![0.0; q]; q];
    let mut non_edges = vec![vec![0.0; q]; q];
    for a in 0..q {
        for b in a..q {
            let pairs = size[a] * size[b] - self_pairs[a][b];
            let (e, p) = if a == b {
                (0.5 * ordered[a][a], 0.5 * pairs)
            } else {
                (0.5 * (ordered[a][b] + ordered[b][a]), pairs)
            };
            let ne = (p - e).max(0.0);
            edges[a][b] = e;
            edges[b][a] = e;
            non_edges[a][b] = ne;
            non_edges[b][a] = ne;
        }
    }
    Stats { size, edges, non_edges }
}

fn m_step(prior: &SbmPrior, st: &Stats) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let q = prior.q();
    let a = (0..q).map(|k| prior.a0[k] + st.size[k]).collect();
    let eta = (0..q)
        .map(|i| (0..q).map(|j| prior.eta0[i][j] + st.edges[i][j]).collect())
        .collect();
    let zeta = (0..q)
        .map(|i| (0..q).map(|j| prior.zeta0[i][j] + st.non_edges[i][j]).collect())
        .collect();
    (a, eta, zeta)
}

/// Entropy `-sum tau ln tau` of the soft labels.
pub fn entropy(tau: &[Vec<f64>]) -> f64 {
    -tau.iter()
        .flatten()
        .filter(|&&t| t > 0.0)
        .map(|&t| t * t.ln())
        .sum::<f64>()
}

fn elbo_from_stats(post: &VariationalPosterior, prior: &SbmPrior, st: &Stats) -> f64 {
    let q = post.q;
    let a_total: f64 = post.a.iter().sum();
    let psi_total = digamma(a_total);
    let mut j = ln_dirichlet_norm(&post.a) - ln_dirichlet_norm(&prior.a0);
    for k in 0..q {
        let resid = prior.a0[k] + st.size[k] - post.a[k];
        if resid != 0.0 {
            j += resid * (digamma(post.a[k]) - psi_total);
        }
    }
    for a in 0..q {
        for b in a..q {
            let (eta, zeta) = (post.eta[a][b], post.zeta[a][b]);
            j += ln_beta(eta, zeta) - ln_beta(prior.eta0[a][b], prior.zeta0[a][b]);
            let r_eta = prior.eta0[a][b] + st.edges[a][b] - eta;
            let r_zeta = prior.zeta0[a][b] + st.non_edges[a][b] - zeta;
            if r_eta != 0.0 || r_zeta != 0.0 {
                let psi_sum = digamma(eta + zeta);
                j += r_eta * (digamma(eta) - psi_sum) + r_zeta * (digamma(zeta) - psi_sum);
            }
        }
    }
    j + entropy(&post.tau)
}

/// Variational lower bound `J` for arbitrary variational parameters.
///
/// When `(a, eta, zeta)` are the M-step optimum for `tau` this reduces to
/// `sum_{q<=l} [ln B(eta, zeta) - ln B(eta0, zeta0)] + ln D(a) - ln D(a0) + H(tau)`
/// with `D` the Dirichlet normalizer; otherwise the residual linear terms are added.
pub fn elbo(graph: &Graph, post: &VariationalPosterior, prior: &SbmPrior) -> Result<f64> {
    post.validate_parameters()?;
    prior.validate()?;
    if prior.q() != post.q {
        return Err(Error::InvalidArgument("prior and posterior group counts differ".into()));
    }
    check_tau(&post.tau, graph.n(), post.q)?;
    let st = stats(graph, &post.tau, post.q);
    Ok(elbo_from_stats(post, prior, &st))
}

fn check_tau(tau: &[Vec<f64>], n: usize, q: usize) -> Result<()> {
    if tau.len() != n || tau.iter().any(|r| r.len() != q) {
        return Err(Error::InvalidArgument(format!("tau must be {n}x{q}")));
    }
    for (i, row) in tau.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if row.iter().any(|&t| !(0.0..=1.0).contains(&t)) || (s - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!("tau row {i} is not a probability vector")));
        }
    }
    Ok(())
}

/// Proposed labels: every row's optimum given the other rows of `tau`.
fn e_step(graph: &Graph, tau: &[Vec<f64>], a: &[f64], eta: &[Vec<f64>], zeta: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let q = a.len();
    let psi_a_total = digamma(a.iter().sum());
    let prior_term: Vec<f64> = a.iter().map(|&x| digamma(x) - psi_a_total).collect();
    let mut d_edge = vec![vec![0.0; q]; q];
    let mut d_pair = vec![vec![0.0; q]; q];
    for i in 0..q {
        for j in 0..q {
            let (pe, pz, ps) = (digamma(eta[i][j]), digamma(zeta[i][j]), digamma(eta[i][j] + zeta[i][j]));
            d_edge[i][j] = pe - pz;
            d_pair[i][j] = pz - ps;
        }
    }
    let mut size = vec![0.0; q];
    for row in tau {
        for (s, t) in size.iter_mut().zip(row) {
            *s += t;
        }
    }
    let mut nb = vec![0.0; q];
    let mut logits = vec![0.0; q];
    let mut out = Vec::with_capacity(tau.len());
    for i in 0..graph.n() {
        nb.iter_mut().for_each(|x| *x = 0.0);
        for &j in graph.neighbors(i) {
            for (acc, t) in nb.iter_mut().zip(&tau[j]) {
                *acc += t;
            }
        }
        for k in 0..q {
            let mut s = prior_term[k];
            for l in 0..q {
                s += nb[l] * d_edge[k][l] + (size[l] - tau[i][l]) * d_pair[k][l];
            }
            logits[k] = s;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let row: Vec<f64> = logits.iter().map(|x| (x - max).exp().max(TAU_FLOOR)).collect();
        let total: f64 = row.iter().sum();
        out.push(row.into_iter().map(|x| x / total).collect());
    }
    out
}

const MAX_HALVINGS: usize = 40;

/// Moves `post.tau` towards the proposal with the largest step in
/// `1, 1/2, 1/4, ...` that does not lower the bound. Returns the statistics
/// of the accepted labels, or `None` if no step was accepted.
fn damped_e_step(graph: &Graph, post: &mut VariationalPosterior, prior: &SbmPrior, current: f64) -> Option<Stats> {
    let proposal = e_step(graph, &post.tau, &post.a, &post.eta, &post.zeta);
    let old = std::mem::take(&mut post.tau);
    let mut step = 1.0;
    for _ in 0..MAX_HALVINGS {
        post.tau = old
            .iter()
            .zip(&proposal)
            .map(|(o, p)| o.iter().zip(p).map(|(x, y)| x + step * (y - x)).collect())
            .collect();
        let st = stats(graph, &post.tau, post.q);
        if elbo_from_stats(post, prior, &st) >= current {
            return Some(st);
        }
        step *= 0.5;
    }
    post.tau = old;
    None
}

/// Runs VBEM from a given initial label matrix. No restarts, no sorting.
pub fn fit_from_tau(
    graph: &Graph,
    tau_init: Vec<Vec<f64>>,
    prior: &SbmPrior,
    config: &FitConfig,
) -> Result<VariationalPosterior> {
    prior.validate()?;
    let q = prior.q();
    check_tau(&tau_init, graph.n(), q)?;
    let mut tau = tau_init;
    let st = stats(graph, &tau, q);
    let (a, eta, zeta) = m_step(prior, &st);
    let mut post = VariationalPosterior {
        q,
        a,
        eta,
        zeta,
        tau: Vec::new(),
        elbo: f64::NAN,
        elbo_trace: Vec::new(),
        iterations: 0,
        converged: false,
    };
    post.tau = std::mem::take(&mut tau);
    let mut current = elbo_from_stats(&post, prior, &st);
    if !current.is_finite() {
        return Err(Error::Numerical(format!("non-finite lower bound at initialization ({current})")));
    }
    post.elbo_trace.push(current);
    if q == 1 {
        // Labels are certain; the first M-step is already the fixed point.
        post.elbo = current;
        post.converged = true;
        return Ok(post);
    }
    for iter in 1..=config.max_iter {
        let Some(st) = damped_e_step(graph, &mut post, prior, current) else {
            // No ascent step left at floating-point resolution.
            post.converged = true;
            break;
        };
        let (a, eta, zeta) = m_step(prior, &st);
        post.a = a;
        post.eta = eta;
        post.zeta = zeta;
        let next = elbo_from_stats(&post, prior, &st);
        if !next.is_finite() {
            return Err(Error::Numerical(format!("non-finite lower bound at iteration {iter}")));
        }
        post.elbo_trace.push(next);
        post.iterations = iter;
        let change = (next - current).abs();
        current = next;
        if change <= config.tol * current.abs() {
            post.converged = true;
            break;
        }
    }
    post.elbo = current;
    Ok(post)
}

/// Fits a `Q`-group SBM, keeping the best of `config.restarts` runs, with
/// groups sorted by increasing plug-in degree.
pub fn fit(graph: &Graph, q: usize, prior: &SbmPrior, config: &FitConfig) -> Result<VariationalPosterior> {
    if q == 0 {
        return Err(Error::InvalidArgument("Q must be at least 1".into()));
    }
    if graph.n() == 0 {
        return Err(Error::InvalidArgument("cannot fit an empty graph".into()));
    }
    if prior.q() != q {
        return Err(Error::InvalidArgument(format!("prior has {} groups, expected {q}", prior.q())));
    }
    let restarts = if q == 1 { 1 } else { config.restarts.max(1) };
    let mut best: Option<VariationalPosterior> = None;
    let mut failures = Vec::new();
    for r in 0..restarts {
        let mut rng = seed::rng(seed::derive(config.seed, &[q as u64, r as u64]));
        let tau = if q == 1 {
            vec![vec![1.0]; graph.n()]
        } else if r % 2 == 0 {
            kmeans_tau(graph, q, &mut rng)
        } else {
            random_tau(graph.n(), q, &mut rng)
        };
        match fit_from_tau(graph, tau, prior, config) {
            Ok(post) => {
                if best.as_ref().is_none_or(|b| post.elbo > b.elbo) {
                    best = Some(post);
                }
            }
            Err(e) => {
                log::warn!("Q={q} restart {r} failed: {e}");
                failures.push(e.to_string());
            }
        }
    }
    best.map(sort_identifiable)
        .ok_or_else(|| Error::AllFitsFailed(format!("Q={q}: {}", failures.join("; "))))
}

fn random_tau(n: usize, q: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            // Dir(1, ..., 1) rows via normalized exponentials.
            let mut row: Vec<f64> = (0..q).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x = (*x / s).max(TAU_FLOOR));
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
            row
        })
        .collect()
}

/// k-means (k-means++ seeding, Lloyd iterations) on adjacency rows, turned
/// into soft labels with 0.9 on the assigned group.
fn kmeans_tau(graph: &Graph, q: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let labels = kmeans_labels(graph, q, rng);
    let off = 0.1 / (q - 1) as f64;
    labels
        .into_iter()
        .map(|l| (0..q).map(|k| if k == l { 0.9 } else { off }).collect())
        .collect()
}

pub(crate) fn kmeans_labels(graph: &Graph, q: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = graph.n();
    // Squared distance from row i to a dense centroid c with squared norm c2.
    let dist = |i: usize, c: &[f64], c2: f64| -> f64 {
        let dot: f64 = graph.neighbors(i).iter().map(|&j| c[j]).sum();
        (graph.degree(i) as f64 - 2.0 * dot + c2).max(0.0)
    };
    let row = |i: usize| -> Vec<f64> {
        let mut c = vec![0.0; n];
        for &j in graph.neighbors(i) {
            c[j] = 1.0;
        }
        c
    };
    let mut centroids: Vec<Vec<f64>> = vec![row(rng.random_range(0..n))];
    let mut norms: Vec<f64> = vec![centroids[0].iter().map(|x| x * x).sum()];
    while centroids.len() < q {
        let d: Vec<f64> = (0..n)
            .map(|i| {
                centroids
                    .iter()
                    .zip(&norms)
                    .map(|(c, &c2)| dist(i, c, c2))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &x) in d.iter().enumerate() {
                if target < x {
                    chosen = i;
                    break;
                }
                target -= x;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick);
        norms.push(c.iter().map(|x| x * x).sum());
        centroids.push(c);
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..25 {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let best = (0..q)
                .map(|k| (k, dist(i, &centroids[k], norms[k])))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .map(|(k, _)| k)
                .unwrap_or(0);
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut counts = vec![0usize; q];
        for c in centroids.iter_mut() {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        for i in 0..n {
            counts[labels[i]] += 1;
            for &j in graph.neighbors(i) {
                centroids[labels[i]][j] += 1.0;
            }
        }
        for k in 0..q {
            if counts[k] == 0 {
                // Re-seed an empty cluster on a random row.
                centroids[k] = row(rng.random_range(0..n));
            } else {
                let c = counts[k] as f64;
                centroids[k].iter_mut().for_each(|x| *x /= c);
            }
            norms[k] = centroids[k].iter().map(|x| x * x).sum();
        }
    }
    labels
}

/// Relabels groups so the plug-in degrees are nondecreasing (stable: ties
/// keep their original order). Leaves `J` unchanged.
pub fn sort_identifiable(post: VariationalPosterior) -> VariationalPosterior {
    let d = post.plug_in_degrees();
    let mut order: Vec<usize> = (0..post.q).collect();
    order.sort_by(|&x, &y| d[x].total_cmp(&d[y]));
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return post;
    }
    permute_groups(post, &order)
}

/// New group `k` is old group `order[k]`.
pub fn permute_groups(post: VariationalPosterior, order: &[usize]) -> VariationalPosterior {
    let pick = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        order.iter().map(|&i| order.iter().map(|&j| m[i][j]).collect()).collect()
    };
    VariationalPosterior {
        q: post.q,
        a: order.iter().map(|&i| post.a[i]).collect(),
        eta: pick(&post.eta),
        zeta: pick(&post.zeta),
        tau: post.tau.iter().map(|row| order.iter().map(|&i| row[i]).collect()).collect(),
        elbo: post.elbo,
        elbo_trace: post.elbo_trace,
        iterations: post.iterations,
        converged: post.converged,
    }
}

/// Fits for `Q = 1..=Q_max` with variational model weights.
#[derive(Debug, Clone)]
pub struct FitEnsemble {
    /// `fits[q - 1]` is the fit with `q` groups, `None` if every restart failed.
    pub fits: Vec<Option<VariationalPosterior>>,
    /// `p(Q | X)`, indexed like `fits`.
    pub weights: Vec<f64>,
    /// Group count with the largest lower bound (1-based).
    pub map_q: usize,
}

#[derive(Serialize)]
struct EnsembleJson<'a> {
    per_q: Vec<PerQJson<'a>>,
    weights: &'a [f64],
    map_q: usize,
}

#[derive(Serialize)]
struct PerQJson<'a> {
    q: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<&'a [Vec<f64>]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    zeta: Option<&'a [Vec<f64>]>,
    elbo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<&'a [Vec<f64>]>,
}

impl FitEnsemble {
    pub fn q_max(&self) -> usize {
        self.fits.len()
    }

    pub fn map_fit(&self) -> &VariationalPosterior {
        self.fits[self.map_q - 1].as_ref().expect("MAP fit exists")
    }

    pub fn elbos(&self) -> Vec<Option<f64>> {
        self.fits.iter().map(|f| f.as_ref().map(|p| p.elbo)).collect()
    }

    /// `(q, weight, fit)` for every successful fit with positive weight.
    pub fn weighted_fits(&self) -> impl Iterator<Item = (usize, f64, &VariationalPosterior)> {
        self.fits
            .iter()
            .zip(&self.weights)
            .enumerate()
            .filter_map(|(i, (f, &w))| f.as_ref().filter(|_| w > 0.0).map(|p| (i + 1, w, p)))
    }

    pub fn to_json(&self, include_tau: bool) -> serde_json::Value {
        let per_q = self
            .fits
            .iter()
            .enumerate()
            .map(|(i, f)| PerQJson {
                q: i + 1,
                a: f.as_ref().map(|p| p.a.as_slice()),
                eta: f.as_ref().map(|p| p.eta.as_slice()),
                zeta: f.as_ref().map(|p| p.zeta.as_slice()),
                elbo: f.as_ref().map(|p| p.elbo),
                tau: f.as_ref().filter(|_| include_tau).map(|p| p.tau.as_slice()),
            })
            .collect();
        serde_json::to_value(EnsembleJson { per_q, weights: &self.weights, map_q: self.map_q })
            .expect("ensemble serializes")
    }

    /// Builds an ensemble from already fitted posteriors.
    pub fn from_fits(fits: Vec<Option<VariationalPosterior>>) -> Result<Self> {
        let elbos: Vec<Option<f64>> = fits.iter().map(|f| f.as_ref().map(|p| p.elbo)).collect();
        let weights = model_weights(&elbos)?;
        let map_q = weights
            .iter()
            .enumerate()
            .zip(&elbos)
            .filter(|(_, e)| e.is_some())
            .max_by(|x, y| x.1.unwrap().total_cmp(&y.1.unwrap()))
            .map(|((i, _), _)| i + 1)
            .expect("at least one fit");
        Ok(FitEnsemble { fits, weights, map_q })
    }
}

/// Normalized `exp(J_Q)` weights via log-sum-exp; missing entries get 0.
pub fn model_weights(elbos: &[Option<f64>]) -> Result<Vec<f64>> {
    let max = elbos
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::AllFitsFailed("no finite lower bound".into()));
    }
    let unnorm: Vec<f64> = elbos.iter().map(|e| e.map_or(0.0, |x| (x - max).exp())).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|w| w / total).collect())
}

/// Fits every `Q` in `1..=q_max` (in parallel) and computes model weights.
pub fn fit_ensemble(graph: &Graph, q_max: usize, prior: &PriorFamily, config: &FitConfig) -> Result<FitEnsemble> {
    if q_max == 0 {
        return Err(Error::InvalidArgument("Q_max must be at least 1".into()));
    }
    let results: Vec<Result<VariationalPosterior>> = (1..=q_max)
        .into_par_iter()
        .map(|q| fit(graph, q, &prior.for_q(q), config))
        .collect();
    let mut failures = Vec::new();
    let fits: Vec<Option<VariationalPosterior>> = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(p) => Some(p),
            Err(e) => {
                log::warn!("Q={} failed and gets weight 0: {e}", i + 1);
                failures.push(e.to_string());
                None
            }
        })
        .collect();
    if fits.iter().all(Option::is_none) {
        return Err(Error::AllFitsFailed(failures.join("; ")));
    }
    FitEnsemble::from_fits(fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{sample_sbm, sample_wgraph, GraphonSpec, LatentDraw};
    use approx::assert_relative_eq;

    #[test]
    fn q1_is_closed_form() {
        let spec = GraphonSpec::product_form(0.1, 1.0).unwrap();
        let (g, _) = sample_wgraph(&spec, 120, 4).unwrap();
        let prior = SbmPrior::uniform(1);
        let post = fit(&g, 1, &prior, &FitConfig::default()).unwrap();
        let edges = g.edge_count() as f64;
        assert_eq!(post.a, vec![1.0 + 120.0]);
        assert_relative_eq!(post.eta[0][0], 1.0 + edges, epsilon = 1e-9);
        assert_relative_eq!(post.zeta[0][0], 1.0 + g.pair_count() as f64 - edges, epsilon = 1e-9);
        assert!(post.tau.iter().all(|r| r == &vec![1.0]));
    }

    #[test]
    fn uniform_tau_on_empty_graph() {
        let g = Graph::new(10, []).unwrap();
        let q = 3;
        let prior = SbmPrior::uniform(q);
        let tau = vec![vec![1.0 / 3.0; q]; 10];
        assert_relative_eq!(entropy(&tau), 10.0 * (3f64).ln(), epsilon = 1e-12);
        let cfg = FitConfig { max_iter: 0, ..FitConfig::default() };
        let post = fit_from_tau(&g, tau, &prior, &cfg).unwrap();
        assert!(post.elbo_trace[0].is_finite());
    }

    #[test]
    fn separates_two_cliques() {
        let pi = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (g, z) = sample_sbm(&[0.5, 0.5], &pi, 40, 17).unwrap();
        let LatentDraw::Labels(z) = z else { panic!() };
        let post = fit(&g, 2, &SbmPrior::uniform(2), &FitConfig::default()).unwrap();
        for (row, &label) in post.tau.iter().zip(&z) {
            let (arg, max) = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            assert!(*max > 0.99);
            // Groups are matched up to relabeling; check consistency with the first node.
            let first_arg = post.tau[0].iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(arg == first_arg, label == z[0]);
        }
    }

    #[test]
    fn elbo_trace_is_monotone() {
        let spec = GraphonSpec::product_form(0.1, 3.0).unwrap();
        let (g, _) = sample_wgraph(&spec, 150, 8).unwrap();
        for q in 2..=4 {
            let post = fit(&g, q, &SbmPrior::uniform(q), &FitConfig::default()).unwrap();
            for w in post.elbo_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "Q={q}: {} -> {}", w[0], w[1]);
            }
            assert_eq!(*post.elbo_trace.last().unwrap(), post.elbo);
        }
    }

    #[test]
    fn posterior_dominates_prior() {
        let spec = GraphonSpec::product_form(0.2, 2.0).unwrap();
        let (g, _) = sample_wgraph(&spec, 60, 1).unwrap();
        let post = fit(&g, 3, &SbmPrior::uniform(3), &FitConfig::default()).unwrap();
        for i in 0..3 {
            assert!(post.a[i] >= 1.0);
            for j in 0..3 {
                assert!(post.eta[i][j] >= 1.0 && post.zeta[i][j] >= 1.0);
                assert_eq!(post.eta[i][j], post.eta[j][i]);
            }
        }
        for row in &post.tau {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn elbo_function_matches_fit_value() {
        let spec = GraphonSpec::product_form(0.1, 2.0).unwrap();
        let (g, _) = sample_wgraph(&spec, 80, 6).unwrap();
        let prior = SbmPrior::uniform(3);
        let post = fit(&g, 3, &prior, &FitConfig::default()).unwrap();
        assert_relative_eq!(elbo(&g, &post, &prior).unwrap(), post.elbo, max_relative = 1e-12);
    }

    #[test]
    fn sorting_swaps_and_is_idempotent() {
        // d = (0.4, 0.1) before sorting.
        let post = VariationalPosterior::from_parameters(
            vec![5.0, 5.0],
            vec![vec![4.0, 4.0], vec![4.0, 1.0]],
            vec![vec![1.0, 6.0], vec![6.0, 9.0]],
        )
        .unwrap();
        let d = post.plug_in_degrees();
        assert_relative_eq!(d[0], 0.5 * 0.8 + 0.5 * 0.4, epsilon = 1e-12);
        assert!(d[0] > d[1]);
        let once = sort_identifiable(post.clone());
        let d1 = once.plug_in_degrees();
        assert!(d1[0] <= d1[1]);
        assert_eq!(once.eta[0][0], 1.0);
        let twice = sort_identifiable(once.clone());
        assert_eq!((&once.a, &once.eta, &once.zeta), (&twice.a, &twice.eta, &twice.zeta));
    }

    #[test]
    fn sorting_single_group_is_identity() {
        let post = VariationalPosterior::from_parameters(vec![3.0], vec![vec![2.0]], vec![vec![5.0]]).unwrap();
        let sorted = sort_identifiable(post.clone());
        assert_eq!((&sorted.a, &sorted.eta, &sorted.zeta), (&post.a, &post.eta, &post.zeta));
    }

    #[test]
    fn softmax_weights() {
        let w = model_weights(&[Some(-100.0), Some(-101.0)]).unwrap();
        assert_relative_eq!(w[0], 1.0 / (1.0 + (-1f64).exp()), epsilon = 1e-12);
        assert_relative_eq!(w[0], 0.731, epsilon = 1e-3);
        assert_relative_eq!(w[1], 0.269, epsilon = 1e-3);
        let w = model_weights(&[Some(-5.0), None, Some(-5.0)]).unwrap();
        assert_eq!(w, vec![0.5, 0.0, 0.5]);
        assert!(model_weights(&[None]).is_err());
    }

    #[test]
    fn single_q_ensemble() {
        let spec = GraphonSpec::product_form(0.1, 1.0).unwrap();
        let (g, _) = sample_wgraph(&spec, 50, 3).unwrap();
        let ens = fit_ensemble(&g, 1, &PriorFamily::default(), &FitConfig::default()).unwrap();
        assert_eq!(ens.weights, vec![1.0]);
        assert_eq!(ens.map_q, 1);
    }

    #[test]
    fn invalid_inputs() {
        let g = Graph::new(5, [(0, 1)]).unwrap();
        assert!(fit(&g, 0, &SbmPrior::uniform(1), &FitConfig::default()).is_err());
        assert!(fit(&g, 2, &SbmPrior::uniform(3), &FitConfig::default()).is_err());
        assert!(fit(&Graph::new(0, []).unwrap(), 1, &SbmPrior::uniform(1), &FitConfig::default()).is_err());
        let bad = vec![vec![0.7, 0.7]; 5];
        assert!(fit_from_tau(&g, bad, &SbmPrior::uniform(2), &FitConfig::default()).is_err());
    }
}
