//! Motif occurrence probabilities.
//!
//! A motif is a `k x k` symmetric 0/1 matrix `m`. An occurrence at the
//! ordered position `(i_1, ..., i_k)` of distinct nodes requires every edge
//! prescribed by `m` to be present (other pairs are unconstrained), and
//! `mu(m)` is the probability of that event.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphonSpec};
use crate::quadrature::{self, Tolerance};
use crate::seed;
use crate::special::{ln_rising_ratio, KahanSum};
use crate::vbem::{FitEnsemble, VariationalPosterior};

/// Upper bound on `Q^k` for the labeling sums.
pub const LABELING_LIMIT: usize = 1_000_000;
const MAX_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotifSpec {
    name: String,
    k: usize,
    m: Vec<Vec<u8>>,
}

impl MotifSpec {
    pub fn new(name: impl Into<String>, m: Vec<Vec<u8>>) -> Result<Self> {
        let k = m.len();
        if !(2..=MAX_K).contains(&k) {
            return Err(Error::InvalidMotif(format!("size {k} not in 2..={MAX_K}")));
        }
        if m.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidMotif("matrix is not square".into()));
        }
        for a in 0..k {
            if m[a][a] != 0 {
                return Err(Error::InvalidMotif("nonzero diagonal".into()));
            }
            for b in 0..k {
                if m[a][b] > 1 || m[a][b] != m[b][a] {
                    return Err(Error::InvalidMotif("matrix must be symmetric 0/1".into()));
                }
            }
        }
        let spec = MotifSpec { name: name.into(), k, m };
        if spec.edge_count() == 0 {
            return Err(Error::InvalidMotif("motif has no edge".into()));
        }
        Ok(spec)
    }

    /// Parses `"0110,1010,1101,0010"`-style row strings.
    pub fn from_rows(rows: &str) -> Result<Self> {
        let m = rows
            .split(',')
            .map(|r| {
                r.trim()
                    .chars()
                    .map(|c| match c {
                        '0' => Ok(0),
                        '1' => Ok(1),
                        other => Err(Error::InvalidMotif(format!("unexpected character {other:?}"))),
                    })
                    .collect::<Result<Vec<u8>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        MotifSpec::new(rows.trim(), m)
    }

    /// Builtin name or inline row string.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if let Some(m) = builtin_motifs().into_iter().find(|m| m.name == text) {
            return Ok(m);
        }
        if text.chars().all(|c| c == '0' || c == '1' || c == ',') {
            return MotifSpec::from_rows(text);
        }
        Err(Error::InvalidMotif(format!("unknown motif {text:?}")))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn matrix(&self) -> &[Vec<u8>] {
        &self.m
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.m[a][b] == 1
    }

    /// Vertex degrees `m_{a+}`.
    pub fn degrees(&self) -> Vec<usize> {
        self.m.iter().map(|r| r.iter().map(|&x| x as usize).sum()).collect()
    }

    /// Edges `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.k {
            for b in (a + 1)..self.k {
                if self.m[a][b] == 1 {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    /// Conjugates the matrix: vertex `a` becomes `perm[a]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.k {
            return Err(Error::InvalidArgument("permutation length mismatch".into()));
        }
        let mut m = vec![vec![0u8; self.k]; self.k];
        for a in 0..self.k {
            for b in 0..self.k {
                m[perm[a]][perm[b]] = self.m[a][b];
            }
        }
        MotifSpec::new(self.name.clone(), m)
    }

    /// Copy with one more edge.
    pub fn with_edge(&self, a: usize, b: usize) -> Result<Self> {
        let mut m = self.m.clone();
        m[a][b] = 1;
        m[b][a] = 1;
        MotifSpec::new(format!("{}+{a}{b}", self.name), m)
    }

    fn rows_string(&self) -> String {
        self.m
            .iter()
            .map(|r| r.iter().map(|x| x.to_string()).collect::<String>())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for MotifSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]", self.name, self.rows_string())
    }
}

fn from_edges(name: &str, k: usize, edges: &[(usize, usize)]) -> MotifSpec {
    let mut m = vec![vec![0u8; k]; k];
    for &(a, b) in edges {
        m[a][b] = 1;
        m[b][a] = 1;
    }
    MotifSpec::new(name, m).expect("builtin motif is valid")
}

/// Edge, 3-node path, triangle, 4-node star (center first) and 4-cycle.
pub fn builtin_motifs() -> Vec<MotifSpec> {
    vec![
        from_edges("edge", 2, &[(0, 1)]),
        from_edges("path3", 3, &[(0, 1), (1, 2)]),
        from_edges("triangle", 3, &[(0, 1), (0, 2), (1, 2)]),
        from_edges("star4", 4, &[(0, 1), (0, 2), (0, 3)]),
        from_edges("square", 4, &[(0, 1), (1, 2), (2, 3), (0, 3)]),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactSbm,
    PosteriorMean,
    ProductClosedForm,
    Numeric,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MotifProbability {
    pub value: f64,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
}

/// Monte-Carlo style estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrequencyMode {
    /// Every ordered tuple of distinct nodes.
    Exhaustive,
    /// `samples` uniformly drawn ordered tuples of distinct nodes.
    Sampled { samples: u64, seed: u64 },
}

/// Order in which motif vertices are assigned, each vertex after (if
/// possible) one of its motif neighbours, with that anchor.
fn assignment_order(motif: &MotifSpec) -> Vec<(usize, Option<usize>)> {
    let k = motif.k;
    let deg = motif.degrees();
    let mut placed = vec![false; k];
    let mut order = Vec::with_capacity(k);
    while order.len() < k {
        let next = (0..k)
            .filter(|&a| !placed[a])
            .max_by_key(|&a| {
                let links = (0..k).filter(|&b| placed[b] && motif.has_edge(a, b)).count();
                (links, deg[a], std::cmp::Reverse(a))
            })
            .unwrap();
        let anchor = (0..k).find(|&b| placed[b] && motif.has_edge(next, b));
        placed[next] = true;
        order.push((next, anchor));
    }
    order
}

/// Empirical occurrence frequency: the fraction of ordered tuples of
/// distinct nodes realizing every edge of the motif.
pub fn empirical_frequency(graph: &Graph, motif: &MotifSpec, mode: FrequencyMode) -> Result<Estimate> {
    let (n, k) = (graph.n(), motif.k);
    if k > n {
        return Err(Error::InvalidArgument(format!("motif size {k} exceeds node count {n}")));
    }
    match mode {
        FrequencyMode::Exhaustive => {
            let order = assignment_order(motif);
            let mut tuple = vec![usize::MAX; k];
            let hits = count_embeddings(graph, motif, &order, 0, &mut tuple);
            let total: f64 = (0..k).map(|t| (n - t) as f64).product();
            Ok(Estimate { value: hits as f64 / total, se: 0.0, samples: total as u64 })
        }
        FrequencyMode::Sampled { samples, seed } => {
            if samples == 0 {
                return Err(Error::InvalidArgument("at least one sample is required".into()));
            }
            let mut rng = seed::rng(seed);
            let edges = motif.edges();
            let mut hits = 0u64;
            let mut tuple = vec![0usize; k];
            for _ in 0..samples {
                // Partial Fisher-Yates over 0..n without materializing it.
                for t in 0..k {
                    loop {
                        let c = rng.random_range(0..n);
                        if !tuple[..t].contains(&c) {
                            tuple[t] = c;
                            break;
                        }
                    }
                }
                if edges.iter().all(|&(a, b)| graph.has_edge(tuple[a], tuple[b])) {
                    hits += 1;
                }
            }
            let p = hits as f64 / samples as f64;
            Ok(Estimate { value: p, se: (p * (1.0 - p) / samples as f64).sqrt(), samples })
        }
    }
}

fn count_embeddings(
    graph: &Graph,
    motif: &MotifSpec,
    order: &[(usize, Option<usize>)],
    depth: usize,
    tuple: &mut [usize],
) -> u64 {
    if depth == order.len() {
        return 1;
    }
    let (vertex, anchor) = order[depth];
    let fits = |c: usize, tuple: &[usize]| -> bool {
        order[..depth].iter().all(|&(w, _)| {
            tuple[w] != c && (!motif.has_edge(vertex, w) || graph.has_edge(c, tuple[w]))
        })
    };
    let mut total = 0;
    match anchor {
        Some(a) => {
            let candidates = graph.neighbors(tuple[a]).to_vec();
            for c in candidates {
                if fits(c, tuple) {
                    tuple[vertex] = c;
                    total += count_embeddings(graph, motif, order, depth + 1, tuple);
                }
            }
        }
        None => {
            for c in 0..graph.n() {
                if fits(c, tuple) {
                    tuple[vertex] = c;
                    total += count_embeddings(graph, motif, order, depth + 1, tuple);
                }
            }
        }
    }
    tuple[vertex] = usize::MAX;
    total
}

fn guard(q: usize, k: usize) -> Result<()> {
    let size = (q as f64).powi(k as i32);
    if size > LABELING_LIMIT as f64 {
        return Err(Error::LabelingGuard { q, k, limit: LABELING_LIMIT });
    }
    Ok(())
}

/// Calls `f` with every labeling in `{0..q}^k` (mixed-radix counter).
fn for_each_labeling(q: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut c = vec![0usize; k];
    loop {
        f(&c);
        let mut pos = 0;
        loop {
            if pos == k {
                return;
            }
            c[pos] += 1;
            if c[pos] < q {
                break;
            }
            c[pos] = 0;
            pos += 1;
        }
    }
}

/// Exact occurrence probability under an SBM:
/// `sum_c prod_a alpha_{c_a} prod_{a<b} pi_{c_a c_b}^{m_ab}`.
pub fn mu_sbm(alpha: &[f64], pi: &[Vec<f64>], motif: &MotifSpec) -> Result<f64> {
    GraphonSpec::blockwise(alpha.to_vec(), pi.to_vec())?;
    let q = alpha.len();
    guard(q, motif.k)?;
    let edges = motif.edges();
    let mut acc = KahanSum::default();
    for_each_labeling(q, motif.k, |c| {
        let mut term: f64 = c.iter().map(|&l| alpha[l]).product();
        for &(a, b) in &edges {
            term *= pi[c[a]][c[b]];
        }
        acc.add(term);
    });
    Ok(acc.value().clamp(0.0, 1.0))
}

/// `xi_h = int_0^1 g(z)^h dz` for `g(z) = sqrt(rho) lambda z^(lambda - 1)`.
pub fn xi_product_form(rho: f64, lambda: f64, h: usize) -> f64 {
    let h = h as f64;
    (rho.sqrt() * lambda).powf(h) / (h * lambda - h + 1.0)
}

/// Closed-form occurrence probability for the product-form graphon:
/// `prod_a xi_{m_{a+}}`.
pub fn mu_product_form(rho: f64, lambda: f64, motif: &MotifSpec) -> Result<f64> {
    GraphonSpec::product_form(rho, lambda)?;
    Ok(motif
        .degrees()
        .into_iter()
        .map(|h| xi_product_form(rho, lambda, h))
        .product())
}

/// Occurrence probability for `W(u, v) = g(u) g(v)` with an arbitrary `g`,
/// with `xi_h` obtained by adaptive quadrature.
pub fn mu_product_generic<G: Fn(f64) -> f64>(g: G, motif: &MotifSpec) -> Result<f64> {
    let mut total = 1.0;
    for h in motif.degrees() {
        if h == 0 {
            continue;
        }
        let xi = quadrature::integrate(|z| g(z).powi(h as i32), 0.0, 1.0, &[], Tolerance::default())?;
        total *= xi.value;
    }
    Ok(total)
}

/// Monte-Carlo estimate of `int prod_{a<b} W(u_a, u_b)^{m_ab} du` with `draws` samples.
pub fn mu_numeric(spec: &GraphonSpec, motif: &MotifSpec, draws: u64, seed: u64) -> Result<Estimate> {
    spec.validate()?;
    if draws < 2 {
        return Err(Error::InvalidArgument("at least two draws are required".into()));
    }
    let mut rng = seed::rng(seed);
    let edges = motif.edges();
    let mut u = vec![0.0; motif.k];
    let (mut s1, mut s2) = (KahanSum::default(), KahanSum::default());
    for _ in 0..draws {
        u.iter_mut().for_each(|x| *x = rng.random::<f64>());
        let y: f64 = edges.iter().map(|&(a, b)| spec.eval_unchecked(u[a], u[b])).product();
        s1.add(y);
        s2.add(y * y);
    }
    let nd = draws as f64;
    let mean = s1.value() / nd;
    let var = ((s2.value() - nd * mean * mean) / (nd - 1.0)).max(0.0);
    Ok(Estimate { value: mean, se: (var / nd).sqrt(), samples: draws })
}

// ln(x (x+1) ... (x+count-1))
fn ln_rising(x: f64, count: usize) -> f64 {
    (0..count).map(|t| (x + t as f64).ln()).sum()
}

/// Variational posterior mean of `mu(m)` for one fitted SBM.
///
/// Per labeling `c` of the motif vertices, with `n_q^c` vertices in group
/// `q` and `eta_ql^c` motif edges between groups `q` and `l`:
///
/// ```text
/// E[mu] = sum_c  prod_{q<=l} Gamma(eta+eta^c) Gamma(eta+zeta) / (Gamma(eta) Gamma(eta+eta^c+zeta))
///              * prod_q Gamma(a_q + n_q^c) / Gamma(a_q) * Gamma(A) / Gamma(A + k)
/// ```
///
/// with `A = sum a_q`. The counts are small integers, so every Gamma ratio is
/// a finite rising-factorial ratio evaluated as a sum of logs.
pub fn mu_posterior_mean(post: &VariationalPosterior, motif: &MotifSpec) -> Result<f64> {
    post.validate_parameters()?;
    let (q, k) = (post.q, motif.k);
    guard(q, k)?;
    let edges = motif.edges();
    let e_max = edges.len();
    // edge_term[(q, l)][e]: ln of the Beta factor for e motif edges in block (q, l).
    let mut edge_term = vec![vec![0.0; e_max + 1]; q * q];
    for a in 0..q {
        for b in a..q {
            for e in 0..=e_max {
                edge_term[a * q + b][e] = ln_rising_ratio(post.eta[a][b], post.zeta[a][b], e);
            }
        }
    }
    let mut node_term = vec![vec![0.0; k + 1]; q];
    for (a, row) in node_term.iter_mut().enumerate() {
        for (c, slot) in row.iter_mut().enumerate() {
            *slot = ln_rising(post.a[a], c);
        }
    }
    let a_total: f64 = post.a.iter().sum();
    let ln_total_rising = ln_rising(a_total, k);

    let mut block_counts = vec![0usize; q * q];
    let mut group_counts = vec![0usize; q];
    let mut acc = KahanSum::default();
    let mut failed = false;
    for_each_labeling(q, k, |c| {
        block_counts.iter_mut().for_each(|x| *x = 0);
        group_counts.iter_mut().for_each(|x| *x = 0);
        for &l in c {
            group_counts[l] += 1;
        }
        for &(a, b) in &edges {
            let (x, y) = (c[a].min(c[b]), c[a].max(c[b]));
            block_counts[x * q + y] += 1;
        }
        let mut ln_term = -ln_total_rising;
        for (g, &cnt) in group_counts.iter().enumerate() {
            ln_term += node_term[g][cnt];
        }
        for (blk, &cnt) in block_counts.iter().enumerate() {
            if cnt > 0 {
                ln_term += edge_term[blk][cnt];
            }
        }
        if !ln_term.is_finite() {
            failed = true;
        }
        acc.add(ln_term.exp());
    });
    if failed {
        return Err(Error::Numerical("non-finite log-gamma ratio in motif posterior mean".into()));
    }
    Ok(acc.value().clamp(0.0, 1.0))
}

/// Model-averaged posterior mean of `mu(m)` and the value at the MAP group count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AveragedMotif {
    pub averaged: f64,
    pub map: f64,
    pub map_q: usize,
}

pub fn mu_averaged(ens: &FitEnsemble, motif: &MotifSpec) -> Result<AveragedMotif> {
    let mut averaged = 0.0;
    for (_, w, post) in ens.weighted_fits() {
        averaged += w * mu_posterior_mean(post, motif)?;
    }
    Ok(AveragedMotif {
        averaged: averaged.clamp(0.0, 1.0),
        map: mu_posterior_mean(ens.map_fit(), motif)?,
        map_q: ens.map_q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn motif(name: &str) -> MotifSpec {
        MotifSpec::parse(name).unwrap()
    }

    #[test]
    fn builtin_matrices() {
        assert_eq!(motif("triangle").matrix(), &[vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 0]]);
        assert_eq!(motif("path3").matrix(), &[vec![0, 1, 0], vec![1, 0, 1], vec![0, 1, 0]]);
        assert_eq!(
            motif("star4").matrix(),
            &[vec![0, 1, 1, 1], vec![1, 0, 0, 0], vec![1, 0, 0, 0], vec![1, 0, 0, 0]]
        );
        assert_eq!(
            motif("square").matrix(),
            &[vec![0, 1, 0, 1], vec![1, 0, 1, 0], vec![0, 1, 0, 1], vec![1, 0, 1, 0]]
        );
    }

    #[test]
    fn parse_rows_and_errors() {
        let m = MotifSpec::parse("011,101,110").unwrap();
        assert_eq!(m.matrix(), motif("triangle").matrix());
        assert!(MotifSpec::parse("000,000,000").is_err());
        assert!(MotifSpec::parse("01,00").is_err());
        assert!(MotifSpec::parse("11,11").is_err());
        assert!(MotifSpec::parse("hexagon").is_err());
    }

    #[test]
    fn complete_and_empty_graphs() {
        let k5 = Graph::new(5, (0..5).flat_map(|i| ((i + 1)..5).map(move |j| (i, j)))).unwrap();
        let empty = Graph::new(5, []).unwrap();
        for m in builtin_motifs() {
            assert_eq!(empirical_frequency(&k5, &m, FrequencyMode::Exhaustive).unwrap().value, 1.0);
            assert_eq!(empirical_frequency(&empty, &m, FrequencyMode::Exhaustive).unwrap().value, 0.0);
            let s = empirical_frequency(&k5, &m, FrequencyMode::Sampled { samples: 100, seed: 1 }).unwrap();
            assert_eq!(s.value, 1.0);
        }
        let tiny = Graph::new(2, [(0, 1)]).unwrap();
        assert!(empirical_frequency(&tiny, &motif("triangle"), FrequencyMode::Exhaustive).is_err());
    }

    #[test]
    fn exhaustive_counts_on_small_graph() {
        // Path 0-1-2-3 plus chord 0-2: triangles {0,1,2} -> 6 ordered tuples out of 4*3*2.
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap();
        let t = empirical_frequency(&g, &motif("triangle"), FrequencyMode::Exhaustive).unwrap();
        assert_relative_eq!(t.value, 6.0 / 24.0);
        // Ordered paths a-b-c: sum over centers of d(d-1) = 2 + 2*... degrees (2,2,3,1) -> 2+2+6+0 = 10.
        let p = empirical_frequency(&g, &motif("path3"), FrequencyMode::Exhaustive).unwrap();
        assert_relative_eq!(p.value, 10.0 / 24.0);
    }

    #[test]
    fn sbm_cases() {
        assert_relative_eq!(mu_sbm(&[1.0], &[vec![0.5]], &motif("triangle")).unwrap(), 0.125, epsilon = 1e-15);
        let pi = vec![vec![0.8, 0.2], vec![0.2, 0.8]];
        assert_relative_eq!(mu_sbm(&[0.5, 0.5], &pi, &motif("edge")).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn product_form_cases() {
        assert_relative_eq!(mu_product_form(0.1, 1.0, &motif("triangle")).unwrap(), 1e-3, epsilon = 1e-15);
        assert_relative_eq!(mu_product_form(0.1, 2.0, &motif("edge")).unwrap(), 0.1, epsilon = 1e-15);
        assert!(mu_product_form(0.1, 4.0, &motif("edge")).is_err());
        let (rho, lambda) = (0.05_f64, 2.5_f64);
        let g = |z: f64| rho.sqrt() * lambda * z.powf(lambda - 1.0);
        for m in builtin_motifs() {
            assert_relative_eq!(
                mu_product_generic(g, &m).unwrap(),
                mu_product_form(rho, lambda, &m).unwrap(),
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn numeric_constant_graphon() {
        let spec = GraphonSpec::blockwise(vec![1.0], vec![vec![0.3]]).unwrap();
        let est = mu_numeric(&spec, &motif("square"), 1000, 4).unwrap();
        assert_relative_eq!(est.value, 0.3f64.powi(4), max_relative = 1e-12);
        assert!(est.se < 1e-12);
    }

    #[test]
    fn posterior_mean_single_group_edge() {
        let post = VariationalPosterior::from_parameters(vec![7.0], vec![vec![2.0]], vec![vec![3.0]]).unwrap();
        assert_relative_eq!(mu_posterior_mean(&post, &motif("edge")).unwrap(), 0.4, epsilon = 1e-14);
        // Triangle: E[pi^3] for Beta(2, 3) = 2*3*4 / (5*6*7).
        assert_relative_eq!(
            mu_posterior_mean(&post, &motif("triangle")).unwrap(),
            24.0 / 210.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn labeling_guard() {
        let alpha = vec![0.01; 100];
        let pi = vec![vec![0.1; 100]; 100];
        assert!(matches!(mu_sbm(&alpha, &pi, &motif("square")), Err(Error::LabelingGuard { .. })));
    }

    #[test]
    fn relabeled_motif_is_same_shape() {
        let sq = motif("square");
        let r = sq.relabeled(&[2, 0, 3, 1]).unwrap();
        assert_eq!(r.edge_count(), 4);
        assert!(r.degrees().iter().all(|&d| d == 2));
    }
}
