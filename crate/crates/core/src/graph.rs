//! Undirected simple graphs, graphon functions and W-graph samplers.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Undirected simple graph on nodes `0..n`.
///
/// Edges are kept as a sorted list of pairs `(i, j)` with `i < j`, next to
/// sorted per-node adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
    names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    n: usize,
    edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
}

impl Graph {
    /// Builds a graph; duplicate pairs (in either orientation) are collapsed.
    /// Self-loops and out-of-range endpoints are errors.
    pub fn new<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut list = Vec::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!("edge ({i}, {j}) outside 0..{n}")));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop on node {i}")));
            }
            list.push((i.min(j), i.max(j)));
        }
        list.sort_unstable();
        list.dedup();
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in &list {
            adj[i].push(j);
            adj[j].push(i);
        }
        for row in &mut adj {
            row.sort_unstable();
        }
        Ok(Graph { n, edges: list, adj, names: None })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n {
            return Err(Error::InvalidGraph(format!(
                "{} names for {} nodes",
                names.len(),
                self.n
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.adj[i].binary_search(&j).is_ok()
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn pair_count(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }

    /// Fraction of node pairs that are connected.
    pub fn density(&self) -> f64 {
        match self.pair_count() {
            0 => 0.0,
            p => self.edges.len() as f64 / p as f64,
        }
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(Error::InvalidArgument("permutation length mismatch".into()));
        }
        let mut seen = vec![false; self.n];
        for &p in perm {
            if p >= self.n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
        }
        Graph::new(self.n, self.edges.iter().map(|&(i, j)| (perm[i], perm[j])))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(GraphJson {
            n: self.n,
            edges: self.edges.clone(),
            names: self.names.clone(),
        })
        .expect("graph serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Graph> {
        let raw: GraphJson = serde_json::from_value(value)?;
        let g = Graph::new(raw.n, raw.edges)?;
        match raw.names {
            Some(names) => g.with_names(names),
            None => Ok(g),
        }
    }
}

/// Latent variables drawn alongside a sampled graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LatentDraw {
    /// W-graph positions `U_i` in `[0, 1]`.
    Uniform(Vec<f64>),
    /// SBM class labels, 0-based (`0..Q`).
    Labels(Vec<usize>),
}

impl LatentDraw {
    pub fn len(&self) -> usize {
        match self {
            LatentDraw::Uniform(u) => u.len(),
            LatentDraw::Labels(z) => z.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An evaluable graphon `W: [0,1]^2 -> [0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphonSpec {
    /// `W(u, v) = g(u) g(v)` with `g(u) = sqrt(rho) * lambda * u^(lambda - 1)`.
    ProductForm { rho: f64, lambda: f64 },
    /// Blockwise constant `W(u, v) = pi[C(u)][C(v)]` with block widths `alpha`.
    Blockwise { alpha: Vec<f64>, pi: Vec<Vec<f64>> },
    /// Cell values on an `m x m` midpoint grid, row-major.
    Grid { m: usize, values: Vec<f64> },
}

const SYMMETRY_TOL: f64 = 1e-12;

impl GraphonSpec {
    pub fn product_form(rho: f64, lambda: f64) -> Result<Self> {
        let spec = GraphonSpec::ProductForm { rho, lambda };
        spec.validate()?;
        Ok(spec)
    }

    pub fn blockwise(alpha: Vec<f64>, pi: Vec<Vec<f64>>) -> Result<Self> {
        let spec = GraphonSpec::Blockwise { alpha, pi };
        spec.validate()?;
        Ok(spec)
    }

    pub fn grid(m: usize, values: Vec<f64>) -> Result<Self> {
        let spec = GraphonSpec::Grid { m, values };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GraphonSpec::ProductForm { rho, lambda } => {
                if !(*rho > 0.0 && *rho <= 1.0) {
                    return Err(Error::InvalidGraphon(format!("rho = {rho} not in (0, 1]")));
                }
                if !(*lambda >= 1.0) || !lambda.is_finite() {
                    return Err(Error::InvalidGraphon(format!("lambda = {lambda} must be >= 1")));
                }
                if rho * lambda * lambda > 1.0 + 1e-12 {
                    return Err(Error::InvalidGraphon(format!(
                        "max W = rho * lambda^2 = {} exceeds 1 (need lambda <= 1/sqrt(rho))",
                        rho * lambda * lambda
                    )));
                }
                Ok(())
            }
            GraphonSpec::Blockwise { alpha, pi } => validate_blocks(alpha, pi),
            GraphonSpec::Grid { m, values } => {
                if *m == 0 || values.len() != m * m {
                    return Err(Error::InvalidGraphon(format!(
                        "grid of size {m} needs {} values, got {}",
                        m * m,
                        values.len()
                    )));
                }
                if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::InvalidGraphon(format!("grid value {bad} outside [0, 1]")));
                }
                for i in 0..*m {
                    for j in (i + 1)..*m {
                        if (values[i * m + j] - values[j * m + i]).abs() > SYMMETRY_TOL {
                            return Err(Error::InvalidGraphon(format!("grid not symmetric at ({i}, {j})")));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Evaluates `W(u, v)`. The result is exactly symmetric in `(u, v)`.
    pub fn eval(&self, u: f64, v: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange { u, v });
        }
        self.validate()?;
        Ok(self.eval_unchecked(u, v))
    }

    /// `W(u, v)` without validation; inputs must lie in `[0, 1]` and the spec must be valid.
    pub(crate) fn eval_unchecked(&self, u: f64, v: f64) -> f64 {
        match self {
            GraphonSpec::ProductForm { rho, lambda } => {
                let g = |x: f64| rho.sqrt() * lambda * x.powf(lambda - 1.0);
                (g(u) * g(v)).min(1.0)
            }
            GraphonSpec::Blockwise { alpha, pi } => {
                let (q, l) = (bin(alpha, u), bin(alpha, v));
                pi[q.min(l)][q.max(l)]
            }
            GraphonSpec::Grid { m, values } => {
                let cell = |x: f64| ((x * *m as f64) as usize).min(m - 1);
                let (i, j) = (cell(u), cell(v));
                values[i.min(j) * m + i.max(j)]
            }
        }
    }

    /// Number of midpoint cells per axis when this is a grid.
    pub fn grid_size(&self) -> Option<usize> {
        match self {
            GraphonSpec::Grid { m, .. } => Some(*m),
            _ => None,
        }
    }
}

fn validate_blocks(alpha: &[f64], pi: &[Vec<f64>]) -> Result<()> {
    let q = alpha.len();
    if q == 0 {
        return Err(Error::InvalidGraphon("empty proportion vector".into()));
    }
    if alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
        return Err(Error::InvalidGraphon("proportions must be positive".into()));
    }
    let total: f64 = alpha.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidGraphon(format!("proportions sum to {total}, not 1")));
    }
    if pi.len() != q || pi.iter().any(|row| row.len() != q) {
        return Err(Error::InvalidGraphon(format!("connectivity matrix must be {q}x{q}")));
    }
    for i in 0..q {
        for j in 0..q {
            let p = pi[i][j];
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidGraphon(format!("pi[{i}][{j}] = {p} outside [0, 1]")));
            }
            if (p - pi[j][i]).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidGraphon(format!("pi not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Binning function: 0-based index of the block `[sigma_{q-1}, sigma_q)`
/// containing `u`, with `u = 1` mapped to the last block.
pub fn bin(alpha: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut q = 0;
    for &a in &alpha[..alpha.len() - 1] {
        cum += a;
        if cum <= u {
            q += 1;
        } else {
            break;
        }
    }
    q
}

/// Samples a W-graph: `U_i ~ U[0,1]` i.i.d., then each pair `i < j` (in
/// lexicographic order) is connected with probability `W(U_i, U_j)`.
pub fn sample_wgraph(spec: &GraphonSpec, n: usize, seed: u64) -> Result<(Graph, LatentDraw)> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    spec.validate()?;
    let mut rng = seed::rng(seed);
    let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = spec.eval_unchecked(u[i], u[j]);
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Ok((Graph::new(n, edges)?, LatentDraw::Uniform(u)))
}

/// Samples an SBM. Labels are obtained by binning uniform positions with the
/// cumulative proportions, so this consumes the random stream exactly like
/// [`sample_wgraph`] on the equivalent blockwise graphon and yields the same
/// graph for the same seed.
pub fn sample_sbm(alpha: &[f64], pi: &[Vec<f64>], n: usize, seed: u64) -> Result<(Graph, LatentDraw)> {
    let spec = GraphonSpec::blockwise(alpha.to_vec(), pi.to_vec())?;
    let (graph, latent) = sample_wgraph(&spec, n, seed)?;
    let labels = match latent {
        LatentDraw::Uniform(u) => u.iter().map(|&x| bin(alpha, x)).collect(),
        LatentDraw::Labels(z) => z,
    };
    Ok((graph, LatentDraw::Labels(labels)))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeListStats {
    pub lines: usize,
    pub self_loops_dropped: usize,
    pub duplicates_collapsed: usize,
}

/// Parses an edge list: one edge per line, two node identifiers separated by
/// whitespace and/or a comma. Blank lines and lines starting with `#` are
/// skipped. Identifiers get dense indices in order of first appearance.
pub fn parse_edge_list<R: BufRead>(reader: R, path: &Path) -> Result<(Graph, EdgeListStats)> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    let mut pairs = Vec::new();
    let mut stats = EdgeListStats::default();
    let mut intern = |name: &str, names: &mut Vec<String>| -> usize {
        if let Some(&i) = index.get(name) {
            return i;
        }
        let i = names.len();
        index.insert(name.to_string(), i);
        names.push(name.to_string());
        i
    };
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.len() != 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected two node identifiers, found {}", tokens.len()),
            });
        }
        stats.lines += 1;
        let a = intern(tokens[0], &mut names);
        let b = intern(tokens[1], &mut names);
        if a == b {
            stats.self_loops_dropped += 1;
            continue;
        }
        pairs.push((a.min(b), a.max(b)));
    }
    if stats.lines == 0 {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    let before = pairs.len();
    let graph = Graph::new(names.len(), pairs)?.with_names(names)?;
    stats.duplicates_collapsed = before - graph.edge_count();
    Ok((graph, stats))
}

pub fn read_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (graph, stats) = parse_edge_list(BufReader::new(file), path)?;
    if stats.self_loops_dropped > 0 {
        log::warn!("{}: dropped {} self-loop(s)", path.display(), stats.self_loops_dropped);
    }
    if stats.duplicates_collapsed > 0 {
        log::info!("{}: collapsed {} duplicate edge(s)", path.display(), stats.duplicates_collapsed);
    }
    Ok(graph)
}

/// Writes one `a b` line per edge, using node names when present.
pub fn write_edge_list(graph: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let label = |i: usize| match graph.names() {
        Some(names) => names[i].clone(),
        None => i.to_string(),
    };
    for &(i, j) in graph.edges() {
        writeln!(out, "{} {}", label(i), label(j)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
