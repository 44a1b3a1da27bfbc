//! Random graph schemes. Each scheme draws an undirected graph which is then
//! oriented along a uniformly random node permutation.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Dag, SimError};

#[derive(Clone, Debug, PartialEq)]
pub enum GraphScheme {
    ErdosRenyi { edge_prob: f64 },
    /// Barabási–Albert preferential attachment with `m` edges per new node.
    ScaleFree { m: usize },
    /// Ring lattice with `k` neighbours per node, each edge rewired with `rewire`.
    WattsStrogatz { k: usize, rewire: f64 },
    /// Stochastic block model with uniformly assigned block labels.
    StochasticBlock { blocks: usize, p_within: f64, p_between: f64 },
}

impl GraphScheme {
    pub fn name(&self) -> &'static str {
        match self {
            GraphScheme::ErdosRenyi { .. } => "er",
            GraphScheme::ScaleFree { .. } => "sf",
            GraphScheme::WattsStrogatz { .. } => "ws",
            GraphScheme::StochasticBlock { .. } => "sbm",
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let prob = |p: f64, what: &str| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(SimError::InvalidParameter(format!("{what} must lie in [0, 1], got {p}")))
            }
        };
        match *self {
            GraphScheme::ErdosRenyi { edge_prob } => prob(edge_prob, "edge probability"),
            GraphScheme::ScaleFree { m } if m == 0 => {
                Err(SimError::InvalidParameter("scale-free m must be positive".into()))
            }
            GraphScheme::ScaleFree { .. } => Ok(()),
            GraphScheme::WattsStrogatz { k, rewire } => {
                if k == 0 || k % 2 != 0 {
                    return Err(SimError::InvalidParameter(format!("ring degree must be even and positive, got {k}")));
                }
                prob(rewire, "rewire probability")
            }
            GraphScheme::StochasticBlock { blocks, p_within, p_between } => {
                if blocks == 0 {
                    return Err(SimError::InvalidParameter("need at least one block".into()));
                }
                prob(p_within, "within-block probability")?;
                prob(p_between, "between-block probability")
            }
        }
    }
}

impl fmt::Display for GraphScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphScheme::ErdosRenyi { edge_prob } => write!(f, "er(p={edge_prob})"),
            GraphScheme::ScaleFree { m } => write!(f, "sf(m={m})"),
            GraphScheme::WattsStrogatz { k, rewire } => write!(f, "ws(k={k},p={rewire})"),
            GraphScheme::StochasticBlock { blocks, p_within, p_between } => {
                write!(f, "sbm(b={blocks},pin={p_within},pout={p_between})")
            }
        }
    }
}

type Undirected = BTreeSet<(usize, usize)>;

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn erdos_renyi<R: Rng>(d: usize, p: f64, rng: &mut R) -> Undirected {
    let mut edges = Undirected::new();
    for i in 0..d {
        for j in i + 1..d {
            if rng.gen_bool(p) {
                edges.insert((i, j));
            }
        }
    }
    edges
}

fn scale_free<R: Rng>(d: usize, m: usize, rng: &mut R) -> Undirected {
    let mut edges = Undirected::new();
    let mut degree = vec![0usize; d];
    for new in 1..d {
        let mut targets = BTreeSet::new();
        let want = m.min(new);
        while targets.len() < want {
            // degree + 1 so nodes without edges can still be chosen
            let total: usize = (0..new).filter(|t| !targets.contains(t)).map(|t| degree[t] + 1).sum();
            let mut pick = rng.gen_range(0..total);
            for t in (0..new).filter(|t| !targets.contains(t)) {
                let w = degree[t] + 1;
                if pick < w {
                    targets.insert(t);
                    break;
                }
                pick -= w;
            }
        }
        for t in targets {
            edges.insert(key(new, t));
            degree[new] += 1;
            degree[t] += 1;
        }
    }
    edges
}

fn watts_strogatz<R: Rng>(d: usize, k: usize, rewire: f64, rng: &mut R) -> Undirected {
    let mut edges = Undirected::new();
    if d < 2 {
        return edges;
    }
    let half = (k / 2).min((d - 1) / 2).max(1);
    for i in 0..d {
        for off in 1..=half {
            let j = (i + off) % d;
            if i != j {
                edges.insert(key(i, j));
            }
        }
    }
    let lattice: Vec<(usize, usize)> = edges.iter().copied().collect();
    for (a, b) in lattice {
        if !rng.gen_bool(rewire) {
            continue;
        }
        let free: Vec<usize> = (0..d).filter(|&c| c != a && !edges.contains(&key(a, c))).collect();
        if let Some(&c) = free.choose(rng) {
            edges.remove(&(a, b));
            edges.insert(key(a, c));
        }
    }
    edges
}

fn stochastic_block<R: Rng>(d: usize, blocks: usize, p_in: f64, p_out: f64, rng: &mut R) -> Undirected {
    let labels: Vec<usize> = (0..d).map(|_| rng.gen_range(0..blocks)).collect();
    let mut edges = Undirected::new();
    for i in 0..d {
        for j in i + 1..d {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.gen_bool(p) {
                edges.insert((i, j));
            }
        }
    }
    edges
}

/// Draws a DAG over `d` nodes from `scheme`.
pub fn sample_dag<R: Rng>(scheme: &GraphScheme, d: usize, rng: &mut R) -> Result<Dag, SimError> {
    if d == 0 {
        return Err(SimError::InvalidParameter("graph needs at least one node".into()));
    }
    scheme.validate()?;
    let undirected = match *scheme {
        GraphScheme::ErdosRenyi { edge_prob } => erdos_renyi(d, edge_prob, rng),
        GraphScheme::ScaleFree { m } => scale_free(d, m, rng),
        GraphScheme::WattsStrogatz { k, rewire } => watts_strogatz(d, k, rewire, rng),
        GraphScheme::StochasticBlock { blocks, p_within, p_between } => {
            stochastic_block(d, blocks, p_within, p_between, rng)
        }
    };
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(rng);
    let mut rank = vec![0usize; d];
    for (pos, &node) in perm.iter().enumerate() {
        rank[node] = pos;
    }
    let mut parents = vec![false; d * d];
    for (a, b) in undirected {
        let (from, to) = if rank[a] < rank[b] { (a, b) } else { (b, a) };
        parents[to * d + from] = true;
    }
    Dag::from_parent_matrix(d, parents)
}
