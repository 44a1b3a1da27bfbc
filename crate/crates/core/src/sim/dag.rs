use std::collections::BTreeSet;

use super::SimError;

/// Directed acyclic graph stored as a parent matrix: `is_parent(i, j)` means
/// there is an edge `j -> i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dag {
    d: usize,
    parents: Vec<bool>,
}

impl Dag {
    /// Validates a row-major parent matrix (row `i` lists the parents of `i`).
    pub fn from_parent_matrix(d: usize, parents: Vec<bool>) -> Result<Self, SimError> {
        if d == 0 {
            return Err(SimError::InvalidParameter("graph needs at least one node".into()));
        }
        if parents.len() != d * d {
            return Err(SimError::InvalidParameter(format!(
                "parent matrix has {} entries, expected {}",
                parents.len(),
                d * d
            )));
        }
        if let Some(i) = (0..d).find(|&i| parents[i * d + i]) {
            return Err(SimError::SelfLoop(i));
        }
        let dag = Self { d, parents };
        dag.topological_order()?;
        Ok(dag)
    }

    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Result<Self, SimError> {
        let mut parents = vec![false; d * d];
        for &(from, to) in edges {
            if from >= d || to >= d {
                return Err(SimError::InvalidNode { node: from.max(to), d });
            }
            parents[to * d + from] = true;
        }
        Self::from_parent_matrix(d, parents)
    }

    pub fn empty(d: usize) -> Self {
        Self { d, parents: vec![false; d * d] }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_parent(&self, child: usize, parent: usize) -> bool {
        self.parents[child * self.d + parent]
    }

    pub fn parents(&self, child: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.d).filter(move |&j| self.is_parent(child, j))
    }

    pub fn children(&self, parent: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.d).filter(move |&i| self.is_parent(i, parent))
    }

    pub fn parent_matrix(&self) -> &[bool] {
        &self.parents
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().filter(|&&p| p).count()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.d {
            for j in self.parents(i) {
                out.push((j, i));
            }
        }
        out
    }

    pub fn is_root(&self, node: usize) -> bool {
        self.parents(node).next().is_none()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.children(node).next().is_none()
    }

    /// Kahn's algorithm, taking the lowest-index ready node first.
    pub fn topological_order(&self) -> Result<Vec<usize>, SimError> {
        let d = self.d;
        let mut indegree: Vec<usize> = (0..d).map(|i| self.parents(i).count()).collect();
        let mut ready: BTreeSet<usize> = (0..d).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(d);
        while let Some(node) = ready.pop_first() {
            order.push(node);
            for child in self.children(node) {
                indegree[child] -= 1;
                if indegree[child] == 0 {
                    ready.insert(child);
                }
            }
        }
        if order.len() != d {
            return Err(SimError::Cycle);
        }
        Ok(order)
    }

    /// Number of nodes on the longest directed path.
    pub fn depth(&self) -> usize {
        let order = self.topological_order().expect("validated at construction");
        let mut level = vec![1usize; self.d];
        for &node in &order {
            for child in self.children(node) {
                level[child] = level[child].max(level[node] + 1);
            }
        }
        level.into_iter().max().unwrap_or(0)
    }

    /// Strict descendants of `node`.
    pub fn descendants(&self, node: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<usize> = self.children(node).collect();
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                stack.extend(self.children(n));
            }
        }
        seen
    }

    /// Copy with every edge into `node` removed.
    pub fn without_parents_of(&self, node: usize) -> Self {
        let mut out = self.clone();
        for j in 0..self.d {
            out.parents[node * self.d + j] = false;
        }
        out
    }
}
