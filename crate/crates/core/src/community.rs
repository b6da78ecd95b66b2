//! Modularity-based community detection on binary similarity graphs.
//!
//! Louvain local moving followed by a connectivity refinement (every community
//! is split into its connected components before aggregation), repeated on the
//! aggregated graph until no vertex moves. Visiting order is a seeded shuffle,
//! so results are reproducible for a fixed seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Undirected graph with unit edge weights.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SimilarityGraph {
    adj: Vec<Vec<usize>>,
    edges: usize,
}

impl SimilarityGraph {
    pub fn new(num_vertices: usize) -> Self {
        SimilarityGraph {
            adj: vec![Vec::new(); num_vertices],
            edges: 0,
        }
    }

    pub fn add_edge(&mut self, u: usize, v: usize) {
        if u == v || self.adj[u].contains(&v) {
            return;
        }
        self.adj[u].push(v);
        self.adj[v].push(u);
        self.edges += 1;
    }

    pub fn num_vertices(&self) -> usize {
        self.adj.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adj[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].contains(&v)
    }

    /// Connected components, each sorted, ordered by smallest vertex.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.num_vertices();
        let mut label = vec![usize::MAX; n];
        let mut out = Vec::new();
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut comp = vec![s];
            label[s] = id;
            let mut i = 0;
            while i < comp.len() {
                let u = comp[i];
                for &v in &self.adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = id;
                        comp.push(v);
                    }
                }
                i += 1;
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// Newman modularity of a partition given as a community label per vertex.
pub fn modularity(graph: &SimilarityGraph, labels: &[usize], resolution: f64) -> f64 {
    let m = graph.num_edges() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let k = labels.iter().copied().max().map_or(0, |x| x + 1);
    let mut internal = vec![0.0; k];
    let mut degree = vec![0.0; k];
    for u in 0..graph.num_vertices() {
        degree[labels[u]] += graph.neighbors(u).len() as f64;
        for &v in graph.neighbors(u) {
            if u < v && labels[u] == labels[v] {
                internal[labels[u]] += 1.0;
            }
        }
    }
    (0..k)
        .map(|c| internal[c] / m - resolution * (degree[c] / (2.0 * m)).powi(2))
        .sum()
}

struct Working {
    adj: Vec<Vec<(usize, f64)>>,
    degree: Vec<f64>,
    total: f64,
}

impl Working {
    fn from_graph(g: &SimilarityGraph) -> Self {
        let adj: Vec<Vec<(usize, f64)>> = (0..g.num_vertices())
            .map(|u| {
                let mut row: Vec<(usize, f64)> = g.neighbors(u).iter().map(|&v| (v, 1.0)).collect();
                row.sort_unstable_by_key(|e| e.0);
                row
            })
            .collect();
        let degree: Vec<f64> = adj.iter().map(|r| r.len() as f64).collect();
        let total = degree.iter().sum();
        Working { adj, degree, total }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Louvain local moving; returns community labels and whether anything moved.
    fn local_moving(&self, resolution: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        let n = self.len();
        let mut comm: Vec<usize> = (0..n).collect();
        let mut tot = self.degree.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut scratch = vec![0.0f64; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut any_move = false;
        loop {
            let mut moved = false;
            for &i in &order {
                let ki = self.degree[i];
                let own = comm[i];
                tot[own] -= ki;
                for &(j, w) in &self.adj[i] {
                    let c = comm[j];
                    if scratch[c] == 0.0 {
                        touched.push(c);
                    }
                    scratch[c] += w;
                }
                touched.sort_unstable();
                let gain = |c: usize, kic: f64| kic - resolution * tot[c] * ki / self.total;
                let mut best = own;
                let mut best_gain = gain(own, scratch[own]);
                for &c in &touched {
                    let g = gain(c, scratch[c]);
                    if g > best_gain + 1e-12 {
                        best = c;
                        best_gain = g;
                    }
                }
                for &c in &touched {
                    scratch[c] = 0.0;
                }
                touched.clear();
                tot[best] += ki;
                if best != own {
                    comm[i] = best;
                    moved = true;
                    any_move = true;
                }
            }
            if !moved {
                break;
            }
        }
        (comm, any_move)
    }

    /// Splits each community into connected components; returns dense labels.
    fn refine(&self, comm: &[usize]) -> Vec<usize> {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adj[u] {
                    if label[v] == usize::MAX && comm[v] == comm[s] {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    fn aggregate(&self, labels: &[usize]) -> Working {
        let k = labels.iter().copied().max().map_or(0, |x| x + 1);
        let mut degree = vec![0.0; k];
        let mut rows: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); k];
        for u in 0..self.len() {
            degree[labels[u]] += self.degree[u];
            for &(v, w) in &self.adj[u] {
                let (a, b) = (labels[u], labels[v]);
                if a != b {
                    *rows[a].entry(b).or_insert(0.0) += w;
                }
            }
        }
        Working {
            adj: rows.into_iter().map(|r| r.into_iter().collect()).collect(),
            degree,
            total: self.total,
        }
    }
}

/// Partitions every vertex into communities. Communities are returned sorted
/// internally and ordered by their smallest vertex.
pub fn detect_communities(graph: &SimilarityGraph, resolution: f64, seed: u64) -> Vec<Vec<usize>> {
    let n = graph.num_vertices();
    if n == 0 {
        return Vec::new();
    }
    if graph.num_edges() == 0 {
        return (0..n).map(|v| vec![v]).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = Working::from_graph(graph);
    // node_of[v] = index of v's aggregate in the current working graph
    let mut node_of: Vec<usize> = (0..n).collect();
    loop {
        let (comm, moved) = work.local_moving(resolution, &mut rng);
        let refined = work.refine(&comm);
        let k = refined.iter().copied().max().map_or(0, |x| x + 1);
        for slot in node_of.iter_mut() {
            *slot = refined[*slot];
        }
        if !moved || k == work.len() {
            break;
        }
        work = work.aggregate(&refined);
    }
    let k = node_of.iter().copied().max().map_or(0, |x| x + 1);
    let mut out = vec![Vec::new(); k];
    for (v, &c) in node_of.iter().enumerate() {
        out[c].push(v);
    }
    out.retain(|c| !c.is_empty());
    out.sort_by_key(|c| c[0]);
    out
}
