//! Multi-label pairwise MRFs with weighted-Potts interactions, minimized by
//! alpha-expansion graph-cut moves.

use crate::error::{Error, Result};
use crate::maxflow::{Graph, Segment};

/// Unary costs are clamped to this value inside a move graph.
const BIG: f64 = 1e12;
const MAX_SWEEPS: usize = 100;

/// Energy `sum_p U(p, L_p) + sum_(p,q) w_pq [L_p != L_q]`.
#[derive(Debug, Clone)]
pub struct PairwiseGraph {
    nodes: usize,
    labels: usize,
    unary: Vec<f64>,
    edges: Vec<(u32, u32, f64)>,
}

impl PairwiseGraph {
    pub fn new(nodes: usize, labels: usize) -> Result<Self> {
        if labels == 0 {
            return Err(Error::InvalidInput(
                "an MRF needs at least one label".into(),
            ));
        }
        Ok(Self {
            nodes,
            labels,
            unary: vec![0.0; nodes * labels],
            edges: Vec::new(),
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn edges(&self) -> &[(u32, u32, f64)] {
        &self.edges
    }

    /// `+inf` forbids the label.
    pub fn set_unary(&mut self, node: usize, label: usize, cost: f64) {
        self.unary[node * self.labels + label] = cost;
    }

    pub fn unary(&self, node: usize, label: usize) -> f64 {
        self.unary[node * self.labels + label]
    }

    pub fn add_edge(&mut self, p: usize, q: usize, weight: f64) -> Result<()> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "pairwise weight {weight} must be finite and nonnegative"
            )));
        }
        if p == q || p >= self.nodes || q >= self.nodes {
            return Err(Error::InvalidInput(format!("bad edge ({p}, {q})")));
        }
        self.edges.push((p as u32, q as u32, weight));
        Ok(())
    }

    pub fn energy(&self, labeling: &[usize]) -> f64 {
        let u: f64 = labeling
            .iter()
            .enumerate()
            .map(|(p, &l)| self.unary(p, l))
            .sum();
        let v: f64 = self
            .edges
            .iter()
            .filter(|(p, q, _)| labeling[*p as usize] != labeling[*q as usize])
            .map(|e| e.2)
            .sum();
        u + v
    }

    /// Independent per-node minimizers of the unary cost.
    pub fn unary_argmin(&self) -> Vec<usize> {
        (0..self.nodes)
            .map(|p| {
                (0..self.labels)
                    .min_by(|&a, &b| self.unary(p, a).total_cmp(&self.unary(p, b)))
                    .unwrap()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ExpansionResult {
    pub labeling: Vec<usize>,
    /// Energy after initialization and after every accepted move.
    pub trace: Vec<f64>,
    pub sweeps: usize,
}

impl ExpansionResult {
    pub fn energy(&self) -> f64 {
        *self.trace.last().unwrap()
    }
}

/// Alpha-expansion from `init`. A move is kept only if it strictly lowers
/// the energy; stops after a sweep over all labels with no change.
pub fn alpha_expansion(graph: &PairwiseGraph, init: &[usize]) -> Result<ExpansionResult> {
    if init.len() != graph.nodes || init.iter().any(|&l| l >= graph.labels) {
        return Err(Error::InvalidInput(
            "initial labeling does not fit the graph".into(),
        ));
    }
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); graph.nodes];
    for &(p, q, w) in &graph.edges {
        adj[p as usize].push((q as usize, w));
        adj[q as usize].push((p as usize, w));
    }
    let mut labels = init.to_vec();
    let mut energy = graph.energy(&labels);
    let mut trace = vec![energy];
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut improved = false;
        for alpha in 0..graph.labels {
            let Some(candidate) = expansion_move(graph, &adj, &labels, alpha) else {
                continue;
            };
            let e = graph.energy(&candidate);
            if e < energy {
                labels = candidate;
                energy = e;
                trace.push(e);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(ExpansionResult {
        labeling: labels,
        trace,
        sweeps,
    })
}

/// Optimal alpha-expansion of `labels`; `None` if no node can switch.
/// Source keeps the current label, sink switches to `alpha`.
fn expansion_move(
    graph: &PairwiseGraph,
    adj: &[Vec<(usize, f64)>],
    labels: &[usize],
    alpha: usize,
) -> Option<Vec<usize>> {
    let clamp = |c: f64| c.min(BIG);
    let mut var = vec![usize::MAX; graph.nodes];
    let mut count = 0;
    for p in 0..graph.nodes {
        if labels[p] != alpha && graph.unary(p, alpha).is_finite() {
            var[p] = count;
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    let mut g = Graph::new(count);
    for p in 0..graph.nodes {
        let v = var[p];
        if v == usize::MAX {
            continue;
        }
        let lp = labels[p];
        let mut e0 = clamp(graph.unary(p, lp));
        let mut e1 = clamp(graph.unary(p, alpha));
        for &(q, w) in &adj[p] {
            if var[q] == usize::MAX {
                let lq = labels[q];
                if lp != lq {
                    e0 += w;
                }
                if alpha != lq {
                    e1 += w;
                }
            }
        }
        g.add_term1(v, e0, e1);
    }
    for &(p, q, w) in &graph.edges {
        let (p, q) = (p as usize, q as usize);
        let (vp, vq) = (var[p], var[q]);
        if vp == usize::MAX || vq == usize::MAX {
            continue;
        }
        let (lp, lq) = (labels[p], labels[q]);
        let e00 = if lp != lq { w } else { 0.0 };
        g.add_term2(vp, vq, e00, w, w, 0.0);
    }
    g.maxflow();
    let mut out = labels.to_vec();
    for p in 0..graph.nodes {
        if var[p] != usize::MAX && g.segment(var[p]) == Segment::Sink {
            out[p] = alpha;
        }
    }
    Some(out)
}

/// Edges of the 8-neighborhood of a `w x h` grid, each pair once, with
/// weights `axis` and `diagonal`.
pub fn grid_edges_8(w: usize, h: usize) -> Vec<(usize, usize, bool)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                out.push((p, p + 1, false));
            }
            if y + 1 < h {
                out.push((p, p + w, false));
                if x + 1 < w {
                    out.push((p, p + w + 1, true));
                }
                if x > 0 {
                    out.push((p, p + w - 1, true));
                }
            }
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random 3x4, 3-label, 8-connected Potts instance.
    pub(crate) fn random_instance(seed: u64) -> PairwiseGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = PairwiseGraph::new(12, 3).unwrap();
        for p in 0..12 {
            for l in 0..3 {
                g.set_unary(p, l, rng.random_range(0.0..1.0));
            }
        }
        for (p, q, diag) in grid_edges_8(4, 3) {
            let w: f64 = rng.random_range(0.0..0.6);
            g.add_edge(p, q, if diag { w / 2f64.sqrt() } else { w })
                .unwrap();
        }
        g
    }

    pub(crate) fn exhaustive_minimum(g: &PairwiseGraph) -> f64 {
        let n = g.nodes();
        let total = g.labels().pow(n as u32);
        let mut lab = vec![0usize; n];
        let mut best = f64::INFINITY;
        for mut code in 0..total {
            for l in lab.iter_mut() {
                *l = code % g.labels();
                code /= g.labels();
            }
            best = best.min(g.energy(&lab));
        }
        best
    }

    #[test]
    fn zero_pairwise_is_argmin() {
        let mut g = random_instance(1);
        g.edges.iter_mut().for_each(|e| e.2 = 0.0);
        let r = alpha_expansion(&g, &[0; 12]).unwrap();
        assert_eq!(r.labeling, g.unary_argmin());
    }

    #[test]
    fn uniform_unary_gives_single_label() {
        let mut g = PairwiseGraph::new(12, 3).unwrap();
        for (p, q, _) in grid_edges_8(4, 3) {
            g.add_edge(p, q, 1.0).unwrap();
        }
        let init: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let r = alpha_expansion(&g, &init).unwrap();
        assert_eq!(r.energy(), 0.0);
        assert!(r.labeling.iter().all(|&l| l == r.labeling[0]));
    }

    #[test]
    fn trace_is_monotone_and_close_to_optimum() {
        let mut exact = 0;
        for seed in 0..20 {
            let g = random_instance(seed);
            let r = alpha_expansion(&g, &[0; 12]).unwrap();
            assert!(r.trace.windows(2).all(|w| w[1] < w[0]));
            let opt = exhaustive_minimum(&g);
            assert!(r.energy() <= 1.02 * opt + 1e-12);
            if (r.energy() - opt).abs() < 1e-9 {
                exact += 1;
            }
        }
        assert!(exact >= 18);
    }

    #[test]
    fn forbidden_labels_are_never_chosen() {
        let mut g = random_instance(3);
        for p in 0..12 {
            g.set_unary(p, 2, f64::INFINITY);
        }
        let r = alpha_expansion(&g, &[0; 12]).unwrap();
        assert!(r.labeling.iter().all(|&l| l != 2));
        assert!(alpha_expansion(&g, &[5; 12]).is_err());
    }
}
