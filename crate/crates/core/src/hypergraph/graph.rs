use super::NodeFeatures;
use crate::error::{Error, Result};
use crate::tensor::{cosine_similarity, top_k};

/// One hyperedge per node: node `i` plus its `k − 1` most cosine-similar
/// other nodes.
///
/// Each edge lists the anchor first, then the remaining members by
/// descending similarity (ties by ascending index). Identical edges from
/// different anchors are kept, since the per-node normalization counts
/// incidences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hypergraph {
    n_nodes: usize,
    k: usize,
    hyperedges: Vec<Vec<usize>>,
    incident: Vec<Vec<usize>>,
}

impl Hypergraph {
    /// Builds from explicit edges. Every node must lie in at least one edge.
    pub fn from_edges(n_nodes: usize, hyperedges: Vec<Vec<usize>>) -> Result<Self> {
        let mut incident = vec![Vec::new(); n_nodes];
        for (e, members) in hyperedges.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::DegenerateInput(format!("hyperedge {e} is empty")));
            }
            for &v in members {
                let slot = incident
                    .get_mut(v)
                    .ok_or_else(|| Error::InvalidRange(format!("node {v} >= {n_nodes}")))?;
                if slot.last() == Some(&e) {
                    return Err(Error::DegenerateInput(format!("node {v} repeated in edge {e}")));
                }
                slot.push(e);
            }
        }
        if let Some(v) = incident.iter().position(Vec::is_empty) {
            return Err(Error::DegenerateInput(format!("node {v} has no incident hyperedge")));
        }
        let k = hyperedges.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Self {
            n_nodes,
            k,
            hyperedges,
            incident,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn hyperedges(&self) -> &[Vec<usize>] {
        &self.hyperedges
    }

    /// Indices of the hyperedges containing `v`, ascending.
    pub fn incident(&self, v: usize) -> &[usize] {
        &self.incident[v]
    }
}

/// Feature-similarity hypergraph: for each node, itself plus the top
/// `k − 1` other nodes by cosine similarity.
pub fn build_hypergraph(features: &NodeFeatures, k: usize) -> Result<Hypergraph> {
    if k == 0 {
        return Err(Error::InvalidRange("hyperedge size k must be >= 1".into()));
    }
    let f = features.matrix();
    let n = features.n_nodes();
    let others = k.min(n) - 1;
    let mut hyperedges = Vec::with_capacity(n);
    let mut scores = vec![0.0; n];
    for i in 0..n {
        for (j, s) in scores.iter_mut().enumerate() {
            *s = if j == i {
                f64::NEG_INFINITY
            } else {
                cosine_similarity(f.row(i), f.row(j))?
            };
        }
        let mut edge = Vec::with_capacity(others + 1);
        edge.push(i);
        edge.extend(top_k(&scores, others));
        hyperedges.push(edge);
    }
    let mut g = Hypergraph::from_edges(n, hyperedges)?;
    g.k = k.min(n);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::Tensor;
    use std::collections::BTreeSet;

    fn features(rows: Vec<Vec<f64>>) -> NodeFeatures {
        NodeFeatures::from_matrix(Tensor::from_rows(&rows).unwrap()).unwrap()
    }

    #[test]
    fn k1_is_self_only() {
        let f = features(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let g = build_hypergraph(&f, 1).unwrap();
        for (i, e) in g.hyperedges().iter().enumerate() {
            assert_eq!(e, &vec![i]);
        }
    }

    #[test]
    fn identical_rows_keep_anchor_then_lowest_index() {
        let f = features(vec![vec![0.3, 0.4]; 5]);
        let g = build_hypergraph(&f, 2).unwrap();
        assert_eq!(g.hyperedges()[0], vec![0, 1]);
        for i in 1..5 {
            assert_eq!(g.hyperedges()[i], vec![i, 0]);
        }
    }

    #[test]
    fn zero_rows_are_handled() {
        let f = features(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.0]]);
        let g = build_hypergraph(&f, 2).unwrap();
        assert_eq!(g.hyperedges()[0], vec![0, 1]);
        assert_eq!(g.hyperedges().len(), 3);
    }

    #[test]
    fn k_larger_than_n_clamps() {
        let f = features(vec![vec![1.0], vec![2.0]]);
        let g = build_hypergraph(&f, 8).unwrap();
        assert_eq!(g.k(), 2);
        assert!(g.hyperedges().iter().all(|e| e.len() == 2));
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = seeded(17);
        let m = Tensor::randn(&[50, 4], 1.0, &mut rng);
        let f = NodeFeatures::from_matrix(m.clone()).unwrap();
        let g = build_hypergraph(&f, 8).unwrap();
        for i in 0..50 {
            let mut order: Vec<(f64, usize)> = (0..50)
                .filter(|&j| j != i)
                .map(|j| {
                    let (a, b) = (m.row(i), m.row(j));
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                    (dot / (na * nb), j)
                })
                .collect();
            order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let want: BTreeSet<usize> = std::iter::once(i).chain(order.iter().take(7).map(|p| p.1)).collect();
            let got: BTreeSet<usize> = g.hyperedges()[i].iter().copied().collect();
            assert_eq!(got, want, "node {i}");
        }
    }

    #[test]
    fn invariants_hold() {
        let mut rng = seeded(3);
        let f = NodeFeatures::from_matrix(Tensor::randn(&[30, 3], 1.0, &mut rng)).unwrap();
        let g = build_hypergraph(&f, 5).unwrap();
        assert_eq!(g.hyperedges().len(), 30);
        for (i, e) in g.hyperedges().iter().enumerate() {
            assert_eq!(e.len(), 5);
            assert!(e.contains(&i));
            assert!(e.iter().all(|&v| v < 30));
            assert!(!g.incident(i).is_empty());
        }
        assert_eq!(g, build_hypergraph(&f, 5).unwrap());
    }

    #[test]
    fn from_edges_validates() {
        assert!(Hypergraph::from_edges(2, vec![vec![0]]).is_err());
        assert!(Hypergraph::from_edges(2, vec![vec![0, 2]]).is_err());
        assert!(Hypergraph::from_edges(1, vec![vec![]]).is_err());
        assert!(Hypergraph::from_edges(2, vec![vec![0, 1]]).is_ok());
    }
}
