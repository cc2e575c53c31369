//! Small generated graphs with known community structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::Graph;
use crate::kernels::Tensor;

/// Two `size`-node cliques joined by a single edge, with one-hot block attributes and
/// block labels. Node order is shuffled by `seed`.
pub fn two_cliques(size: usize, seed: u64) -> Graph {
    assert!(size >= 2, "cliques need at least two nodes");
    let n = 2 * size;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut edges = Vec::new();
    for block in 0..2 {
        let base = block * size;
        for i in 0..size {
            for j in i + 1..size {
                edges.push((order[base + i], order[base + j]));
            }
        }
    }
    edges.push((order[size - 1], order[size]));
    let mut attrs = Tensor::zeros(n, 2);
    let mut labels = vec![0; n];
    for (pos, &node) in order.iter().enumerate() {
        let block = pos / size;
        attrs.set(node, block, 1.0);
        labels[node] = block;
    }
    Graph::new(edges, attrs, Some(labels)).expect("valid construction")
}

/// Parameters of a planted-partition graph with bag-of-words attributes.
#[derive(Debug, Clone)]
pub struct PlantedPartition {
    pub sizes: Vec<usize>,
    /// Edge probability inside a block.
    pub p_in: f64,
    /// Edge probability across blocks.
    pub p_out: f64,
    /// Vocabulary size; split evenly into per-block topic words.
    pub vocab: usize,
    /// Words drawn per node.
    pub words_per_node: usize,
    /// Probability that a drawn word comes from the node's own topic.
    pub topic_weight: f64,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        Self {
            sizes: vec![40, 40, 40],
            p_in: 0.15,
            p_out: 0.01,
            vocab: 60,
            words_per_node: 8,
            topic_weight: 0.7,
        }
    }
}

/// Stochastic block model with binary bag-of-words attributes, citation-network style.
pub fn planted_partition(spec: &PlantedPartition, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.sizes.len();
    let labels: Vec<usize> = spec
        .sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = labels.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { spec.p_in } else { spec.p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let topic = (spec.vocab / k).max(1);
    let mut attrs = Tensor::zeros(n, spec.vocab);
    for (i, &b) in labels.iter().enumerate() {
        for _ in 0..spec.words_per_node {
            let w = if rng.gen::<f64>() < spec.topic_weight {
                (b * topic + rng.gen_range(0..topic)).min(spec.vocab - 1)
            } else {
                rng.gen_range(0..spec.vocab)
            };
            attrs.set(i, w, 1.0);
        }
    }
    Graph::new(edges, attrs, Some(labels)).expect("valid construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_cliques_shape() {
        let g = two_cliques(10, 3);
        assert_eq!(g.n(), 20);
        assert_eq!(g.num_edges(), 2 * 45 + 1);
        let labels = g.labels().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 10);
        for i in 0..20 {
            assert_eq!(g.attributes().get(i, labels[i]), 1.0);
        }
        let cross = g
            .edges()
            .iter()
            .filter(|&&(a, b)| labels[a] != labels[b])
            .count();
        assert_eq!(cross, 1);
    }

    #[test]
    fn planted_partition_is_seeded() {
        let spec = PlantedPartition::default();
        let a = planted_partition(&spec, 1);
        let b = planted_partition(&spec, 1);
        assert_eq!(a, b);
        assert_eq!(a.n(), 120);
        assert_eq!(a.num_classes(), Some(3));
        let labels = a.labels().unwrap();
        let inside = a.edges().iter().filter(|&&(i, j)| labels[i] == labels[j]).count();
        assert!(inside * 2 > a.num_edges());
    }
}
