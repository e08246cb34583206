//! 0/1-dimensional persistence of the attention-weight filtration.
//!
//! Weights are max-symmetrized, `s_ij = max(w_ij, w_ji)`, and each pair with
//! `s_ij > 0` enters the filtration at `f = 1 - s_ij`, so strong attention
//! appears first. All vertices are present from `f = 0`. Edges that merge two
//! components kill an H0 class; edges closing a loop give birth to an H1
//! class that lives until the end of the filtration (`f = 1`).

use serde::{Deserialize, Serialize};

use crate::tensor_io::AttentionMap;

/// Filtration value at which every H1 bar dies.
pub const FILTRATION_END: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub birth: f64,
    /// `f64::INFINITY` for essential H0 classes.
    pub death: f64,
}

impl Bar {
    pub fn length(&self) -> f64 {
        self.death - self.birth
    }

    pub fn is_finite(&self) -> bool {
        self.death.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Barcode {
    pub h0: Vec<Bar>,
    pub h1: Vec<Bar>,
}

impl Barcode {
    pub fn finite_h0(&self) -> impl Iterator<Item = &Bar> {
        self.h0.iter().filter(|b| b.is_finite())
    }

    pub fn essential_h0_count(&self) -> usize {
        self.h0.iter().filter(|b| !b.is_finite()).count()
    }
}

/// Filtered edges `(f, i, j)` with `i < j`, in processing order: increasing
/// `f`, ties broken by `(i, j)`.
pub fn filtration_edges(weights: AttentionMap<'_>) -> Vec<(f64, usize, usize)> {
    let k = weights.size();
    let mut edges = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let s = weights.get(i, j).max(weights.get(j, i));
            if s > 0.0 {
                edges.push((1.0 - s, i, j));
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    edges
}

/// Barcode of an explicit weighted edge list already in filtration order.
pub fn barcode_from_edges(node_count: usize, edges: &[(f64, usize, usize)]) -> Barcode {
    let mut parent: Vec<usize> = (0..node_count).collect();
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    let mut bc = Barcode::default();
    let mut components = node_count;
    for &(f, i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri == rj {
            bc.h1.push(Bar {
                birth: f,
                death: FILTRATION_END,
            });
        } else {
            // elder rule is moot: every vertex is born at 0
            parent[ri.max(rj)] = ri.min(rj);
            components -= 1;
            bc.h0.push(Bar { birth: 0.0, death: f });
        }
    }
    bc.h0.extend((0..components).map(|_| Bar {
        birth: 0.0,
        death: f64::INFINITY,
    }));
    bc
}

pub fn attention_filtration_barcode(weights: AttentionMap<'_>) -> Barcode {
    barcode_from_edges(weights.size(), &filtration_edges(weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BarcodeFeatureVector {
    pub h0_sum_lengths: f64,
    pub h0_mean_length: f64,
    pub h0_std_length: f64,
    pub h0_entropy: f64,
    pub h0_bar_count: usize,
    pub h0_count_death_gt_half: usize,
    pub h1_bar_count: usize,
    pub h1_sum_persistence: f64,
    pub h1_mean_birth: f64,
    pub h1_entropy: f64,
}

impl BarcodeFeatureVector {
    pub const NAMES: [&'static str; 10] = [
        "h0_sum_lengths",
        "h0_mean_length",
        "h0_std_length",
        "h0_entropy",
        "h0_bar_count",
        "h0_count_death_gt_half",
        "h1_bar_count",
        "h1_sum_persistence",
        "h1_mean_birth",
        "h1_entropy",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.h0_sum_lengths,
            self.h0_mean_length,
            self.h0_std_length,
            self.h0_entropy,
            self.h0_bar_count as f64,
            self.h0_count_death_gt_half as f64,
            self.h1_bar_count as f64,
            self.h1_sum_persistence,
            self.h1_mean_birth,
            self.h1_entropy,
        ]
    }
}

/// Shannon entropy (nats) of `lengths` normalized to sum 1. Zero for empty
/// input, a single bar, or all-zero lengths.
pub fn length_entropy(lengths: &[f64]) -> f64 {
    let total: f64 = lengths.iter().sum();
    if lengths.len() < 2 || total <= 0.0 {
        return 0.0;
    }
    -lengths
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| {
            let p = l / total;
            p * p.ln()
        })
        .sum::<f64>()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn barcode_features(bc: &Barcode) -> BarcodeFeatureVector {
    let h0: Vec<f64> = bc.finite_h0().map(Bar::length).collect();
    let h1_pers: Vec<f64> = bc.h1.iter().map(Bar::length).collect();
    let h1_births: Vec<f64> = bc.h1.iter().map(|b| b.birth).collect();
    let (h0_mean, h0_std) = mean_std(&h0);
    BarcodeFeatureVector {
        h0_sum_lengths: h0.iter().sum(),
        h0_mean_length: h0_mean,
        h0_std_length: h0_std,
        h0_entropy: length_entropy(&h0),
        h0_bar_count: h0.len(),
        h0_count_death_gt_half: bc.finite_h0().filter(|b| b.death > 0.5).count(),
        h1_bar_count: bc.h1.len(),
        h1_sum_persistence: h1_pers.iter().sum(),
        h1_mean_birth: mean_std(&h1_births).0,
        h1_entropy: length_entropy(&h1_pers),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn single_vertex() {
        let bc = barcode_from_edges(1, &[]);
        assert_eq!(bc.h0.len(), 1);
        assert!(!bc.h0[0].is_finite());
        assert!(bc.h1.is_empty());
    }

    #[test]
    fn path_gives_two_finite_bars() {
        // s(0,1) = 0.9, s(1,2) = 0.6, nothing between 0 and 2
        let w = [
            0.1f32, 0.9, 0.0, //
            0.2, 0.2, 0.6, //
            0.0, 0.5, 0.5,
        ];
        let bc = attention_filtration_barcode(AttentionMap::new(3, &w));
        let deaths: Vec<f64> = bc.finite_h0().map(|b| b.death).collect();
        assert_eq!(deaths.len(), 2);
        assert!(close(deaths[0], 1.0 - f64::from(0.9f32)));
        assert!(close(deaths[1], 1.0 - f64::from(0.6f32)));
        assert_eq!(bc.essential_h0_count(), 1);
        assert!(bc.h1.is_empty());
    }

    #[test]
    fn triangle_has_one_loop_at_weakest_edge() {
        let edges = [(0.1, 0, 1), (0.3, 1, 2), (0.6, 0, 2)];
        let bc = barcode_from_edges(3, &edges);
        let deaths: Vec<f64> = bc.finite_h0().map(|b| b.death).collect();
        assert_eq!(deaths, vec![0.1, 0.3]);
        assert_eq!(bc.h1, vec![Bar { birth: 0.6, death: 1.0 }]);
    }

    #[test]
    fn feature_arithmetic() {
        let bc = Barcode {
            h0: vec![
                Bar { birth: 0.0, death: 0.1 },
                Bar { birth: 0.0, death: 0.4 },
                Bar { birth: 0.0, death: f64::INFINITY },
            ],
            h1: vec![],
        };
        let f = barcode_features(&bc);
        assert!(close(f.h0_sum_lengths, 0.5));
        assert!(close(f.h0_mean_length, 0.25));
        assert!(close(f.h0_std_length, 0.15));
        assert_eq!(f.h0_bar_count, 2);
        assert_eq!(f.h0_count_death_gt_half, 0);
        assert_eq!(
            (f.h1_bar_count, f.h1_sum_persistence, f.h1_mean_birth, f.h1_entropy),
            (0, 0.0, 0.0, 0.0)
        );
        // p = (0.2, 0.8)
        let expected = -(0.2f64 * 0.2f64.ln() + 0.8 * 0.8f64.ln());
        assert!(close(f.h0_entropy, expected));
    }

    #[test]
    fn entropy_edge_cases() {
        assert_eq!(length_entropy(&[]), 0.0);
        assert_eq!(length_entropy(&[0.7]), 0.0);
        assert_eq!(length_entropy(&[0.0, 0.0]), 0.0);
        assert!(close(length_entropy(&[0.3, 0.3]), 2f64.ln()));
    }

    #[test]
    fn h1_persistence_is_one_minus_birth() {
        let bc = barcode_from_edges(3, &[(0.1, 0, 1), (0.2, 1, 2), (0.25, 0, 2)]);
        let f = barcode_features(&bc);
        assert_eq!(f.h1_bar_count, 1);
        assert!(close(f.h1_sum_persistence, 0.75));
        assert!(close(f.h1_mean_birth, 0.25));
    }
}
