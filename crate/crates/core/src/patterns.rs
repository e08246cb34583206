//! Distances from a head's attention map to idealized attention patterns.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tensor_io::{AttentionMap, TokenMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    ToCls,
    ToSep,
    ToSelf,
    ToPrev,
    ToNext,
    ToPunct,
}

impl PatternKind {
    /// Stable feature order.
    pub const ALL: [PatternKind; 6] = [
        PatternKind::ToCls,
        PatternKind::ToSep,
        PatternKind::ToSelf,
        PatternKind::ToPrev,
        PatternKind::ToNext,
        PatternKind::ToPunct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::ToCls => "to_cls",
            PatternKind::ToSep => "to_sep",
            PatternKind::ToSelf => "to_self",
            PatternKind::ToPrev => "to_prev",
            PatternKind::ToNext => "to_next",
            PatternKind::ToPunct => "to_punct",
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Index of the separator target: the last special token, or `K - 1` when
/// no token is flagged special.
fn sep_index(meta: &[TokenMeta]) -> usize {
    meta.iter()
        .rposition(|t| t.is_special)
        .unwrap_or(meta.len() - 1)
}

/// Row-major K×K indicator matrix of `kind`.
pub fn pattern_matrix(kind: PatternKind, meta: &[TokenMeta]) -> Vec<f64> {
    let k = meta.len();
    assert!(k >= 2, "patterns need at least two tokens");
    let mut p = vec![0.0; k * k];
    match kind {
        PatternKind::ToCls => (0..k).for_each(|i| p[i * k] = 1.0),
        PatternKind::ToSep => {
            let s = sep_index(meta);
            (0..k).for_each(|i| p[i * k + s] = 1.0);
        }
        PatternKind::ToSelf => (0..k).for_each(|i| p[i * k + i] = 1.0),
        PatternKind::ToPrev => (1..k).for_each(|i| p[i * k + i - 1] = 1.0),
        PatternKind::ToNext => (0..k - 1).for_each(|i| p[i * k + i + 1] = 1.0),
        PatternKind::ToPunct => {
            let punct: Vec<usize> = (0..k).filter(|&j| meta[j].is_punct).collect();
            if !punct.is_empty() {
                let v = 1.0 / punct.len() as f64;
                for i in 0..k {
                    for &j in &punct {
                        p[i * k + j] = v;
                    }
                }
            }
        }
    }
    p
}

/// `||W - P||_F / K`.
pub fn pattern_distance(weights: AttentionMap<'_>, kind: PatternKind, meta: &[TokenMeta]) -> f64 {
    let k = weights.size();
    assert_eq!(k, meta.len(), "token metadata must match the attention map");
    let p = pattern_matrix(kind, meta);
    let sq: f64 = weights
        .as_slice()
        .iter()
        .zip(&p)
        .map(|(&w, &q)| (f64::from(w) - q).powi(2))
        .sum();
    sq.sqrt() / k as f64
}

/// Distances to all six patterns in [`PatternKind::ALL`] order.
pub fn pattern_features(weights: AttentionMap<'_>, meta: &[TokenMeta]) -> [f64; 6] {
    PatternKind::ALL.map(|kind| pattern_distance(weights, kind, meta))
}
