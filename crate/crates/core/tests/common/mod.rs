//! Brute-force oracles and fixtures shared by the integration tests. None of
//! this reuses the library's algorithms.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use attn_topo::tensor_io::{write_manifest, write_tensor, AttentionTensor, Category, CorpusRecord, Split, TokenMeta};
use rand::Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Attention map for "John sang beautifully" with [CLS]/[SEP]. At threshold
/// 0.1 its undirected graph is the 4-cycle [SEP]-beautifully-sang-[CLS]-[SEP]
/// plus the chord sang-[SEP] and the triangle [CLS]-John-sang.
pub fn fig1_weights() -> Vec<f32> {
    vec![
        0.55, 0.12, 0.05, 0.03, 0.25, // [CLS]
        0.30, 0.20, 0.40, 0.05, 0.05, // John
        0.35, 0.15, 0.20, 0.05, 0.25, // sang
        0.05, 0.02, 0.45, 0.18, 0.30, // beautifully
        0.60, 0.03, 0.07, 0.05, 0.25, // [SEP]
    ]
}

pub fn fig1_tokens() -> Vec<TokenMeta> {
    vec![
        TokenMeta::special("[CLS]"),
        TokenMeta::word("John"),
        TokenMeta::word("sang"),
        TokenMeta::word("beautifully"),
        TokenMeta::special("[SEP]"),
    ]
}

pub fn fig1_tensor() -> AttentionTensor {
    AttentionTensor::new(1, 1, fig1_tokens(), fig1_weights()).unwrap()
}

/// Random row-stochastic K×K matrix. `sparsity` is the chance that a weight
/// is zeroed before normalization.
pub fn random_stochastic(rng: &mut impl Rng, k: usize, sparsity: f64) -> Vec<f32> {
    let mut w = vec![0f32; k * k];
    for i in 0..k {
        let mut row: Vec<f64> = (0..k)
            .map(|_| if rng.random::<f64>() < sparsity { 0.0 } else { rng.random::<f64>() })
            .collect();
        if row.iter().all(|&v| v == 0.0) {
            row[rng.random_range(0..k)] = 1.0;
        }
        let s: f64 = row.iter().sum();
        for j in 0..k {
            w[i * k + j] = (row[j] / s) as f32;
        }
    }
    w
}

pub fn random_tensor(rng: &mut impl Rng, layers: usize, heads: usize, k: usize) -> AttentionTensor {
    let mut w = Vec::with_capacity(layers * heads * k * k);
    for _ in 0..layers * heads {
        w.extend(random_stochastic(rng, k, 0.3));
    }
    let mut tokens: Vec<TokenMeta> = (0..k).map(|i| TokenMeta::word(format!("w{i}"))).collect();
    tokens[0].is_special = true;
    tokens[k - 1].is_special = true;
    if k > 3 {
        tokens[k - 2].is_punct = true;
    }
    AttentionTensor::new(layers, heads, tokens, w).unwrap()
}

/// Dense adjacency matrix from thresholding, no self-loops.
pub fn adjacency(w: &[f32], k: usize, thr: f64) -> Vec<Vec<bool>> {
    (0..k)
        .map(|i| (0..k).map(|j| i != j && f64::from(w[i * k + j]) >= thr).collect())
        .collect()
}

pub fn random_digraph(rng: &mut impl Rng, n: usize, p: f64) -> Vec<Vec<bool>> {
    (0..n)
        .map(|i| (0..n).map(|j| i != j && rng.random::<f64>() < p).collect())
        .collect()
}

pub fn random_undirected(rng: &mut impl Rng, n: usize, p: f64) -> Vec<Vec<bool>> {
    let mut a = vec![vec![false; n]; n];
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    for (i, j) in pairs {
        if rng.random::<f64>() < p {
            a[i][j] = true;
            a[j][i] = true;
        }
    }
    a
}

pub fn edges_of(adj: &[Vec<bool>]) -> Vec<(usize, usize)> {
    let n = adj.len();
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| adj[i][j]).map(move |j| (i, j)))
        .collect()
}

pub fn symmetrize(adj: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = adj.len();
    (0..n)
        .map(|i| (0..n).map(|j| adj[i][j] || adj[j][i]).collect())
        .collect()
}

/// Transitive closure by Floyd–Warshall.
pub fn reachability(adj: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = adj.len();
    let mut r: Vec<Vec<bool>> = adj.to_vec();
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if r[i][k] && r[k][j] {
                    r[i][j] = true;
                }
            }
        }
    }
    r
}

/// SCC count from mutual reachability classes.
pub fn brute_scc(adj: &[Vec<bool>]) -> usize {
    let r = reachability(adj);
    let n = adj.len();
    let classes: BTreeSet<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| r[i][j] && r[j][i]).collect())
        .collect();
    classes.len()
}

/// Directed simple cycles, each counted once from its smallest vertex.
pub fn brute_simple_cycles(adj: &[Vec<bool>]) -> usize {
    fn extend(adj: &[Vec<bool>], start: usize, v: usize, used: &mut Vec<bool>) -> usize {
        let mut count = 0;
        for w in 0..adj.len() {
            if !adj[v][w] {
                continue;
            }
            if w == start {
                count += 1;
            } else if w > start && !used[w] {
                used[w] = true;
                count += extend(adj, start, w, used);
                used[w] = false;
            }
        }
        count
    }
    let n = adj.len();
    (0..n)
        .map(|s| {
            let mut used = vec![false; n];
            used[s] = true;
            extend(adj, s, s, &mut used)
        })
        .sum()
}

/// Connected components of a symmetric adjacency matrix by BFS.
pub fn brute_components(und: &[Vec<bool>]) -> usize {
    let n = und.len();
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        let mut queue = vec![s];
        seen[s] = true;
        while let Some(v) = queue.pop() {
            for w in 0..n {
                if und[v][w] && !seen[w] {
                    seen[w] = true;
                    queue.push(w);
                }
            }
        }
    }
    count
}

pub fn undirected_edge_count(und: &[Vec<bool>]) -> usize {
    let n = und.len();
    (0..n).map(|i| (i + 1..n).filter(|&j| und[i][j]).count()).sum()
}

/// Exact maximum matching by exhaustive branching on the lowest free vertex.
pub fn brute_max_matching(und: &[Vec<bool>]) -> usize {
    fn go(und: &[Vec<bool>], used: &mut Vec<bool>, from: usize) -> usize {
        let n = und.len();
        let Some(v) = (from..n).find(|&v| !used[v]) else {
            return 0;
        };
        used[v] = true;
        let mut best = go(und, used, v + 1);
        for w in v + 1..n {
            if und[v][w] && !used[w] {
                used[w] = true;
                best = best.max(1 + go(und, used, v + 1));
                used[w] = false;
            }
        }
        used[v] = false;
        best
    }
    go(und, &mut vec![false; und.len()], 0)
}

/// True if some vertex subset of size >= 4 induces a cycle.
pub fn has_long_induced_cycle(und: &[Vec<bool>]) -> bool {
    let n = und.len();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() < 4 {
            continue;
        }
        let verts: Vec<usize> = (0..n).filter(|&v| mask & (1 << v) != 0).collect();
        let two_regular = verts
            .iter()
            .all(|&v| verts.iter().filter(|&&w| und[v][w]).count() == 2);
        if !two_regular {
            continue;
        }
        let sub: Vec<Vec<bool>> = verts
            .iter()
            .map(|&a| verts.iter().map(|&b| und[a][b]).collect())
            .collect();
        if brute_components(&sub) == 1 {
            return true;
        }
    }
    false
}

/// Finite H0 deaths predicted by a maximum spanning forest (Kruskal on
/// decreasing weight): `1 - s(e)` for every forest edge, sorted.
pub fn kruskal_deaths(n: usize, weighted: &[(f64, usize, usize)]) -> Vec<f64> {
    let mut edges = weighted.to_vec();
    edges.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut label: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    for (s, a, b) in edges {
        let (la, lb) = (label[a], label[b]);
        if la != lb {
            for l in label.iter_mut() {
                if *l == lb {
                    *l = la;
                }
            }
            out.push(1.0 - s);
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Random connected graph on `k` nodes with distinct weights in `(0, 1)`,
/// as a symmetric row-major weight matrix plus its `(s, a, b)` edge list.
/// Weights are multiples of 1/256 so f32 and f64 agree exactly.
pub fn random_connected_weighted(rng: &mut impl Rng, k: usize, extra_p: f64) -> (Vec<f32>, Vec<(f64, usize, usize)>) {
    let mut pairs = BTreeSet::new();
    for v in 1..k {
        let u = rng.random_range(0..v);
        pairs.insert((u, v));
    }
    for a in 0..k {
        for b in a + 1..k {
            if rng.random_bool(extra_p) {
                pairs.insert((a, b));
            }
        }
    }
    let mut levels: Vec<u32> = (1..256).collect();
    for i in (1..levels.len()).rev() {
        levels.swap(i, rng.random_range(0..=i));
    }
    let mut w = vec![0f32; k * k];
    let mut edges = Vec::new();
    for (idx, (a, b)) in pairs.into_iter().enumerate() {
        let s = f64::from(levels[idx]) / 256.0;
        w[a * k + b] = s as f32;
        w[b * k + a] = s as f32;
        edges.push((s, a, b));
    }
    (w, edges)
}

/// One synthetic sentence: forward chain attention plus noise. Class 1 adds
/// a strong edge from the last token back to the first word, closing a long
/// cycle; class 0 sends that mass to the token itself instead.
pub fn synthetic_tensor(rng: &mut impl Rng, layers: usize, heads: usize, k: usize, label: u8) -> AttentionTensor {
    let mut w = Vec::with_capacity(layers * heads * k * k);
    for _ in 0..layers * heads {
        let noise = random_stochastic(rng, k, 0.3);
        for i in 0..k {
            let mut row: Vec<f32> = noise[i * k..(i + 1) * k].iter().map(|v| v * 0.5).collect();
            let target = if i + 1 < k {
                i + 1
            } else if label == 1 {
                1
            } else {
                i
            };
            row[target] += 0.5;
            w.extend(row);
        }
    }
    let mut tokens = vec![TokenMeta::special("[CLS]")];
    tokens.extend((1..k - 1).map(|i| TokenMeta::word(format!("w{i}"))));
    tokens.push(TokenMeta::special("[SEP]"));
    AttentionTensor::new(layers, heads, tokens, w).unwrap()
}

/// Writes `train`/`idd`/`test` sentences as ATNB files plus `manifest.json`
/// under `dir` and returns the manifest path.
pub fn write_synthetic_corpus(dir: &Path, sizes: [(Split, usize); 3], seed: u64) -> PathBuf {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let violations = [Category::Morphology, Category::Syntax, Category::Semantics];
    let mut records = Vec::new();
    for (split, n) in sizes {
        for i in 0..n {
            let label = u8::from(i % 2 == 0);
            let k = rng.random_range(6..=12);
            let t = synthetic_tensor(&mut rng, 2, 2, k, label);
            let id = format!("{split}-{i:04}");
            let file = format!("{id}.atnb");
            write_tensor(&t, dir.join(&file)).unwrap();
            let category = if label == 1 {
                Category::Acceptable
            } else {
                violations[rng.random_range(0..violations.len())]
            };
            records.push(CorpusRecord {
                id,
                sentence: format!("synthetic sentence {i}"),
                label,
                category: Some(category),
                split,
                tensor_path: PathBuf::from(file),
            });
        }
    }
    let path = dir.join("manifest.json");
    write_manifest(&records, &path).unwrap();
    path
}
