//! Datasets: the canonical on-disk format, seeded synthetic tasks, and
//! train/test splitting.
//!
//! A canonical dataset directory holds
//!
//! ```text
//! graph.tsv     N<TAB>E, then one `u<TAB>v[<TAB>w]` line per undirected edge
//! features.csv  N rows of d_in comma-separated floats, no header
//! labels.csv    one integer per line, all in {-1, 1} or all in {0, 1}
//! split.json    {"train": [...], "test": [...]}
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ego::{aggregate_all, dot, normalize_features, FeatureMatrix};
use crate::graph::{FilterKind, FilterMatrix, Graph};
use crate::model::Label;
use crate::report::fmt_f64;
use crate::trainer::Sample;
use crate::{Error, Result};

pub const GRAPH_FILE: &str = "graph.tsv";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: Vec<i64>,
    pub split: Split,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n();
        if self.features.n() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: self.features.n() });
        }
        if self.labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: self.labels.len() });
        }
        check_labels(&self.labels).map_err(|(i, msg)| Error::param(format!("label of node {i}: {msg}")))?;
        check_split(&self.split, n).map_err(Error::param)
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// `m`, the number of training samples.
    pub fn m(&self) -> usize {
        self.split.train.len()
    }

    pub fn label(&self, node: usize) -> Label {
        Label::from_positive(self.labels[node] == 1)
    }

    /// One sample per node, aggregated under `filter`.
    pub fn samples(&self, filter: &FilterMatrix) -> Result<Vec<Sample>> {
        Ok(aggregate_all(filter, &self.features)?
            .into_iter()
            .enumerate()
            .map(|(node, aggregate)| Sample { node, aggregate, label: self.label(node) })
            .collect())
    }

    /// Training and test samples in split order.
    pub fn split_samples(&self, filter: &FilterMatrix) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let all = self.samples(filter)?;
        let pick = |idx: &[usize]| idx.iter().map(|&i| all[i].clone()).collect::<Vec<_>>();
        Ok((pick(&self.split.train), pick(&self.split.test)))
    }
}

fn check_labels(labels: &[i64]) -> std::result::Result<(), (usize, String)> {
    let mut seen_zero = None;
    let mut seen_neg = None;
    for (i, &y) in labels.iter().enumerate() {
        match y {
            1 => {}
            0 => seen_zero = seen_zero.or(Some(i)),
            -1 => seen_neg = seen_neg.or(Some(i)),
            other => return Err((i, format!("label {other} is not in {{-1, 0, 1}}"))),
        }
        if let (Some(_), Some(_)) = (seen_zero, seen_neg) {
            return Err((i, "labels mix the {-1, 1} and {0, 1} encodings".into()));
        }
    }
    Ok(())
}

fn check_split(split: &Split, n: usize) -> std::result::Result<(), String> {
    let mut seen = HashSet::new();
    for (name, idx) in [("train", &split.train), ("test", &split.test)] {
        for &i in idx.iter() {
            if i >= n {
                return Err(format!("{name} index {i} out of range ({n} nodes)"));
            }
            if !seen.insert(i) {
                return Err(format!("node {i} appears twice in the split"));
            }
        }
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn parse_graph(path: &Path, text: &str) -> Result<Graph> {
    let mut it = lines(text);
    let (_, header) = it.next().ok_or_else(|| parse_err(path, 1, "missing header `N<TAB>E`"))?;
    let head: Vec<&str> = header.split('\t').collect();
    if head.len() != 2 {
        return Err(parse_err(path, 1, "header must be `N<TAB>E`"));
    }
    let n: usize = head[0].trim().parse().map_err(|_| parse_err(path, 1, "bad node count"))?;
    let e: usize = head[1].trim().parse().map_err(|_| parse_err(path, 1, "bad edge count"))?;

    let mut edges = Vec::with_capacity(e);
    let mut line_of = Vec::with_capacity(e);
    for (line, text) in it {
        let fields: Vec<&str> = text.split('\t').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_err(path, line, "expected `u<TAB>v[<TAB>w]`"));
        }
        let idx = |s: &str| s.trim().parse::<usize>().map_err(|_| parse_err(path, line, format!("bad node index `{s}`")));
        let u = idx(fields[0])?;
        let v = idx(fields[1])?;
        let w = match fields.get(2) {
            Some(s) => s.trim().parse::<f64>().map_err(|_| parse_err(path, line, format!("bad weight `{s}`")))?,
            None => 1.0,
        };
        edges.push((u, v, w));
        line_of.push(line);
    }
    if edges.len() != e {
        return Err(parse_err(path, 1, format!("header declares {e} edges, found {}", edges.len())));
    }
    Graph::new(n, edges).map_err(|err| {
        let position = match err {
            Error::EdgeOutOfRange { position, .. }
            | Error::DuplicateEdge { position, .. }
            | Error::SelfLoop { position, .. }
            | Error::InvalidWeight { position, .. } => position,
            _ => 0,
        };
        parse_err(path, line_of.get(position).copied().unwrap_or(1), err.to_string())
    })
}

pub fn parse_features(path: &Path, text: &str, n: usize) -> Result<FeatureMatrix> {
    let mut data = Vec::new();
    let mut d_in = None;
    let mut rows = 0;
    for (line, text) in lines(text) {
        let row: Vec<f64> = text
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| parse_err(path, line, format!("bad float `{s}`"))))
            .collect::<Result<_>>()?;
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(parse_err(path, line, format!("non-finite feature {bad}")));
        }
        match d_in {
            None => d_in = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(parse_err(path, line, format!("expected {d} columns, found {}", row.len())))
            }
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(path, rows.max(1), format!("expected {n} rows, found {rows}")));
    }
    FeatureMatrix::new(n, d_in.unwrap_or(0), data)
}

pub fn parse_labels(path: &Path, text: &str, n: usize) -> Result<Vec<i64>> {
    let mut labels = Vec::with_capacity(n);
    let mut lines_seen = Vec::with_capacity(n);
    for (line, text) in lines(text) {
        let y: i64 = text.trim().parse().map_err(|_| parse_err(path, line, format!("bad label `{text}`")))?;
        labels.push(y);
        lines_seen.push(line);
    }
    check_labels(&labels).map_err(|(i, msg)| parse_err(path, lines_seen[i], msg))?;
    if labels.len() != n {
        return Err(parse_err(path, labels.len().max(1), format!("expected {n} labels, found {}", labels.len())));
    }
    Ok(labels)
}

pub fn parse_split(path: &Path, text: &str, n: usize) -> Result<Split> {
    let split: Split = serde_json::from_str(text).map_err(|e| parse_err(path, e.line(), e.to_string()))?;
    check_split(&split, n).map_err(|msg| parse_err(path, 1, msg))?;
    Ok(split)
}

/// Reads and validates a canonical dataset directory, optionally scaling
/// every nonzero feature row to unit norm.
pub fn load_canonical(dir: &Path, normalize: bool) -> Result<Dataset> {
    let path = |f: &str| dir.join(f);
    let graph_path = path(GRAPH_FILE);
    let graph = parse_graph(&graph_path, &read(&graph_path)?)?;
    let n = graph.n();
    let features_path = path(FEATURES_FILE);
    let mut features = parse_features(&features_path, &read(&features_path)?, n)?;
    if normalize {
        features = normalize_features(&features).features;
    }
    let labels_path = path(LABELS_FILE);
    let labels = parse_labels(&labels_path, &read(&labels_path)?, n)?;
    let split_path = path(SPLIT_FILE);
    let split = parse_split(&split_path, &read(&split_path)?, n)?;
    Ok(Dataset { graph, features, labels, split })
}

/// Input files of a canonical dataset, in a fixed order.
pub fn canonical_files(dir: &Path) -> [PathBuf; 4] {
    [GRAPH_FILE, FEATURES_FILE, LABELS_FILE, SPLIT_FILE].map(|f| dir.join(f))
}

pub fn save_canonical(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(p, e))
    };

    let mut g = format!("{}\t{}\n", ds.graph.n(), ds.graph.edges().len());
    for e in ds.graph.edges() {
        if e.w == 1.0 {
            g.push_str(&format!("{}\t{}\n", e.u, e.v));
        } else {
            g.push_str(&format!("{}\t{}\t{}\n", e.u, e.v, fmt_f64(e.w)));
        }
    }
    write(GRAPH_FILE, g)?;

    let mut f = String::new();
    for row in ds.features.rows() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        f.push_str(&cells.join(","));
        f.push('\n');
    }
    write(FEATURES_FILE, f)?;

    let l: String = ds.labels.iter().map(|y| format!("{y}\n")).collect();
    write(LABELS_FILE, l)?;

    let s = serde_json::to_string(&ds.split).expect("split serializes");
    write(SPLIT_FILE, s + "\n")
}

/// Seeded shuffle split with `m = round(fraction · N)`, kept within `[1, N-1]`.
/// Both index lists are returned sorted.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<Dataset> {
    let n = ds.n();
    let split = split_indices(n, train_fraction, seed)?;
    Ok(Dataset { split, ..ds.clone() })
}

fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::param(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    if n < 2 {
        return Err(Error::param("splitting needs at least 2 nodes"));
    }
    let m = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..m].to_vec();
    let mut test = order[m..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    ErdosRenyi { n: usize, p: f64 },
    /// Node 0 joined to `n - 1` leaves.
    Star { n: usize },
    Complete { n: usize },
    Cycle { n: usize },
}

impl GraphKind {
    pub fn n(self) -> usize {
        match self {
            GraphKind::ErdosRenyi { n, .. }
            | GraphKind::Star { n }
            | GraphKind::Complete { n }
            | GraphKind::Cycle { n } => n,
        }
    }

    pub fn generate(self, seed: u64) -> Result<Graph> {
        let n = self.n();
        if n < 2 {
            return Err(Error::param(format!("graph needs at least 2 nodes, got {n}")));
        }
        let edges: Vec<(usize, usize)> = match self {
            GraphKind::ErdosRenyi { p, .. } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::param(format!("edge probability must lie in (0, 1], got {p}")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut out = Vec::new();
                for u in 0..n {
                    for v in (u + 1)..n {
                        if rng.gen_bool(p) {
                            out.push((u, v));
                        }
                    }
                }
                out
            }
            GraphKind::Star { .. } => (1..n).map(|j| (0, j)).collect(),
            GraphKind::Complete { .. } => (0..n).flat_map(|u| ((u + 1)..n).map(move |v| (u, v))).collect(),
            GraphKind::Cycle { .. } if n == 2 => vec![(0, 1)],
            GraphKind::Cycle { .. } => (0..n).map(|u| (u, (u + 1) % n)).collect(),
        };
        Graph::unweighted(n, &edges)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub graph: GraphKind,
    pub d_in: usize,
    pub seed: u64,
    pub teacher_noise: f64,
    pub train_fraction: f64,
}

impl SyntheticSpec {
    pub fn new(graph: GraphKind, d_in: usize, seed: u64) -> Self {
        SyntheticSpec { graph, d_in, seed, teacher_noise: 0.0, train_fraction: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub dataset: Dataset,
    /// Hidden weights that generated the labels under the symmetric normalized filter.
    pub teacher: Vec<f64>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Seeded synthetic task: unit-norm Gaussian features and labels
/// `y = sign(a·θ*)` where `a` aggregates features under the symmetric
/// normalized filter, each flipped with probability `teacher_noise`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    if !(0.0..0.5).contains(&spec.teacher_noise) {
        return Err(Error::param(format!("teacher noise must lie in [0, 0.5), got {}", spec.teacher_noise)));
    }
    if spec.d_in == 0 {
        return Err(Error::param("feature dimension must be at least 1"));
    }
    let graph = spec.graph.generate(spec.seed)?;
    let n = graph.n();

    let mut rng = stream(spec.seed, 1);
    let raw: Vec<f64> = (0..n * spec.d_in).map(|_| rng.sample(StandardNormal)).collect();
    let features = normalize_features(&FeatureMatrix::new(n, spec.d_in, raw)?).features;

    let mut rng = stream(spec.seed, 2);
    let teacher: Vec<f64> = (0..spec.d_in).map(|_| rng.sample(StandardNormal)).collect();
    let filter = FilterMatrix::build(&graph, FilterKind::SymNormalized);
    let mut noise = stream(spec.seed, 3);
    let labels = aggregate_all(&filter, &features)?
        .iter()
        .map(|a| {
            let clean = dot(a, &teacher) >= 0.0;
            let flip = spec.teacher_noise > 0.0 && noise.gen_bool(spec.teacher_noise);
            if clean != flip {
                1
            } else {
                -1
            }
        })
        .collect();

    let split = split_indices(n, spec.train_fraction, spec.seed.wrapping_add(0x5eed))?;
    Ok(Synthetic { dataset: Dataset { graph, features, labels, split }, teacher })
}
