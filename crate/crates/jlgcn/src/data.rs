//! Dataset ingestion (plain TSV formats), preprocessing, split masks,
//! subsampling, robustness perturbations, and synthetic generators.
//!
//! Citation dataset directory layout:
//!
//! - `features.tsv` — node-id, then K tab-separated reals
//! - `labels.tsv`   — node-id, class-id
//! - `edges.tsv`    — two node-ids per line (undirected)
//! - `masks.tsv`    — node-id, one of `train`/`val`/`test`/`none`
//!
//! Node ids are integers 0..N-1; every id appears exactly once in
//! `features.tsv`, `labels.tsv`, and `masks.tsv`, in any line order.
//! Feature rows are L2-normalized at load time.

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Rng, Scalar};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn none(n: usize) -> Self {
        SplitMasks {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        }
    }

    fn check_disjoint(&self) -> Result<()> {
        for i in 0..self.train.len() {
            let cnt = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if cnt > 1 {
                return Err(Error::Config(format!(
                    "node {i} appears in more than one split"
                )));
            }
        }
        Ok(())
    }
}

/// One task instance: features, labels, undirected edge list, split masks.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub features: DenseMatrix<f64>,
    pub labels: Vec<usize>,
    /// Undirected, deduplicated, stored with i < j, no self-loops.
    pub edges: Vec<(usize, usize)>,
    pub masks: SplitMasks,
    pub name: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadStats {
    pub self_loops_dropped: usize,
    pub duplicate_edges_dropped: usize,
}

impl DatasetBundle {
    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn k(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |c| c + 1)
    }

    /// Binary symmetric adjacency with zero diagonal.
    pub fn adjacency<S: Scalar>(&self) -> DenseMatrix<S> {
        let n = self.n();
        let mut a = DenseMatrix::zeros(n, n);
        for &(i, j) in &self.edges {
            *a.at_mut(i, j) = S::ONE;
            *a.at_mut(j, i) = S::ONE;
        }
        a
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.labels.len() != n
            || self.masks.train.len() != n
            || self.masks.val.len() != n
            || self.masks.test.len() != n
        {
            return Err(Error::Config(format!(
                "inconsistent bundle: {n} nodes, {} labels, {} mask entries",
                self.labels.len(),
                self.masks.train.len()
            )));
        }
        for &(i, j) in &self.edges {
            if i == j {
                return Err(Error::Config(format!("self-loop at node {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::Index { id: i.max(j), n });
            }
        }
        self.masks.check_disjoint()
    }
}

// ---------------------------------------------------------------------------
// TSV load / save
// ---------------------------------------------------------------------------

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.to_string())
        .filter(|l| !l.trim().is_empty())
        .collect())
}

/// Load a citation-network dataset directory.
pub fn load_citation(dir: &Path) -> Result<(DatasetBundle, LoadStats)> {
    let fpath = dir.join("features.tsv");
    let lines = read_lines(&fpath)?;
    if lines.is_empty() {
        return Err(Error::EmptyInput(format!("{}", fpath.display())));
    }
    let n = lines.len();
    let mut k = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
    for (lineno, line) in lines.iter().enumerate() {
        let mut fields = line.split('\t');
        let id: usize = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| parse_err(&fpath, lineno + 1, format!("bad node id: {e}")))?;
        if id >= n {
            return Err(Error::Index { id, n });
        }
        let vals: std::result::Result<Vec<f64>, _> =
            fields.map(|f| f.trim().parse::<f64>()).collect();
        let vals =
            vals.map_err(|e| parse_err(&fpath, lineno + 1, format!("bad feature value: {e}")))?;
        match k {
            None => k = Some(vals.len()),
            Some(kk) if kk != vals.len() => {
                return Err(parse_err(
                    &fpath,
                    lineno + 1,
                    format!("expected {kk} features, found {}", vals.len()),
                ))
            }
            _ => {}
        }
        if rows[id].is_some() {
            return Err(parse_err(&fpath, lineno + 1, format!("duplicate node id {id}")));
        }
        rows[id] = Some(vals);
    }
    let k = k.unwrap_or(0);
    let mut data = Vec::with_capacity(n * k);
    for (id, row) in rows.into_iter().enumerate() {
        let row = row.ok_or(Error::Index { id, n })?;
        data.extend_from_slice(&row);
    }
    let features = DenseMatrix::from_vec(n, k, data)?.l2_normalize_rows();

    let lpath = dir.join("labels.tsv");
    let mut labels = vec![usize::MAX; n];
    for (lineno, line) in read_lines(&lpath)?.iter().enumerate() {
        let mut fields = line.split('\t');
        let id: usize = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| parse_err(&lpath, lineno + 1, format!("bad node id: {e}")))?;
        let label: usize = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| parse_err(&lpath, lineno + 1, format!("bad class id: {e}")))?;
        if id >= n {
            return Err(Error::Index { id, n });
        }
        labels[id] = label;
    }
    if let Some(id) = labels.iter().position(|&l| l == usize::MAX) {
        return Err(Error::Index { id, n });
    }

    let epath = dir.join("edges.tsv");
    let mut stats = LoadStats::default();
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    for (lineno, line) in read_lines(&epath)?.iter().enumerate() {
        let mut fields = line.split('\t');
        let a: usize = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| parse_err(&epath, lineno + 1, format!("bad node id: {e}")))?;
        let b: usize = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| parse_err(&epath, lineno + 1, format!("bad node id: {e}")))?;
        if a >= n || b >= n {
            return Err(Error::Index { id: a.max(b), n });
        }
        if a == b {
            stats.self_loops_dropped += 1;
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            edges.push(key);
        } else {
            stats.duplicate_edges_dropped += 1;
        }
    }

    let mpath = dir.join("masks.tsv");
    let mut masks = SplitMasks::none(n);
    let mut mask_seen = vec![false; n];
    for (lineno, line) in read_lines(&mpath)?.iter().enumerate() {
        let mut fields = line.split('\t');
        let id: usize = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| parse_err(&mpath, lineno + 1, format!("bad node id: {e}")))?;
        if id >= n {
            return Err(Error::Index { id, n });
        }
        mask_seen[id] = true;
        match fields.next().unwrap_or_default().trim() {
            "train" => masks.train[id] = true,
            "val" => masks.val[id] = true,
            "test" => masks.test[id] = true,
            "none" => {}
            other => {
                return Err(parse_err(
                    &mpath,
                    lineno + 1,
                    format!("unknown split {other:?}"),
                ))
            }
        }
    }
    if let Some(id) = mask_seen.iter().position(|&s| !s) {
        return Err(Error::Index { id, n });
    }

    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let bundle = DatasetBundle {
        features,
        labels,
        edges,
        masks,
        name,
    };
    bundle.validate()?;
    Ok((bundle, stats))
}

/// Export a bundle in the same directory layout `load_citation` consumes.
pub fn save_citation(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let n = bundle.n();

    let mut out = String::new();
    for i in 0..n {
        write!(out, "{i}").unwrap();
        for &v in bundle.features.row(i) {
            write!(out, "\t{v:.12e}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(dir.join("features.tsv"), out)?;

    let mut out = String::new();
    for (i, &l) in bundle.labels.iter().enumerate() {
        writeln!(out, "{i}\t{l}").unwrap();
    }
    std::fs::write(dir.join("labels.tsv"), out)?;

    let mut out = String::new();
    for &(a, b) in &bundle.edges {
        writeln!(out, "{a}\t{b}").unwrap();
    }
    std::fs::write(dir.join("edges.tsv"), out)?;

    let mut out = String::new();
    for i in 0..n {
        let split = if bundle.masks.train[i] {
            "train"
        } else if bundle.masks.val[i] {
            "val"
        } else if bundle.masks.test[i] {
            "test"
        } else {
            "none"
        };
        writeln!(out, "{i}\t{split}").unwrap();
    }
    std::fs::write(dir.join("masks.tsv"), out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Subsampling and perturbation
// ---------------------------------------------------------------------------

/// Induced subgraph on `budget` nodes: every node in any split mask is
/// retained, the remainder is a uniform sample; indices are remapped
/// densely in ascending original order.
pub fn subsample_nodes(
    bundle: &DatasetBundle,
    budget: usize,
    rng: &mut Rng,
) -> Result<DatasetBundle> {
    let n = bundle.n();
    if budget > n {
        return Err(Error::Config(format!(
            "subsample budget {budget} exceeds {n} nodes"
        )));
    }
    let labeled: Vec<usize> = (0..n)
        .filter(|&i| bundle.masks.train[i] || bundle.masks.val[i] || bundle.masks.test[i])
        .collect();
    if budget < labeled.len() {
        return Err(Error::Config(format!(
            "subsample budget {budget} is below the {} split nodes",
            labeled.len()
        )));
    }
    let mut keep = vec![false; n];
    for &i in &labeled {
        keep[i] = true;
    }
    let mut rest: Vec<usize> = (0..n).filter(|&i| !keep[i]).collect();
    rng.shuffle(&mut rest);
    for &i in rest.iter().take(budget - labeled.len()) {
        keep[i] = true;
    }

    let old_ids: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    let mut new_id = vec![usize::MAX; n];
    for (new, &old) in old_ids.iter().enumerate() {
        new_id[old] = new;
    }

    let k = bundle.k();
    let mut data = Vec::with_capacity(old_ids.len() * k);
    for &old in &old_ids {
        data.extend_from_slice(bundle.features.row(old));
    }
    let features = DenseMatrix::from_vec(old_ids.len(), k, data)?;
    let labels = old_ids.iter().map(|&o| bundle.labels[o]).collect();
    let masks = SplitMasks {
        train: old_ids.iter().map(|&o| bundle.masks.train[o]).collect(),
        val: old_ids.iter().map(|&o| bundle.masks.val[o]).collect(),
        test: old_ids.iter().map(|&o| bundle.masks.test[o]).collect(),
    };
    let edges = bundle
        .edges
        .iter()
        .filter(|&&(a, b)| keep[a] && keep[b])
        .map(|&(a, b)| {
            let (x, y) = (new_id[a], new_id[b]);
            (x.min(y), x.max(y))
        })
        .collect();
    Ok(DatasetBundle {
        features,
        labels,
        edges,
        masks,
        name: format!("{}-sub{}", bundle.name, budget),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PerturbationSpec {
    pub edge_missing: f64,
    pub label_missing: f64,
    pub point_missing: f64,
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            edge_missing: 0.0,
            label_missing: 0.0,
            point_missing: 0.0,
            seed: 0,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.edge_missing) {
            return Err(Error::Config("edge_missing must be in [0,1]".into()));
        }
        if !(0.0..1.0).contains(&self.label_missing) {
            return Err(Error::Config("label_missing must be in [0,1)".into()));
        }
        if !(0.0..1.0).contains(&self.point_missing) {
            return Err(Error::Config("point_missing must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// Remove floor(edge_missing·|E|) edges and floor(label_missing·|train|)
/// training-mask entries, both uniformly at random; features and the
/// val/test masks are untouched.
pub fn perturb(bundle: &DatasetBundle, spec: &PerturbationSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let mut out = bundle.clone();

    let drop_edges = (spec.edge_missing * bundle.edges.len() as f64).floor() as usize;
    if drop_edges > 0 {
        let mut idx: Vec<usize> = (0..bundle.edges.len()).collect();
        rng.shuffle(&mut idx);
        let removed: BTreeSet<usize> = idx.into_iter().take(drop_edges).collect();
        out.edges = bundle
            .edges
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, &e)| e)
            .collect();
    }

    let train_idx: Vec<usize> = (0..bundle.n()).filter(|&i| bundle.masks.train[i]).collect();
    let drop_labels = (spec.label_missing * train_idx.len() as f64).floor() as usize;
    if drop_labels > 0 {
        let mut idx = train_idx;
        rng.shuffle(&mut idx);
        for &i in idx.iter().take(drop_labels) {
            out.masks.train[i] = false;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Synthetic point sets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFamily {
    SphereShell,
    CubeSurface,
    PlaneDisk,
    TwoCluster,
    Helix,
    Torus,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 6] = [
        ShapeFamily::SphereShell,
        ShapeFamily::CubeSurface,
        ShapeFamily::PlaneDisk,
        ShapeFamily::TwoCluster,
        ShapeFamily::Helix,
        ShapeFamily::Torus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::SphereShell => "sphere-shell",
            ShapeFamily::CubeSurface => "cube-surface",
            ShapeFamily::PlaneDisk => "plane-disk",
            ShapeFamily::TwoCluster => "two-cluster",
            ShapeFamily::Helix => "helix",
            ShapeFamily::Torus => "torus",
        }
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ShapeFamily::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown shape family {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct PointSet {
    /// N x 3 coordinates, centered and scaled into the unit sphere.
    pub points: DenseMatrix<f64>,
    pub label: usize,
}

fn sample_surface_point(family: ShapeFamily, rng: &mut Rng) -> [f64; 3] {
    match family {
        ShapeFamily::SphereShell => loop {
            let v = [rng.normal(), rng.normal(), rng.normal()];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-9 {
                return [v[0] / n, v[1] / n, v[2] / n];
            }
        },
        ShapeFamily::CubeSurface => {
            let face = rng.below(6);
            let u = rng.uniform(-1.0, 1.0);
            let v = rng.uniform(-1.0, 1.0);
            match face {
                0 => [1.0, u, v],
                1 => [-1.0, u, v],
                2 => [u, 1.0, v],
                3 => [u, -1.0, v],
                4 => [u, v, 1.0],
                _ => [u, v, -1.0],
            }
        }
        ShapeFamily::PlaneDisk => {
            let r = rng.next_f64().sqrt();
            let t = rng.uniform(0.0, std::f64::consts::TAU);
            [r * t.cos(), r * t.sin(), 0.0]
        }
        ShapeFamily::TwoCluster => {
            let sign = if rng.next_f64() < 0.5 { 1.0 } else { -1.0 };
            [
                sign * 0.6 + 0.2 * rng.normal(),
                0.2 * rng.normal(),
                0.2 * rng.normal(),
            ]
        }
        ShapeFamily::Helix => {
            let t = rng.uniform(0.0, 4.0 * std::f64::consts::PI);
            let z = t / (4.0 * std::f64::consts::PI) * 2.0 - 1.0;
            [0.7 * t.cos(), 0.7 * t.sin(), z]
        }
        ShapeFamily::Torus => {
            // Surface-uniform sampling: accept theta with probability
            // proportional to R + r·cos(theta).
            let (big_r, small_r) = (0.7, 0.3);
            let theta = loop {
                let th = rng.uniform(0.0, std::f64::consts::TAU);
                let accept = (big_r + small_r * th.cos()) / (big_r + small_r);
                if rng.next_f64() < accept {
                    break th;
                }
            };
            let phi = rng.uniform(0.0, std::f64::consts::TAU);
            [
                (big_r + small_r * theta.cos()) * phi.cos(),
                (big_r + small_r * theta.cos()) * phi.sin(),
                small_r * theta.sin(),
            ]
        }
    }
}

/// Sample one instance: surface points + Gaussian noise, centered and
/// scaled so the farthest point sits exactly on the unit sphere.
pub fn synth_instance(
    family: ShapeFamily,
    points: usize,
    noise_sigma: f64,
    rng: &mut Rng,
) -> Result<DenseMatrix<f64>> {
    if points < 8 {
        return Err(Error::Config(format!(
            "point sets need at least 8 points, got {points}"
        )));
    }
    let mut data = Vec::with_capacity(points * 3);
    for _ in 0..points {
        let p = sample_surface_point(family, rng);
        for &c in &p {
            data.push(c + noise_sigma * rng.normal());
        }
    }
    // Center.
    let mut centroid = [0.0; 3];
    for i in 0..points {
        for c in 0..3 {
            centroid[c] += data[i * 3 + c];
        }
    }
    for c in centroid.iter_mut() {
        *c /= points as f64;
    }
    let mut max_norm = 0.0_f64;
    for i in 0..points {
        let mut sq = 0.0;
        for c in 0..3 {
            data[i * 3 + c] -= centroid[c];
            sq += data[i * 3 + c] * data[i * 3 + c];
        }
        max_norm = max_norm.max(sq.sqrt());
    }
    if max_norm > 0.0 {
        for v in data.iter_mut() {
            *v /= max_norm;
        }
    }
    DenseMatrix::from_vec(points, 3, data)
}

/// Labeled collection: `per_class` instances for each listed family.
pub fn synth_pointsets(
    families: &[ShapeFamily],
    per_class: usize,
    points: usize,
    noise_sigma: f64,
    rng: &mut Rng,
) -> Result<Vec<PointSet>> {
    let mut out = Vec::with_capacity(families.len() * per_class);
    for (label, &family) in families.iter().enumerate() {
        for _ in 0..per_class {
            out.push(PointSet {
                points: synth_instance(family, points, noise_sigma, rng)?,
                label,
            });
        }
    }
    Ok(out)
}

/// Randomly remove floor(ratio·N) points from an instance (at least one
/// point always survives).
pub fn drop_points(instance: &DenseMatrix<f64>, ratio: f64, rng: &mut Rng) -> DenseMatrix<f64> {
    let n = instance.rows();
    let drop = ((ratio * n as f64).floor() as usize).min(n - 1);
    if drop == 0 {
        return instance.clone();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut keep: Vec<usize> = idx.into_iter().skip(drop).collect();
    keep.sort_unstable();
    let mut data = Vec::with_capacity(keep.len() * 3);
    for &i in &keep {
        data.extend_from_slice(instance.row(i));
    }
    DenseMatrix::from_vec(keep.len(), instance.cols(), data).expect("subset of finite data")
}

// ---------------------------------------------------------------------------
// Synthetic citation-network generator
// ---------------------------------------------------------------------------

/// Parameters of the synthetic citation-network generator: a homophilous
/// random graph over class-labeled nodes with class-topic bag-of-words
/// features, plus a Planetoid-style split (fixed labeled nodes per class,
/// then validation and test pools).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CitationSynthSpec {
    pub nodes: usize,
    pub features: usize,
    pub classes: usize,
    pub edges: usize,
    pub train_per_class: usize,
    pub val: usize,
    pub test: usize,
    /// Words drawn per document (with replacement).
    pub words_per_doc: usize,
    /// Class-specific vocabulary size per class.
    pub topic_words: usize,
    /// Probability a word is drawn from the node's class vocabulary.
    pub topic_bias: f64,
    /// Probability a node's topic words come from a different class than
    /// its label (such nodes are recoverable only through the graph).
    pub confusion: f64,
    /// Probability an edge is drawn within one class.
    pub homophily: f64,
    /// Fraction of nodes kept out of edge sampling entirely (degree 0),
    /// mimicking the weakly connected tail of real citation graphs.
    pub isolated: f64,
    pub seed: u64,
    pub name: String,
}

impl CitationSynthSpec {
    /// Dimensions matching the Cora citation network (2708 nodes, 1433
    /// features, 7 classes, 5429 edges, 20 labeled nodes per class,
    /// 500 validation and 1000 test nodes).
    pub fn cora_analog(seed: u64) -> Self {
        CitationSynthSpec {
            nodes: 2708,
            features: 1433,
            classes: 7,
            edges: 5429,
            train_per_class: 20,
            val: 500,
            test: 1000,
            words_per_doc: 18,
            topic_words: 140,
            topic_bias: 0.62,
            confusion: 0.2,
            homophily: 0.81,
            isolated: 0.2,
            seed,
            name: "cora-analog".into(),
        }
    }

    /// Citeseer-shaped variant.
    pub fn citeseer_analog(seed: u64) -> Self {
        CitationSynthSpec {
            nodes: 3327,
            features: 3703,
            classes: 6,
            edges: 4732,
            train_per_class: 20,
            val: 500,
            test: 1000,
            words_per_doc: 32,
            topic_words: 400,
            topic_bias: 0.62,
            confusion: 0.2,
            homophily: 0.81,
            isolated: 0.25,
            seed,
            name: "citeseer-analog".into(),
        }
    }
}

/// Generate a synthetic citation-network bundle.
pub fn synth_citation(spec: &CitationSynthSpec) -> Result<DatasetBundle> {
    let n = spec.nodes;
    let c = spec.classes;
    if spec.topic_words * c > spec.features {
        return Err(Error::Config(format!(
            "{} topic words x {c} classes exceed {} features",
            spec.topic_words, spec.features
        )));
    }
    if spec.train_per_class * c + spec.val + spec.test > n {
        return Err(Error::Config("splits exceed node budget".into()));
    }
    let mut rng = Rng::new(spec.seed);

    // Class assignment with uneven class sizes (largest-remainder split of
    // fixed proportions), shuffled.
    let base = [0.13, 0.08, 0.155, 0.30, 0.155, 0.11, 0.07];
    let mut labels = Vec::with_capacity(n);
    let mut allotted = 0;
    for cls in 0..c {
        let share = if cls < base.len() {
            base[cls]
        } else {
            1.0 / c as f64
        };
        let count = if cls + 1 == c {
            n - allotted
        } else {
            ((share / base.iter().take(c).sum::<f64>()) * n as f64).round() as usize
        };
        for _ in 0..count.min(n - allotted) {
            labels.push(cls);
        }
        allotted = labels.len();
    }
    while labels.len() < n {
        labels.push(c - 1);
    }
    rng.shuffle(&mut labels);

    // Bag-of-words features: class topics occupy disjoint leading blocks
    // of the vocabulary, the remainder is shared background. A `confusion`
    // fraction of nodes writes about another class's topic entirely;
    // those are classifiable only through their neighborhoods.
    let mut feat = DenseMatrix::zeros(n, spec.features);
    for i in 0..n {
        let mut topic = labels[i];
        if spec.confusion > 0.0 && rng.next_f64() < spec.confusion {
            topic = rng.below(c);
        }
        for _ in 0..spec.words_per_doc {
            let word = if rng.next_f64() < spec.topic_bias {
                topic * spec.topic_words + rng.below(spec.topic_words)
            } else {
                rng.below(spec.features)
            };
            *feat.at_mut(i, word) = 1.0;
        }
    }

    // Homophilous edges over distinct pairs; a fraction of nodes stays
    // isolated, concentrating degree on the rest the way citation tails do.
    let mut connectable: Vec<bool> = vec![true; n];
    if spec.isolated > 0.0 {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let iso = (spec.isolated * n as f64).floor() as usize;
        for &i in order.iter().take(iso) {
            connectable[i] = false;
        }
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        if connectable[i] {
            by_class[l].push(i);
        }
    }
    let mut seen = BTreeSet::new();
    let mut edges = Vec::with_capacity(spec.edges);
    let mut attempts = 0usize;
    while edges.len() < spec.edges && attempts < spec.edges * 200 {
        attempts += 1;
        let (a, b) = if rng.next_f64() < spec.homophily {
            // Intra-class: class drawn proportionally to its pair count.
            let cls = loop {
                let i = rng.below(n);
                let cl = labels[i];
                if connectable[i] && by_class[cl].len() >= 2 {
                    break cl;
                }
            };
            let members = &by_class[cls];
            let a = members[rng.below(members.len())];
            let b = members[rng.below(members.len())];
            (a, b)
        } else {
            let a = loop {
                let i = rng.below(n);
                if connectable[i] {
                    break i;
                }
            };
            let b = loop {
                let i = rng.below(n);
                if connectable[i] {
                    break i;
                }
            };
            (a, b)
        };
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            edges.push(key);
        }
    }
    if edges.len() < spec.edges {
        return Err(Error::Config(format!(
            "could not place {} distinct edges (got {})",
            spec.edges,
            edges.len()
        )));
    }
    edges.sort_unstable();

    // Planetoid-style split: first `train_per_class` of a per-class
    // shuffle, then val and test from the shuffled remainder. Splits draw
    // from all nodes, isolated ones included.
    let mut full_by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        full_by_class[l].push(i);
    }
    let mut masks = SplitMasks::none(n);
    let mut rest: Vec<usize> = Vec::new();
    for cls in 0..c {
        let mut members = full_by_class[cls].clone();
        rng.shuffle(&mut members);
        for (rank, &i) in members.iter().enumerate() {
            if rank < spec.train_per_class {
                masks.train[i] = true;
            } else {
                rest.push(i);
            }
        }
    }
    rng.shuffle(&mut rest);
    for (rank, &i) in rest.iter().enumerate() {
        if rank < spec.val {
            masks.val[i] = true;
        } else if rank < spec.val + spec.test {
            masks.test[i] = true;
        }
    }

    let bundle = DatasetBundle {
        features: feat.l2_normalize_rows(),
        labels,
        edges,
        masks,
        name: spec.name.clone(),
    };
    bundle.validate()?;
    Ok(bundle)
}

// ---------------------------------------------------------------------------
// Point-set dataset directory
// ---------------------------------------------------------------------------

/// Point-set collection with a train/test split.
#[derive(Debug, Clone)]
pub struct PointSetDataset {
    pub instances: Vec<PointSet>,
    pub train: Vec<bool>,
    pub test: Vec<bool>,
}

impl PointSetDataset {
    pub fn num_classes(&self) -> usize {
        self.instances
            .iter()
            .map(|p| p.label)
            .max()
            .map_or(0, |c| c + 1)
    }

    /// Deterministic split: for each class, the first `train_fraction` of
    /// its instances (in collection order) train, the rest test.
    pub fn from_collection(instances: Vec<PointSet>, train_fraction: f64) -> Self {
        let classes = instances
            .iter()
            .map(|p| p.label)
            .max()
            .map_or(0, |c| c + 1);
        let mut train = vec![false; instances.len()];
        let mut test = vec![false; instances.len()];
        for cls in 0..classes {
            let members: Vec<usize> = instances
                .iter()
                .enumerate()
                .filter(|(_, p)| p.label == cls)
                .map(|(i, _)| i)
                .collect();
            let cut = (members.len() as f64 * train_fraction).round() as usize;
            for (rank, &i) in members.iter().enumerate() {
                if rank < cut {
                    train[i] = true;
                } else {
                    test[i] = true;
                }
            }
        }
        PointSetDataset {
            instances,
            train,
            test,
        }
    }
}

/// Write a point-set collection: one `inst_<id>.tsv` per instance (x, y, z
/// per row) plus `labels.tsv` and `masks.tsv`.
pub fn save_pointsets(data: &PointSetDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut labels = String::new();
    let mut masks = String::new();
    for (i, inst) in data.instances.iter().enumerate() {
        let mut out = String::new();
        for r in 0..inst.points.rows() {
            let row = inst.points.row(r);
            writeln!(out, "{:.12e}\t{:.12e}\t{:.12e}", row[0], row[1], row[2]).unwrap();
        }
        std::fs::write(dir.join(format!("inst_{i:05}.tsv")), out)?;
        writeln!(labels, "{i}\t{}", inst.label).unwrap();
        let split = if data.train[i] { "train" } else { "test" };
        writeln!(masks, "{i}\t{split}").unwrap();
    }
    std::fs::write(dir.join("labels.tsv"), labels)?;
    std::fs::write(dir.join("masks.tsv"), masks)?;
    Ok(())
}

/// Load a directory written by [`save_pointsets`].
pub fn load_pointsets(dir: &Path) -> Result<PointSetDataset> {
    let lpath = dir.join("labels.tsv");
    let mut labels = Vec::new();
    for (lineno, line) in read_lines(&lpath)?.iter().enumerate() {
        let mut fields = line.split('\t');
        let id: usize = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| parse_err(&lpath, lineno + 1, format!("bad instance id: {e}")))?;
        let label: usize = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| parse_err(&lpath, lineno + 1, format!("bad label: {e}")))?;
        if id != labels.len() {
            return Err(parse_err(
                &lpath,
                lineno + 1,
                format!("instance ids must be dense and ordered, got {id}"),
            ));
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput(format!("{}", lpath.display())));
    }

    let mut instances = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        let ipath = dir.join(format!("inst_{i:05}.tsv"));
        let lines = read_lines(&ipath)?;
        let mut data = Vec::with_capacity(lines.len() * 3);
        for (lineno, line) in lines.iter().enumerate() {
            let vals: std::result::Result<Vec<f64>, _> =
                line.split('\t').map(|f| f.trim().parse::<f64>()).collect();
            let vals = vals
                .map_err(|e| parse_err(&ipath, lineno + 1, format!("bad coordinate: {e}")))?;
            if vals.len() != 3 {
                return Err(parse_err(
                    &ipath,
                    lineno + 1,
                    format!("expected 3 coordinates, found {}", vals.len()),
                ));
            }
            data.extend_from_slice(&vals);
        }
        let n = data.len() / 3;
        instances.push(PointSet {
            points: DenseMatrix::from_vec(n, 3, data)?,
            label,
        });
    }

    let mpath = dir.join("masks.tsv");
    let n = instances.len();
    let mut train = vec![false; n];
    let mut test = vec![false; n];
    for (lineno, line) in read_lines(&mpath)?.iter().enumerate() {
        let mut fields = line.split('\t');
        let id: usize = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| parse_err(&mpath, lineno + 1, format!("bad instance id: {e}")))?;
        if id >= n {
            return Err(Error::Index { id, n });
        }
        match fields.next().unwrap_or_default().trim() {
            "train" => train[id] = true,
            "test" => test[id] = true,
            other => {
                return Err(parse_err(
                    &mpath,
                    lineno + 1,
                    format!("unknown split {other:?}"),
                ))
            }
        }
    }
    Ok(PointSetDataset {
        instances,
        train,
        test,
    })
}
