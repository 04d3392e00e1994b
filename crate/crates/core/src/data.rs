//! Synthetic Gaussian-blob datasets, CSV ingestion, and the class-per-session
//! split protocol with a trailing outlier-only session.

use std::fmt::Write as _;
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("{inliers} inlier classes not divisible into sessions of {per_session}")]
    IndivisibleSplit { inliers: usize, per_session: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Spec for a seeded blob dataset: class centers drawn uniformly on a sphere
/// of radius `center_radius`, samples = center + isotropic N(0, sigma²).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub center_radius: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            num_classes: 10,
            samples_per_class: 200,
            input_dim: 20,
            center_radius: 10.0,
            sigma: 1.0,
            seed: 0,
        }
    }
}

/// Immutable labeled dataset with a per-row train/test tag.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub is_train: Vec<bool>,
    pub num_classes: usize,
    /// Hash of the generating spec or source file plus seed; stamped into
    /// every emitted results file.
    pub fingerprint: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Row indices for the requested classes and split.
    pub fn rows_of(&self, classes: &[usize], train: bool) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.is_train[i] == train && classes.contains(&self.labels[i]))
            .collect()
    }

    /// Gather an input matrix and label vector for the given rows.
    pub fn batch(&self, rows: &[usize]) -> (Tensor, Vec<usize>) {
        let x = self.inputs.gather_rows(rows).expect("row indices in range");
        let y = rows.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }
}

/// Ordered class-to-session assignment; the final session holds classes that
/// are never trained on and act as outliers at evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionPlan {
    pub sessions: Vec<Vec<usize>>,
    pub outlier_session: usize,
}

impl SessionPlan {
    pub fn outlier_classes(&self) -> &[usize] {
        &self.sessions[self.outlier_session]
    }

    pub fn inlier_sessions(&self) -> &[Vec<usize>] {
        &self.sessions[..self.outlier_session]
    }
}

/// FNV-1a over a canonical description string.
fn fingerprint_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Standard normal draw via Box-Muller from the uniform stream.
fn gaussian(rng: &mut StdRng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generate a seeded blob dataset with an 80/20 per-class train/test split.
pub fn generate_blobs(spec: &BlobSpec) -> Result<Dataset, DataError> {
    if spec.num_classes < 2 {
        return Err(DataError::InvalidSpec(format!(
            "num_classes {} must be at least 2",
            spec.num_classes
        )));
    }
    if spec.sigma <= 0.0 {
        return Err(DataError::InvalidSpec(format!(
            "sigma {} must be positive",
            spec.sigma
        )));
    }
    if spec.samples_per_class < 2 || spec.input_dim == 0 {
        return Err(DataError::InvalidSpec(
            "need >=2 samples per class and input_dim >=1".into(),
        ));
    }

    let mut rng = StdRng::seed_from_u64(spec.seed);
    let d = spec.input_dim;

    let mut centers = Vec::with_capacity(spec.num_classes);
    for _ in 0..spec.num_classes {
        let raw: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
        let norm = raw
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        centers.push(
            raw.into_iter()
                .map(|v| v / norm * spec.center_radius)
                .collect::<Vec<_>>(),
        );
    }

    let n = spec.num_classes * spec.samples_per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            for j in 0..d {
                data.push(center[j] + spec.sigma * gaussian(&mut rng));
            }
            labels.push(c);
        }
    }

    // per-class 80/20 split, seeded
    let mut is_train = vec![false; n];
    let train_per_class = (spec.samples_per_class * 4) / 5;
    for c in 0..spec.num_classes {
        let mut idx: Vec<usize> =
            (c * spec.samples_per_class..(c + 1) * spec.samples_per_class).collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(train_per_class) {
            is_train[i] = true;
        }
    }

    let mut canon = String::new();
    let _ = write!(
        canon,
        "blobs;nc={};spc={};d={};r={};sigma={};seed={}",
        spec.num_classes, spec.samples_per_class, d, spec.center_radius, spec.sigma, spec.seed
    );

    Ok(Dataset {
        inputs: Tensor::matrix(n, d, data),
        labels,
        is_train,
        num_classes: spec.num_classes,
        fingerprint: fingerprint_str(&canon),
    })
}

/// Load a dataset from a `label, f0, f1, …` CSV. Labels are re-indexed
/// densely in first-appearance order; the mapping dense-id → original label
/// is returned alongside. Rows are split 80/20 per class deterministically
/// (every fifth occurrence of a class goes to the test split).
pub fn load_csv(path: &Path) -> Result<(Dataset, Vec<i64>), DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| DataError::MissingColumn("label".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") {
        return Err(DataError::MissingColumn("label".into()));
    }
    let dim = cols.len() - 1;
    if dim == 0 {
        return Err(DataError::MissingColumn("f0".into()));
    }

    let mut label_map: Vec<i64> = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (lineno0, line) in lines {
        let line_no = lineno0 + 1; // 1-based, header included
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != dim + 1 {
            return Err(DataError::ParseError {
                line: line_no,
                msg: format!("expected {} cells, got {}", dim + 1, cells.len()),
            });
        }
        let raw_label: i64 = cells[0].parse().map_err(|_| DataError::ParseError {
            line: line_no,
            msg: format!("label {:?} is not an integer", cells[0]),
        })?;
        let dense = match label_map.iter().position(|&l| l == raw_label) {
            Some(i) => i,
            None => {
                label_map.push(raw_label);
                label_map.len() - 1
            }
        };
        labels.push(dense);
        for cell in &cells[1..] {
            let v: f64 = cell.parse().map_err(|_| DataError::ParseError {
                line: line_no,
                msg: format!("cell {cell:?} is not numeric"),
            })?;
            data.push(v);
        }
    }

    let n = labels.len();
    let num_classes = label_map.len();

    // deterministic stratified split: every fifth row of a class is test;
    // small classes still surrender their last row so both splits are covered
    let mut seen = vec![0usize; num_classes];
    let mut is_train = vec![true; n];
    for i in 0..n {
        let c = labels[i];
        if seen[c] % 5 == 4 {
            is_train[i] = false;
        }
        seen[c] += 1;
    }
    let mut has_test = vec![false; num_classes];
    for i in 0..n {
        if !is_train[i] {
            has_test[labels[i]] = true;
        }
    }
    for c in 0..num_classes {
        if !has_test[c] && seen[c] >= 2 {
            let last = (0..n)
                .rev()
                .find(|&i| labels[i] == c)
                .expect("class has rows");
            is_train[last] = false;
        }
    }

    let fp = fingerprint_str(&format!("csv;path={};bytes={}", path.display(), text.len()));
    Ok((
        Dataset {
            inputs: Tensor::matrix(n, dim, data),
            labels,
            is_train,
            num_classes,
            fingerprint: fp,
        },
        label_map,
    ))
}

/// Shuffle classes by seed, partition the inliers into equal sessions, and
/// assign the remaining classes to a final outlier-only session.
pub fn plan_sessions(
    num_classes: usize,
    classes_per_session: usize,
    num_outlier_classes: usize,
    seed: u64,
) -> Result<SessionPlan, DataError> {
    if num_outlier_classes == 0 || num_outlier_classes >= num_classes {
        return Err(DataError::InvalidSpec(format!(
            "num_outlier_classes {num_outlier_classes} must be in [1, {num_classes})"
        )));
    }
    if classes_per_session == 0 {
        return Err(DataError::InvalidSpec(
            "classes_per_session must be positive".into(),
        ));
    }
    let inliers = num_classes - num_outlier_classes;
    if inliers % classes_per_session != 0 {
        return Err(DataError::IndivisibleSplit {
            inliers,
            per_session: classes_per_session,
        });
    }

    let mut classes: Vec<usize> = (0..num_classes).collect();
    let mut rng = StdRng::seed_from_u64(seed);
    classes.shuffle(&mut rng);

    let mut sessions: Vec<Vec<usize>> = classes[..inliers]
        .chunks(classes_per_session)
        .map(<[usize]>::to_vec)
        .collect();
    sessions.push(classes[inliers..].to_vec());
    let outlier_session = sessions.len() - 1;
    Ok(SessionPlan {
        sessions,
        outlier_session,
    })
}

/// Accuracy of a nearest-class-center classifier on raw inputs over the test
/// split; the separability yardstick used by the training-floor checks.
pub fn nearest_center_accuracy(dataset: &Dataset) -> f64 {
    let d = dataset.input_dim();
    let mut centers = vec![vec![0.0; d]; dataset.num_classes];
    let mut counts = vec![0usize; dataset.num_classes];
    for i in 0..dataset.len() {
        if dataset.is_train[i] {
            let c = dataset.labels[i];
            counts[c] += 1;
            for j in 0..d {
                centers[c][j] += dataset.inputs.get(i, j);
            }
        }
    }
    for c in 0..dataset.num_classes {
        for j in 0..d {
            centers[c][j] /= counts[c].max(1) as f64;
        }
    }

    let mut correct = 0usize;
    let mut total = 0usize;
    for i in 0..dataset.len() {
        if dataset.is_train[i] {
            continue;
        }
        total += 1;
        let row = dataset.inputs.row(i);
        let mut best = (f64::INFINITY, 0usize);
        for (c, center) in centers.iter().enumerate() {
            let dist: f64 = row.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.0 {
                best = (dist, c);
            }
        }
        if best.1 == dataset.labels[i] {
            correct += 1;
        }
    }
    correct as f64 / total.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn blobs_are_deterministic_per_seed() {
        let spec = BlobSpec {
            num_classes: 3,
            samples_per_class: 10,
            ..Default::default()
        };
        let a = generate_blobs(&spec).unwrap();
        let b = generate_blobs(&spec).unwrap();
        assert_eq!(a.inputs.data(), b.inputs.data());
        assert_eq!(a.is_train, b.is_train);
        assert_eq!(a.fingerprint, b.fingerprint);

        let other = generate_blobs(&BlobSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.inputs.data(), other.inputs.data());
    }

    #[test]
    fn blob_counts_and_split_sizes() {
        let spec = BlobSpec {
            num_classes: 10,
            samples_per_class: 100,
            ..Default::default()
        };
        let ds = generate_blobs(&spec).unwrap();
        assert_eq!(ds.len(), 1000);
        assert_eq!(ds.is_train.iter().filter(|t| **t).count(), 800);
        // stratified: every class in both splits
        for c in 0..10 {
            assert_eq!(ds.rows_of(&[c], true).len(), 80);
            assert_eq!(ds.rows_of(&[c], false).len(), 20);
        }
    }

    #[test]
    fn vanishing_sigma_collapses_samples_onto_centers() {
        let spec = BlobSpec {
            num_classes: 3,
            samples_per_class: 20,
            sigma: 1e-15,
            ..Default::default()
        };
        let ds = generate_blobs(&spec).unwrap();
        // all rows of one class agree to within noise scale
        let rows = ds.rows_of(&[0], true);
        let first = ds.inputs.row(rows[0]).to_vec();
        for &r in &rows[1..] {
            for (a, b) in ds.inputs.row(r).iter().zip(&first) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn blob_spec_validation() {
        assert!(generate_blobs(&BlobSpec {
            sigma: 0.0,
            ..Default::default()
        })
        .is_err());
        assert!(generate_blobs(&BlobSpec {
            num_classes: 1,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn default_blobs_are_nearest_center_separable() {
        // empirical separability bound backing the training-accuracy floors
        let ds = generate_blobs(&BlobSpec::default()).unwrap();
        assert!(nearest_center_accuracy(&ds) > 0.99);
    }

    #[test]
    fn csv_roundtrip_and_label_remap() {
        let dir = std::env::temp_dir().join(format!("openinc_csv_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tiny.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "label, f0, f1").unwrap();
        writeln!(f, "5, 1.0, 2.0").unwrap();
        writeln!(f, "9, 3.0, 4.0").unwrap();
        writeln!(f, "5, 5.0, 6.0").unwrap();
        drop(f);

        let (ds, map) = load_csv(&path).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(map, vec![5, 9]);
        assert_eq!(ds.inputs.row(2), &[5.0, 6.0]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_parse_error_reports_line() {
        let dir = std::env::temp_dir().join(format!("openinc_csv_bad_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "label, f0").unwrap();
        for i in 0..5 {
            writeln!(f, "0, {i}.5").unwrap();
        }
        writeln!(f, "0, not_a_number").unwrap(); // physical line 7
        drop(f);

        match load_csv(&path) {
            Err(DataError::ParseError { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected ParseError, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_requires_label_header() {
        let dir = std::env::temp_dir().join(format!("openinc_csv_hd_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("hd.csv");
        std::fs::write(&path, "x, f0\n0, 1.0\n").unwrap();
        assert!(matches!(load_csv(&path), Err(DataError::MissingColumn(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn plan_partitions_classes() {
        let plan = plan_sessions(10, 2, 2, 42).unwrap();
        assert_eq!(plan.sessions.len(), 5);
        assert_eq!(plan.outlier_session, 4);
        assert_eq!(plan.outlier_classes().len(), 2);
        for s in plan.inlier_sessions() {
            assert_eq!(s.len(), 2);
        }
        // disjoint and exhaustive
        let mut all: Vec<usize> = plan.sessions.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn plan_rejects_indivisible_split() {
        assert!(matches!(
            plan_sessions(8, 3, 1, 0),
            Err(DataError::IndivisibleSplit {
                inliers: 7,
                per_session: 3
            })
        ));
        assert!(plan_sessions(8, 2, 0, 0).is_err());
    }

    #[test]
    fn plan_is_seeded() {
        assert_eq!(
            plan_sessions(10, 2, 2, 7).unwrap(),
            plan_sessions(10, 2, 2, 7).unwrap()
        );
        assert_ne!(
            plan_sessions(10, 2, 2, 7).unwrap(),
            plan_sessions(10, 2, 2, 8).unwrap()
        );
    }
}
