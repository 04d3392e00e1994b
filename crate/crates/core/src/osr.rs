//! Open-set scoring: KNN cosine similarity against per-class exemplar
//! features, score normalization and thresholding, and the rank-statistic
//! AUROC used to evaluate outlier detection threshold-free.

use std::io::Write;

use thiserror::Error;

use crate::exemplar::ExemplarStore;
use crate::tensor::NORM_EPS;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OsrError {
    #[error("exemplar store has no classes")]
    EmptyStore,
    #[error("query or exemplar feature has near-zero norm")]
    DegenerateVector,
    #[error("no classes to score against")]
    NoClasses,
    #[error("decision threshold not configured")]
    MissingThreshold,
    #[error("both inlier and outlier scores are required")]
    EmptySide,
}

/// KNN scoring configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OsrConfig {
    /// Neighbor count per class.
    pub k_nn: usize,
    /// Optional decision threshold on the normalized score.
    pub threshold: Option<f64>,
}

impl Default for OsrConfig {
    fn default() -> Self {
        OsrConfig {
            k_nn: 10,
            threshold: None,
        }
    }
}

/// Score of one test sample.
#[derive(Debug, Clone)]
pub struct ScoreRecord {
    pub sample_id: usize,
    /// Mean of the top-K cosine similarities per class (class id, mean).
    pub class_sims: Vec<(usize, f64)>,
    /// Normalized maximum similarity in [0,1]; low means outlier-like.
    pub sc_osr: f64,
    /// Class attaining the maximum normalized similarity.
    pub predicted: usize,
    /// Ground truth inlier class, or `None` for outlier-session samples.
    pub truth: Option<usize>,
}

impl ScoreRecord {
    pub fn is_outlier_truth(&self) -> bool {
        self.truth.is_none()
    }
}

/// Unified decision for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Outlier,
    Inlier { class: usize },
}

/// Per-class mean of the top-`min(k, class size)` cosine similarities
/// between `z` and each class's cached exemplar features.
pub fn knn_class_similarity(
    z: &[f64],
    store: &ExemplarStore,
    k_nn: usize,
) -> Result<Vec<(usize, f64)>, OsrError> {
    if store.num_classes() == 0 {
        return Err(OsrError::EmptyStore);
    }
    let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if z_norm <= NORM_EPS {
        return Err(OsrError::DegenerateVector);
    }

    let mut out = Vec::with_capacity(store.num_classes());
    for class in store.classes() {
        let exemplars = store.class_exemplars(class).expect("listed class exists");
        let mut sims = Vec::with_capacity(exemplars.len());
        for e in exemplars {
            let e_norm = e.feature.iter().map(|v| v * v).sum::<f64>().sqrt();
            if e_norm <= NORM_EPS {
                return Err(OsrError::DegenerateVector);
            }
            let dot: f64 = z.iter().zip(&e.feature).map(|(a, b)| a * b).sum();
            sims.push(dot / (z_norm * e_norm));
        }
        // largest first; mean over the top-k in that order
        sims.sort_by(|a, b| b.partial_cmp(a).expect("finite similarities"));
        let k = k_nn.min(sims.len()).max(1);
        let mean = sims[..k].iter().sum::<f64>() / k as f64;
        out.push((class, mean));
    }
    Ok(out)
}

/// Normalize the per-class means (clamped at zero) across classes and take
/// the maximum: `sc_osr` plus the class attaining it. If every clamped mean
/// is zero the score degenerates to uniform `1/C` with the lowest class id.
pub fn osr_score(per_class_sims: &[(usize, f64)]) -> Result<(f64, usize), OsrError> {
    if per_class_sims.is_empty() {
        return Err(OsrError::NoClasses);
    }
    let clamped: Vec<f64> = per_class_sims.iter().map(|(_, s)| s.max(0.0)).collect();
    let sum: f64 = clamped.iter().sum();
    if sum <= NORM_EPS {
        return Ok((1.0 / per_class_sims.len() as f64, per_class_sims[0].0));
    }
    let mut best = (f64::NEG_INFINITY, per_class_sims[0].0);
    for ((class, _), c) in per_class_sims.iter().zip(&clamped) {
        let normalized = c / sum;
        if normalized > best.0 {
            best = (normalized, *class);
        }
    }
    Ok(best)
}

/// Threshold rule: outlier when `sc_osr < threshold` (strict); otherwise the
/// sample is an inlier and its class comes from the neural classifier's
/// logits, not from the KNN argmax.
pub fn classify_unified<F>(
    z: &[f64],
    store: &ExemplarStore,
    classifier_logits: F,
    cfg: &OsrConfig,
) -> Result<Decision, OsrError>
where
    F: FnOnce(&[f64]) -> Vec<(usize, f64)>,
{
    let threshold = cfg.threshold.ok_or(OsrError::MissingThreshold)?;
    let sims = knn_class_similarity(z, store, cfg.k_nn)?;
    let (sc, _) = osr_score(&sims)?;
    if sc < threshold {
        return Ok(Decision::Outlier);
    }
    let logits = classifier_logits(z);
    if logits.is_empty() {
        return Err(OsrError::NoClasses);
    }
    let class = logits
        .iter()
        .fold((f64::NEG_INFINITY, 0usize), |best, (c, l)| {
            if *l > best.0 {
                (*l, *c)
            } else {
                best
            }
        })
        .1;
    Ok(Decision::Inlier { class })
}

/// AUROC as the Mann–Whitney statistic: the probability that a random
/// outlier scores below a random inlier, ties counted half. Computed from
/// average ranks, which equals the trapezoidal area under the full-sweep
/// ROC curve exactly.
pub fn auroc(inlier_scores: &[f64], outlier_scores: &[f64]) -> Result<f64, OsrError> {
    if inlier_scores.is_empty() || outlier_scores.is_empty() {
        return Err(OsrError::EmptySide);
    }
    let n_in = inlier_scores.len();
    let n_out = outlier_scores.len();

    let mut all: Vec<(f64, bool)> = inlier_scores
        .iter()
        .map(|&s| (s, true))
        .chain(outlier_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    // average ranks over tie groups (1-based)
    let mut rank_sum_in = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_in += avg_rank;
            }
        }
        i = j;
    }

    let u_in = rank_sum_in - (n_in * (n_in + 1)) as f64 / 2.0;
    Ok(u_in / (n_in as f64 * n_out as f64))
}

/// Score dump: `sample_id, truth (class id or "outlier"), sc_osr, predicted`.
pub fn write_scores_csv(
    records: &[ScoreRecord],
    w: &mut impl Write,
    fingerprint: u64,
) -> std::io::Result<()> {
    writeln!(w, "# dataset {fingerprint:016x}")?;
    writeln!(w, "sample_id,truth,sc_osr,predicted")?;
    for r in records {
        match r.truth {
            Some(c) => writeln!(w, "{},{},{},{}", r.sample_id, c, r.sc_osr, r.predicted)?,
            None => writeln!(w, "{},outlier,{},{}", r.sample_id, r.sc_osr, r.predicted)?,
        }
    }
    Ok(())
}
