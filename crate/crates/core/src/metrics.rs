//! Feature-quality and accuracy metrics: intra spread (mean squared distance
//! to the own-class center), inter spread (minimum squared distance between
//! class centers), their ratio, and inlier classification accuracy.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("need at least two classes")]
    SingleClass,
    #[error("inter spread is zero")]
    ZeroInterSpread,
    #[error("{labels} labels for {rows} rows")]
    LabelCountMismatch { labels: usize, rows: usize },
}

/// Spread metrics over one feature matrix.
#[derive(Debug, Clone)]
pub struct SpreadReport {
    pub s_intra: f64,
    pub s_inter: f64,
    pub r_s: f64,
    pub class_centers: BTreeMap<usize, Vec<f64>>,
}

/// Euclidean centers per class.
pub fn class_centers(
    features: &Tensor,
    labels: &[usize],
) -> Result<BTreeMap<usize, Vec<f64>>, MetricsError> {
    let n = features.rows();
    if n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    if labels.len() != n {
        return Err(MetricsError::LabelCountMismatch {
            labels: labels.len(),
            rows: n,
        });
    }
    let d = features.cols();
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (r, &label) in labels.iter().enumerate() {
        let entry = sums.entry(label).or_insert_with(|| (vec![0.0; d], 0));
        entry.1 += 1;
        for (acc, v) in entry.0.iter_mut().zip(features.row(r)) {
            *acc += v;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(c, (mut sum, count))| {
            for v in sum.iter_mut() {
                *v /= count as f64;
            }
            (c, sum)
        })
        .collect())
}

/// `(1/N) Σ_i ‖μ_{c(i)} − z_i‖²` over all samples.
pub fn intra_spread(features: &Tensor, labels: &[usize]) -> Result<f64, MetricsError> {
    let centers = class_centers(features, labels)?;
    let n = features.rows();
    let mut total = 0.0;
    for (r, label) in labels.iter().enumerate() {
        let center = &centers[label];
        total += features
            .row(r)
            .iter()
            .zip(center)
            .map(|(z, m)| (m - z) * (m - z))
            .sum::<f64>();
    }
    Ok(total / n as f64)
}

/// Minimum over unordered center pairs of `‖μ_m − μ_n‖²`.
pub fn inter_spread(centers: &BTreeMap<usize, Vec<f64>>) -> Result<f64, MetricsError> {
    if centers.len() < 2 {
        return Err(MetricsError::SingleClass);
    }
    let list: Vec<&Vec<f64>> = centers.values().collect();
    let mut min = f64::INFINITY;
    for i in 0..list.len() {
        for j in (i + 1)..list.len() {
            let d: f64 = list[i]
                .iter()
                .zip(list[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < min {
                min = d;
            }
        }
    }
    Ok(min)
}

/// `s_intra / s_inter`; smaller means features suit distance-based
/// open-set recognition better.
pub fn rs_ratio(s_intra: f64, s_inter: f64) -> Result<f64, MetricsError> {
    if s_inter <= 0.0 {
        return Err(MetricsError::ZeroInterSpread);
    }
    Ok(s_intra / s_inter)
}

/// Convenience bundle of all three spread quantities.
pub fn spread_report(features: &Tensor, labels: &[usize]) -> Result<SpreadReport, MetricsError> {
    let class_centers = class_centers(features, labels)?;
    let s_intra = intra_spread(features, labels)?;
    let s_inter = inter_spread(&class_centers)?;
    let r_s = rs_ratio(s_intra, s_inter)?;
    Ok(SpreadReport {
        s_intra,
        s_inter,
        r_s,
        class_centers,
    })
}

/// Correct count over total count on inlier predictions.
pub fn incremental_accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if predictions.len() != truths.len() {
        return Err(MetricsError::LabelCountMismatch {
            labels: truths.len(),
            rows: predictions.len(),
        });
    }
    let correct = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p == t)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn intra_zero_when_features_sit_on_centers() {
        let f = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]]);
        let s = intra_spread(&f, &[0, 0, 1]).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn intra_hand_value() {
        // one class with features (0,0) and (2,0): center (1,0), (1+1)/2 = 1
        let f = Tensor::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]);
        let s = intra_spread(&f, &[0, 0]).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn intra_is_quadratic_in_scale() {
        let f = Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]]);
        let labels = [0, 0, 0];
        let base = intra_spread(&f, &labels).unwrap();
        let doubled = intra_spread(&f.scale(2.0), &labels).unwrap();
        assert!((doubled - 4.0 * base).abs() < 1e-12);
    }

    #[test]
    fn inter_hand_values_and_brute_force() {
        let mut centers = BTreeMap::new();
        centers.insert(0, vec![0.0, 0.0]);
        centers.insert(1, vec![3.0, 4.0]);
        assert!((inter_spread(&centers).unwrap() - 25.0).abs() < 1e-12);

        centers.insert(2, vec![1.0, 0.0]);
        // pairs: 25, 1, 8 → min 1
        assert!((inter_spread(&centers).unwrap() - 1.0).abs() < 1e-12);

        let single: BTreeMap<usize, Vec<f64>> = [(0, vec![1.0])].into_iter().collect();
        assert!(matches!(
            inter_spread(&single),
            Err(MetricsError::SingleClass)
        ));
    }

    #[test]
    fn inter_matches_independent_min_loop() {
        let mut rng = StdRng::seed_from_u64(50);
        for _ in 0..20 {
            let k = rng.gen_range(2..50);
            let mut centers = BTreeMap::new();
            for c in 0..k {
                centers.insert(
                    c,
                    (0..4)
                        .map(|_| rng.gen_range(-5.0..5.0))
                        .collect::<Vec<f64>>(),
                );
            }
            let got = inter_spread(&centers).unwrap();

            let list: Vec<&Vec<f64>> = centers.values().collect();
            let mut expected = f64::INFINITY;
            for i in 0..list.len() {
                for j in 0..list.len() {
                    if i == j {
                        continue;
                    }
                    let d: f64 = list[i]
                        .iter()
                        .zip(list[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    expected = expected.min(d);
                }
            }
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn rs_ratio_values_and_guard() {
        assert_eq!(rs_ratio(0.0, 5.0).unwrap(), 0.0);
        assert!((rs_ratio(1.0, 25.0).unwrap() - 0.04).abs() < 1e-15);
        assert!(matches!(
            rs_ratio(1.0, 0.0),
            Err(MetricsError::ZeroInterSpread)
        ));
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(incremental_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        let preds: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let truths: Vec<usize> = (0..100).map(|_| 0).collect();
        assert_eq!(incremental_accuracy(&preds, &truths).unwrap(), 0.5);
        assert!(matches!(
            incremental_accuracy(&[], &[]),
            Err(MetricsError::EmptyInput)
        ));
    }

    #[test]
    fn accuracy_matches_direct_count_on_random_case() {
        let mut rng = StdRng::seed_from_u64(37);
        let preds: Vec<usize> = (0..37).map(|_| rng.gen_range(0..4)).collect();
        let truths: Vec<usize> = (0..37).map(|_| rng.gen_range(0..4)).collect();
        let mut count = 0;
        for i in 0..37 {
            if preds[i] == truths[i] {
                count += 1;
            }
        }
        let expected = count as f64 / 37.0;
        assert_eq!(incremental_accuracy(&preds, &truths).unwrap(), expected);
    }

    /// Gram-Schmidt orthonormalization of a random square matrix.
    fn random_rotation(d: usize, rng: &mut StdRng) -> Vec<Vec<f64>> {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
        while basis.len() < d {
            let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= proj * bi;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for vi in v.iter_mut() {
                    *vi /= norm;
                }
                basis.push(v);
            }
        }
        basis
    }

    fn apply_affine(f: &Tensor, rot: &[Vec<f64>], shift: &[f64], scale: f64) -> Tensor {
        let d = f.cols();
        let rows: Vec<Vec<f64>> = (0..f.rows())
            .map(|r| {
                (0..d)
                    .map(|j| {
                        let rotated: f64 = (0..d).map(|k| rot[j][k] * f.get(r, k)).sum();
                        scale * rotated + shift[j]
                    })
                    .collect()
            })
            .collect();
        Tensor::from_rows(&rows)
    }

    #[test]
    fn rs_invariant_under_rotation_translation_scaling() {
        let mut rng = StdRng::seed_from_u64(77);
        let d = 6;
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let f = Tensor::from_rows(&rows);
        let base = spread_report(&f, &labels).unwrap().r_s;

        for _ in 0..5 {
            let rot = random_rotation(d, &mut rng);
            let shift: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let scale = rng.gen_range(0.1..4.0);
            let g = apply_affine(&f, &rot, &shift, scale);
            let moved = spread_report(&g, &labels).unwrap().r_s;
            assert!((moved - base).abs() < 1e-9, "{moved} vs {base}");
        }
    }
}
