//! Rehearsal memory: isometric selection of new-class exemplars and seeded
//! random downsizing of old classes under a fixed total budget.
//!
//! Selection sorts one class's features by distance to the class center and
//! keeps ranks `0, s, 2s, …` for stride `s = floor(N/quota)`, truncated to
//! exactly `quota` items, so kept exemplars cover the whole radial range
//! instead of hugging the center.

use std::collections::BTreeMap;
use std::io::Write;

use rand::rngs::StdRng;
use rand::seq::index::sample;
use thiserror::Error;

use crate::model::ModelState;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ExemplarError {
    #[error("quota {quota} exceeds class size {size}")]
    QuotaExceedsClass { quota: usize, size: usize },
    #[error("class has no samples")]
    EmptyClass,
    #[error("memory {capacity} cannot hold {classes} classes")]
    MemoryTooSmall { capacity: usize, classes: usize },
    #[error("class {0} is already stored")]
    DuplicateClass(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One stored exemplar: the raw input row (re-encodable), its cached feature,
/// and where it came from.
#[derive(Debug, Clone)]
pub struct Exemplar {
    pub input: Vec<f64>,
    pub feature: Vec<f64>,
    /// Row index in the source dataset.
    pub source_row: usize,
    /// Distance rank within its class at selection time.
    pub distance_rank: usize,
}

/// Raw inputs and current features for one incoming class.
#[derive(Debug, Clone)]
pub struct ClassData {
    pub inputs: Tensor,
    pub features: Tensor,
    pub source_rows: Vec<usize>,
}

/// Fixed-capacity rehearsal memory keyed by class id.
#[derive(Debug, Clone)]
pub struct ExemplarStore {
    per_class: BTreeMap<usize, Vec<Exemplar>>,
    capacity: usize,
}

impl ExemplarStore {
    pub fn new(capacity: usize) -> Self {
        ExemplarStore {
            per_class: BTreeMap::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_class.keys().copied()
    }

    pub fn class_exemplars(&self, class: usize) -> Option<&[Exemplar]> {
        self.per_class.get(&class).map(Vec::as_slice)
    }

    /// All exemplars flattened in class-id order, with their class labels.
    pub fn flattened(&self) -> Vec<(usize, &Exemplar)> {
        self.per_class
            .iter()
            .flat_map(|(c, list)| list.iter().map(move |e| (*c, e)))
            .collect()
    }

    /// Downsize every stored class to `floor(capacity / new_total_classes)`
    /// items via a seeded uniform sample; stored order is preserved and
    /// classes already at or under quota are left untouched.
    pub fn shrink_old_classes(
        &mut self,
        new_total_classes: usize,
        rng: &mut StdRng,
    ) -> Result<(), ExemplarError> {
        let quota = self.capacity / new_total_classes.max(1);
        if quota == 0 {
            return Err(ExemplarError::MemoryTooSmall {
                capacity: self.capacity,
                classes: new_total_classes,
            });
        }
        for list in self.per_class.values_mut() {
            if list.len() > quota {
                let mut keep: Vec<usize> = sample(rng, list.len(), quota).into_vec();
                keep.sort_unstable();
                let mut kept = Vec::with_capacity(quota);
                for i in keep {
                    kept.push(list[i].clone());
                }
                *list = kept;
            }
        }
        Ok(())
    }

    /// Admit new classes: shrink the old ones to the updated quota, then
    /// select exemplars for each new class isometrically. The per-class quota
    /// is `floor(capacity / total_classes)`, clamped to the class size when a
    /// class is smaller than the quota.
    pub fn update_memory(
        &mut self,
        new_classes: &BTreeMap<usize, ClassData>,
        rng: &mut StdRng,
    ) -> Result<(), ExemplarError> {
        for class in new_classes.keys() {
            if self.per_class.contains_key(class) {
                return Err(ExemplarError::DuplicateClass(*class));
            }
        }
        let total = self.per_class.len() + new_classes.len();
        let quota = self.capacity / total.max(1);
        if quota == 0 {
            return Err(ExemplarError::MemoryTooSmall {
                capacity: self.capacity,
                classes: total,
            });
        }
        self.shrink_old_classes(total, rng)?;

        for (class, data) in new_classes {
            let n = data.features.rows();
            if n == 0 {
                return Err(ExemplarError::EmptyClass);
            }
            let picks = isometric_select(&data.features, quota.min(n))?;
            let list = picks
                .into_iter()
                .map(|(row, rank)| Exemplar {
                    input: data.inputs.row(row).to_vec(),
                    feature: data.features.row(row).to_vec(),
                    source_row: data.source_rows[row],
                    distance_rank: rank,
                })
                .collect();
            self.per_class.insert(*class, list);
        }
        Ok(())
    }

    /// Recompute every cached feature with the current encoder; raw inputs
    /// and selection metadata stay as they are.
    pub fn refresh_features(&mut self, state: &ModelState) -> Result<(), ExemplarError> {
        for list in self.per_class.values_mut() {
            if list.is_empty() {
                continue;
            }
            let inputs: Vec<Vec<f64>> = list.iter().map(|e| e.input.clone()).collect();
            let x = Tensor::from_rows(&inputs);
            let z = state.encode(&x)?;
            for (e, r) in list.iter_mut().zip(0..z.rows()) {
                e.feature = z.row(r).to_vec();
            }
        }
        Ok(())
    }

    /// Diagnostic dump: `class_id, exemplar_index, source_row_index, distance_rank`.
    pub fn write_csv(&self, w: &mut impl Write, fingerprint: u64) -> std::io::Result<()> {
        writeln!(w, "# dataset {fingerprint:016x}")?;
        writeln!(w, "class_id,exemplar_index,source_row_index,distance_rank")?;
        for (class, list) in &self.per_class {
            for (i, e) in list.iter().enumerate() {
                writeln!(w, "{class},{i},{},{}", e.source_row, e.distance_rank)?;
            }
        }
        Ok(())
    }
}

/// Pick `quota` rows of one class by isometric rank: distances to the class
/// center are sorted ascending (ties broken by original index order) and
/// ranks `0, s, 2s, …` are kept for `s = floor(N/quota)`. Returns
/// `(row, distance_rank)` pairs.
pub fn isometric_select(
    features: &Tensor,
    quota: usize,
) -> Result<Vec<(usize, usize)>, ExemplarError> {
    let n = features.rows();
    if n == 0 {
        return Err(ExemplarError::EmptyClass);
    }
    if quota == 0 || quota > n {
        return Err(ExemplarError::QuotaExceedsClass { quota, size: n });
    }
    let d = features.cols();

    let mut center = vec![0.0; d];
    for r in 0..n {
        for (c, v) in center.iter_mut().zip(features.row(r)) {
            *c += v;
        }
    }
    for c in center.iter_mut() {
        *c /= n as f64;
    }

    let mut by_distance: Vec<(usize, f64)> = (0..n)
        .map(|r| {
            let dist: f64 = features
                .row(r)
                .iter()
                .zip(&center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (r, dist.sqrt())
        })
        .collect();
    // stable: ties keep original index order
    by_distance.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distances"));

    let stride = n / quota;
    Ok((0..quota)
        .map(|i| (by_distance[i * stride].0, i * stride))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Build one class whose feature ranks are easy to read off: row i sits
    /// at distance proportional to i from the center once centered.
    fn ladder_class(n: usize, source_offset: usize) -> ClassData {
        // 1-D features 0, 1, 2, …: center is (n−1)/2; sorted distance ranks
        // interleave around the center, so compute ranks via the oracle below
        let feats: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 * i as f64]).collect();
        let inputs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, -(i as f64)]).collect();
        ClassData {
            inputs: Tensor::from_rows(&inputs),
            features: Tensor::from_rows(&feats),
            source_rows: (source_offset..source_offset + n).collect(),
        }
    }

    /// Brute-force oracle: recompute center, distances and the full ascending
    /// rank order independently of the implementation.
    fn rank_order(features: &Tensor) -> Vec<usize> {
        let n = features.rows();
        let d = features.cols();
        let mut center = vec![0.0; d];
        for r in 0..n {
            for j in 0..d {
                center[j] += features.get(r, j) / n as f64;
            }
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let dist = |r: usize| -> f64 {
            (0..d)
                .map(|j| (features.get(r, j) - center[j]).powi(2))
                .sum()
        };
        idx.sort_by(|&a, &b| dist(a).partial_cmp(&dist(b)).unwrap());
        idx
    }

    #[test]
    fn isometric_ranks_follow_stride() {
        // N=10, quota 5 → stride 2 → ranks {0,2,4,6,8}
        let class = ladder_class(10, 0);
        let picks = isometric_select(&class.features, 5).unwrap();
        let ranks: Vec<usize> = picks.iter().map(|p| p.1).collect();
        assert_eq!(ranks, vec![0, 2, 4, 6, 8]);

        let order = rank_order(&class.features);
        for (row, rank) in picks {
            assert_eq!(order[rank], row);
        }
    }

    #[test]
    fn isometric_full_and_single_selection() {
        let class = ladder_class(7, 0);
        let all = isometric_select(&class.features, 7).unwrap();
        let mut rows: Vec<usize> = all.iter().map(|p| p.0).collect();
        rows.sort_unstable();
        assert_eq!(rows, (0..7).collect::<Vec<_>>());

        let one = isometric_select(&class.features, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].1, 0);
        assert_eq!(one[0].0, rank_order(&class.features)[0]);
    }

    #[test]
    fn isometric_rejects_bad_quota() {
        let class = ladder_class(4, 0);
        assert!(matches!(
            isometric_select(&class.features, 5),
            Err(ExemplarError::QuotaExceedsClass { quota: 5, size: 4 })
        ));
        let empty = Tensor::matrix(0, 3, vec![]);
        assert!(matches!(
            isometric_select(&empty, 1),
            Err(ExemplarError::EmptyClass)
        ));
    }

    #[test]
    fn update_memory_assigns_equal_quotas() {
        // empty store, 2 new classes of 20 samples, capacity 8 → 4 per class
        let mut store = ExemplarStore::new(8);
        let mut incoming = BTreeMap::new();
        incoming.insert(0usize, ladder_class(20, 0));
        incoming.insert(1usize, ladder_class(20, 100));
        let mut rng = StdRng::seed_from_u64(5);
        store.update_memory(&incoming, &mut rng).unwrap();

        assert_eq!(store.total(), 8);
        for c in [0, 1] {
            let list = store.class_exemplars(c).unwrap();
            assert_eq!(list.len(), 4);
            // stride 20/4 = 5 → ranks {0,5,10,15}
            let ranks: Vec<usize> = list.iter().map(|e| e.distance_rank).collect();
            assert_eq!(ranks, vec![0, 5, 10, 15]);
        }
    }

    #[test]
    fn shrink_matches_hand_trace() {
        // 2 old classes × 5 items, capacity 10, 3 new classes incoming →
        // per-class quota floor(10/5) = 2
        let mut store = ExemplarStore::new(10);
        let mut incoming = BTreeMap::new();
        incoming.insert(0usize, ladder_class(5, 0));
        incoming.insert(1usize, ladder_class(5, 50));
        let mut rng = StdRng::seed_from_u64(2);
        store.update_memory(&incoming, &mut rng).unwrap();
        assert_eq!(store.class_exemplars(0).unwrap().len(), 5);

        store.shrink_old_classes(5, &mut rng).unwrap();
        for c in [0, 1] {
            let list = store.class_exemplars(c).unwrap();
            assert_eq!(list.len(), 2);
        }
    }

    #[test]
    fn shrink_without_new_classes_is_identity() {
        let mut store = ExemplarStore::new(10);
        let mut incoming = BTreeMap::new();
        incoming.insert(3usize, ladder_class(12, 0));
        incoming.insert(8usize, ladder_class(12, 40));
        let mut rng = StdRng::seed_from_u64(3);
        store.update_memory(&incoming, &mut rng).unwrap();
        let before: Vec<usize> = store
            .flattened()
            .iter()
            .map(|(_, e)| e.source_row)
            .collect();

        store.shrink_old_classes(2, &mut rng).unwrap();
        let after: Vec<usize> = store
            .flattened()
            .iter()
            .map(|(_, e)| e.source_row)
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn shrink_rejects_zero_quota() {
        let mut store = ExemplarStore::new(3);
        let mut rng = StdRng::seed_from_u64(0);
        assert!(matches!(
            store.shrink_old_classes(5, &mut rng),
            Err(ExemplarError::MemoryTooSmall {
                capacity: 3,
                classes: 5
            })
        ));
    }

    #[test]
    fn update_rejects_duplicate_class() {
        let mut store = ExemplarStore::new(10);
        let mut incoming = BTreeMap::new();
        incoming.insert(0usize, ladder_class(5, 0));
        let mut rng = StdRng::seed_from_u64(1);
        store.update_memory(&incoming, &mut rng).unwrap();
        assert!(matches!(
            store.update_memory(&incoming, &mut rng),
            Err(ExemplarError::DuplicateClass(0))
        ));
    }

    #[test]
    fn memory_bound_holds_over_successive_updates() {
        let mut store = ExemplarStore::new(12);
        let mut rng = StdRng::seed_from_u64(7);
        for step in 0..4 {
            let mut incoming = BTreeMap::new();
            incoming.insert(step * 2, ladder_class(15, step * 100));
            incoming.insert(step * 2 + 1, ladder_class(15, step * 100 + 50));
            store.update_memory(&incoming, &mut rng).unwrap();
            assert!(
                store.total() <= 12,
                "total {} at step {step}",
                store.total()
            );

            // per-class counts differ by at most one
            let counts: Vec<usize> = store
                .classes()
                .map(|c| store.class_exemplars(c).unwrap().len())
                .collect();
            let min = counts.iter().min().unwrap();
            let max = counts.iter().max().unwrap();
            assert!(max - min <= 1, "counts {counts:?}");
        }
        // old classes never grow
        assert!(store.class_exemplars(0).unwrap().len() <= 6);
    }

    #[test]
    fn selection_is_deterministic_per_seed() {
        let build = |seed: u64| {
            let mut store = ExemplarStore::new(6);
            let mut rng = StdRng::seed_from_u64(seed);
            let mut first = BTreeMap::new();
            first.insert(0usize, ladder_class(9, 0));
            store.update_memory(&first, &mut rng).unwrap();
            let mut second = BTreeMap::new();
            second.insert(1usize, ladder_class(9, 30));
            second.insert(2usize, ladder_class(9, 60));
            store.update_memory(&second, &mut rng).unwrap();
            store
                .flattened()
                .iter()
                .map(|(c, e)| (*c, e.source_row))
                .collect::<Vec<_>>()
        };
        assert_eq!(build(11), build(11));
    }

    #[test]
    fn refresh_features_matches_encode_and_is_idempotent() {
        use rand::Rng;
        let mut rng = StdRng::seed_from_u64(13);
        let mut state = crate::model::ModelState::init(2, &[6], 3, 2, &mut rng);
        state.expand_classifier(1, &mut rng).unwrap();

        let mut store = ExemplarStore::new(6);
        let mut incoming = BTreeMap::new();
        incoming.insert(0usize, ladder_class(8, 0));
        store.update_memory(&incoming, &mut rng).unwrap();

        store.refresh_features(&state).unwrap();
        for (_, e) in store.flattened() {
            let z = state
                .encode(&Tensor::from_rows(std::slice::from_ref(&e.input)))
                .unwrap();
            assert_eq!(e.feature.as_slice(), z.row(0));
        }

        let snapshot: Vec<Vec<f64>> = store
            .flattened()
            .iter()
            .map(|(_, e)| e.feature.clone())
            .collect();
        store.refresh_features(&state).unwrap();
        let again: Vec<Vec<f64>> = store
            .flattened()
            .iter()
            .map(|(_, e)| e.feature.clone())
            .collect();
        assert_eq!(snapshot, again);

        // new weights move the cached features
        for layer in state.encoder.layers.iter_mut() {
            let bumped: Vec<f64> = layer
                .w
                .data()
                .iter()
                .map(|v| v + rng.gen_range(0.1..0.2))
                .collect();
            layer.w = Tensor::new(layer.w.shape().to_vec(), bumped);
        }
        store.refresh_features(&state).unwrap();
        let moved: Vec<Vec<f64>> = store
            .flattened()
            .iter()
            .map(|(_, e)| e.feature.clone())
            .collect();
        assert_ne!(snapshot, moved);
    }

    #[test]
    fn csv_dump_schema() {
        let mut store = ExemplarStore::new(4);
        let mut incoming = BTreeMap::new();
        incoming.insert(2usize, ladder_class(6, 10));
        let mut rng = StdRng::seed_from_u64(21);
        store.update_memory(&incoming, &mut rng).unwrap();

        let mut buf = Vec::new();
        store.write_csv(&mut buf, 0xabcd).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# dataset"));
        assert_eq!(
            lines.next().unwrap(),
            "class_id,exemplar_index,source_row_index,distance_rank"
        );
        assert_eq!(lines.count(), 4);
    }
}
