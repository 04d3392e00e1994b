//! Session orchestration: base-session training, incremental sessions with
//! teacher snapshots and the balanced objective, exemplar memory updates,
//! classifier retraining on exemplars, per-session evaluation, and the joint
//! (offline) baselines.
//!
//! The protocol per incremental session: snapshot the teacher, widen the
//! classifier for the new classes, train the representation for `epochs_incremental`
//! epochs on minibatches that mix session data with stored exemplars, then
//! update memory, refresh exemplar features, retrain the classifier on the
//! exemplars alone, and evaluate on the test split.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use thiserror::Error;

use crate::data::{DataError, Dataset, SessionPlan};
use crate::exemplar::{ClassData, ExemplarError, ExemplarStore};
use crate::losses::{
    ce_loss, distill_loss, response_kd_loss, supcon_loss, total_loss, LossConfig, LossError,
};
use crate::metrics::{spread_report, MetricsError};
use crate::model::{save_snapshot, Mlp, ModelError, ModelState, TrackedMlp};
use crate::osr::{
    auroc, knn_class_similarity, osr_score, write_scores_csv, OsrConfig, OsrError, ScoreRecord,
};
use crate::tape::{Gradients, Tape};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("session {session}: {source}")]
    Session {
        session: usize,
        #[source]
        source: Box<RunnerError>,
    },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Exemplar(#[from] ExemplarError),
    #[error(transparent)]
    Osr(#[from] OsrError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Training regime: the main method, its distillation ablations, and the
/// joint (offline) baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Supervised contrastive representation with relational distillation.
    SupconRkd,
    /// Cross-entropy with response (logit) distillation.
    CeReskd,
    /// Cross-entropy with relational distillation.
    CeRkd,
    /// Supervised contrastive representation trained jointly on all inliers.
    SupconJoint,
    /// Cross-entropy trained jointly on all inliers.
    CeJoint,
}

impl Method {
    pub fn is_joint(self) -> bool {
        matches!(self, Method::SupconJoint | Method::CeJoint)
    }

    pub fn uses_supcon(self) -> bool {
        matches!(self, Method::SupconRkd | Method::SupconJoint)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::SupconRkd => "supcon_rkd",
            Method::CeReskd => "ce_reskd",
            Method::CeRkd => "ce_rkd",
            Method::SupconJoint => "supcon_joint",
            Method::CeJoint => "ce_joint",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "supcon_rkd" => Ok(Method::SupconRkd),
            "ce_reskd" => Ok(Method::CeReskd),
            "ce_rkd" => Ok(Method::CeRkd),
            "supcon_joint" => Ok(Method::SupconJoint),
            "ce_joint" => Ok(Method::CeJoint),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

/// Full configuration of one run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    pub method: Method,
    /// Epochs for the base (or joint) training phase.
    pub epochs_base: usize,
    /// Epochs per incremental session.
    pub epochs_incremental: usize,
    /// Adam learning rate for the backbone.
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Total rehearsal memory size.
    pub memory: usize,
    pub loss: LossConfig,
    pub osr: OsrConfig,
    /// SGD settings for the exemplar-trained classifier.
    pub classifier_lr: f64,
    pub classifier_epochs: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub proj_dim: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::SupconRkd,
            epochs_base: 100,
            epochs_incremental: 200,
            learning_rate: 1e-3,
            batch_size: 32,
            memory: 40,
            loss: LossConfig::default(),
            osr: OsrConfig::default(),
            classifier_lr: 0.1,
            classifier_epochs: 500,
            hidden_dims: vec![64, 64],
            feature_dim: 16,
            proj_dim: 8,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunnerError> {
        self.loss.validate().map_err(RunnerError::Loss)?;
        if self.batch_size < 2 {
            return Err(RunnerError::Config("batch_size must be at least 2".into()));
        }
        if self.osr.k_nn == 0 {
            return Err(RunnerError::Config("k_nn must be at least 1".into()));
        }
        if let Some(t) = self.osr.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(RunnerError::Config(format!("threshold {t} outside [0, 1]")));
            }
        }
        if self.learning_rate <= 0.0 || self.classifier_lr <= 0.0 {
            return Err(RunnerError::Config(
                "learning rates must be positive".into(),
            ));
        }
        if self.feature_dim == 0 || self.proj_dim == 0 {
            return Err(RunnerError::Config(
                "feature_dim and proj_dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-session record; metrics are computed on the test split only.
#[derive(Debug, Clone)]
pub struct SessionReport {
    pub session: usize,
    pub observed_classes: usize,
    pub accuracy: f64,
    /// Absent when no outlier rows were available.
    pub auroc: Option<f64>,
    pub s_intra: f64,
    pub s_inter: f64,
    pub r_s: f64,
    pub seconds: f64,
}

/// Everything a finished run leaves behind in memory.
pub struct RunOutput {
    pub reports: Vec<SessionReport>,
    pub state: ModelState,
    pub store: ExemplarStore,
}

// --- optimizers ---

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn begin_step(&mut self) {
        self.t += 1;
    }

    fn update(&mut self, slot: usize, param: &mut Tensor, grad: &Tensor) {
        while self.m.len() <= slot {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        if self.m[slot].is_empty() {
            self.m[slot] = vec![0.0; param.numel()];
            self.v[slot] = vec![0.0; param.numel()];
        }
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let data = param.data_mut();
        for ((p, g), (m, v)) in data
            .iter_mut()
            .zip(grad.data())
            .zip(self.m[slot].iter_mut().zip(self.v[slot].iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Apply one Adam update to every layer of `mlp` from the gradients of
    /// its tracked twin; returns the number of slots consumed.
    fn update_mlp(
        &mut self,
        slot0: usize,
        mlp: &mut Mlp,
        tracked: &TrackedMlp,
        grads: &Gradients,
    ) -> usize {
        let mut slot = slot0;
        for (layer, tlayer) in mlp.layers.iter_mut().zip(&tracked.layers) {
            if let Some(g) = grads.wrt(&tlayer.w) {
                self.update(slot, &mut layer.w, &g);
            }
            slot += 1;
            if let Some(g) = grads.wrt(&tlayer.b) {
                self.update(slot, &mut layer.b, &g);
            }
            slot += 1;
        }
        slot
    }
}

fn sgd_update_mlp(lr: f64, mlp: &mut Mlp, tracked: &TrackedMlp, grads: &Gradients) {
    for (layer, tlayer) in mlp.layers.iter_mut().zip(&tracked.layers) {
        if let Some(g) = grads.wrt(&tlayer.w) {
            for (p, gv) in layer.w.data_mut().iter_mut().zip(g.data()) {
                *p -= lr * gv;
            }
        }
        if let Some(g) = grads.wrt(&tlayer.b) {
            for (p, gv) in layer.b.data_mut().iter_mut().zip(g.data()) {
                *p -= lr * gv;
            }
        }
    }
}

// --- the session runner ---

struct Trainer<'a> {
    dataset: &'a Dataset,
    plan: &'a SessionPlan,
    cfg: &'a RunConfig,
    rng: StdRng,
    state: ModelState,
    store: ExemplarStore,
    /// Class ids in arrival order; classifier column j belongs to observed[j].
    observed: Vec<usize>,
}

impl<'a> Trainer<'a> {
    fn new(dataset: &'a Dataset, plan: &'a SessionPlan, cfg: &'a RunConfig) -> Trainer<'a> {
        let mut rng = StdRng::seed_from_u64(cfg.seed);
        let state = ModelState::init(
            dataset.input_dim(),
            &cfg.hidden_dims,
            cfg.feature_dim,
            cfg.proj_dim,
            &mut rng,
        );
        Trainer {
            dataset,
            plan,
            cfg,
            rng,
            state,
            store: ExemplarStore::new(cfg.memory),
            observed: Vec::new(),
        }
    }

    fn observed_index(&self, class: usize) -> usize {
        self.observed
            .iter()
            .position(|&c| c == class)
            .expect("class was observed")
    }

    /// One full session: train the representation, update memory, retrain
    /// the classifier, evaluate.
    fn run_session(
        &mut self,
        session_idx: usize,
        classes: &[usize],
        epochs: usize,
    ) -> Result<(SessionReport, Vec<ScoreRecord>), RunnerError> {
        let start = Instant::now();
        let is_base = self.observed.is_empty();

        if !is_base {
            self.state.snapshot_teacher();
        }
        self.observed.extend_from_slice(classes);
        self.state.expand_classifier(classes.len(), &mut self.rng)?;

        self.representation_phase(classes, epochs, is_base)?;
        self.update_memory_for(classes)?;
        self.store.refresh_features(&self.state)?;
        self.retrain_classifier()?;

        let (mut report, records) = self.evaluate(session_idx)?;
        report.seconds = start.elapsed().as_secs_f64();
        Ok((report, records))
    }

    fn representation_phase(
        &mut self,
        classes: &[usize],
        epochs: usize,
        is_base: bool,
    ) -> Result<(), RunnerError> {
        let train_rows = self.dataset.rows_of(classes, true);
        if train_rows.is_empty() {
            return Err(RunnerError::Config(format!(
                "no training rows for classes {classes:?}"
            )));
        }

        // exemplar side of every minibatch; fixed for the whole session
        let exemplars = self.store.flattened();
        let exem_inputs: Vec<Vec<f64>> = exemplars.iter().map(|(_, e)| e.input.clone()).collect();
        let exem_labels: Vec<usize> = exemplars.iter().map(|(c, _)| *c).collect();
        let use_distill = !is_base && self.state.teacher.is_some() && !exemplars.is_empty();

        let mut adam = Adam::new(self.cfg.learning_rate);
        let supcon = self.cfg.method.uses_supcon();

        let mut order = train_rows;
        for _ in 0..epochs {
            order.shuffle(&mut self.rng);
            for chunk_start in (0..order.len()).step_by(self.cfg.batch_size) {
                let chunk =
                    &order[chunk_start..(chunk_start + self.cfg.batch_size).min(order.len())];
                if chunk.len() < 2 {
                    continue;
                }
                self.train_step(
                    chunk,
                    &exem_inputs,
                    &exem_labels,
                    use_distill,
                    supcon,
                    &mut adam,
                )?;
            }
        }
        Ok(())
    }

    fn train_step(
        &mut self,
        chunk: &[usize],
        exem_inputs: &[Vec<f64>],
        exem_labels: &[usize],
        use_distill: bool,
        supcon: bool,
        adam: &mut Adam,
    ) -> Result<(), RunnerError> {
        let (cur_x, cur_labels) = self.dataset.batch(chunk);

        // exemplar sub-batch: all of memory when it fits, otherwise a seeded
        // subsample of half a batch
        let exem_pick: Vec<usize> = if exem_inputs.is_empty() {
            Vec::new()
        } else if exem_inputs.len() <= self.cfg.batch_size {
            (0..exem_inputs.len()).collect()
        } else {
            let take = (self.cfg.batch_size / 2).max(3).min(exem_inputs.len());
            let mut picks = sample(&mut self.rng, exem_inputs.len(), take).into_vec();
            picks.sort_unstable();
            picks
        };

        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(chunk.len() + exem_pick.len());
        let mut labels = cur_labels;
        for r in 0..cur_x.rows() {
            rows.push(cur_x.row(r).to_vec());
        }
        for &i in &exem_pick {
            rows.push(exem_inputs[i].clone());
            labels.push(exem_labels[i]);
        }
        let combined_x = Tensor::from_rows(&rows);
        let exem_positions: Vec<usize> = (chunk.len()..rows.len()).collect();

        let mut tape = Tape::new();
        let enc = self.state.encoder.track(&mut tape);
        let z = enc.forward(&mut tape, &combined_x)?;

        if supcon {
            let head = self.state.head.track(&mut tape);
            let raw = head.forward(&mut tape, &z)?;
            let proj = tape.l2_normalize(&raw)?;
            let loss = supcon_loss(&mut tape, &proj, &labels, self.cfg.loss.tau)?;
            let total = self.build_objective(
                &mut tape,
                &z,
                &combined_x,
                &exem_positions,
                loss.value,
                use_distill,
            )?;
            let grads = tape.backward(&total)?;
            adam.begin_step();
            let next = adam.update_mlp(0, &mut self.state.encoder, &enc, &grads);
            adam.update_mlp(next, &mut self.state.head, &head, &grads);
        } else {
            let clf = self.state.classifier.track(&mut tape);
            let logits = clf.forward(&mut tape, &z)?;
            let obs_labels: Vec<usize> = labels.iter().map(|&c| self.observed_index(c)).collect();
            let ce = ce_loss(&mut tape, &logits, &obs_labels)?;

            let total = if use_distill && self.cfg.method == Method::CeReskd {
                let teacher = self.state.teacher.as_ref().expect("teacher set");
                let t_feats = teacher.encode(&combined_x)?;
                let t_logits = teacher.classify(&t_feats)?;
                // compare on the teacher's (old) classes only
                let c_now = self.state.num_classes();
                let c_old = teacher.num_classes();
                let mut sel = vec![0.0; c_now * c_old];
                for j in 0..c_old {
                    sel[j * c_old + j] = 1.0;
                }
                let sel = Tensor::matrix(c_now, c_old, sel);
                let sliced = tape.matmul(&logits, &sel)?;
                let kd =
                    response_kd_loss(&mut tape, &sliced, &t_logits, self.cfg.loss.kd_temperature)?;
                total_loss(&mut tape, &ce, &kd, self.cfg.loss.alpha)?
            } else {
                let rkd = use_distill && self.cfg.method == Method::CeRkd;
                self.build_objective(&mut tape, &z, &combined_x, &exem_positions, ce, rkd)?
            };

            let grads = tape.backward(&total)?;
            adam.begin_step();
            adam.update_mlp(0, &mut self.state.encoder, &enc, &grads);
            sgd_update_mlp(
                self.cfg.classifier_lr,
                &mut self.state.classifier,
                &clf,
                &grads,
            );
        }
        Ok(())
    }

    /// Attach the relational-distillation term over the exemplar sub-batch
    /// when a teacher exists; otherwise the session trains on the pure task
    /// loss (the base session has nothing to distill from).
    fn build_objective(
        &mut self,
        tape: &mut Tape,
        z: &Tensor,
        combined_x: &Tensor,
        exem_positions: &[usize],
        task: Tensor,
        use_distill: bool,
    ) -> Result<Tensor, RunnerError> {
        if !use_distill || exem_positions.len() < 3 {
            return Ok(task);
        }
        let teacher = self.state.teacher.as_ref().expect("teacher set");
        let exem_x = combined_x.gather_rows(exem_positions)?;
        let t_feats = teacher.encode(&exem_x)?;
        let s_feats = tape.gather_rows(z, exem_positions)?;
        let distill = distill_loss(
            tape,
            &t_feats,
            &s_feats,
            self.cfg.loss.lambda_dis,
            &mut self.rng,
        )?;
        Ok(total_loss(
            tape,
            &task,
            &distill.value,
            self.cfg.loss.alpha,
        )?)
    }

    /// Select exemplars for the session's new classes from their freshly
    /// trained features.
    fn update_memory_for(&mut self, classes: &[usize]) -> Result<(), RunnerError> {
        let mut incoming = BTreeMap::new();
        for &class in classes {
            let rows = self.dataset.rows_of(&[class], true);
            let (inputs, _) = self.dataset.batch(&rows);
            let features = self.state.encode(&inputs)?;
            incoming.insert(
                class,
                ClassData {
                    inputs,
                    features,
                    source_rows: rows,
                },
            );
        }
        self.store.update_memory(&incoming, &mut self.rng)?;
        Ok(())
    }

    /// Train the classifier on the exemplar features alone (full-batch SGD),
    /// balancing old and new classes by construction.
    fn retrain_classifier(&mut self) -> Result<(), RunnerError> {
        let exemplars = self.store.flattened();
        if exemplars.is_empty() {
            return Ok(());
        }
        let feats: Vec<Vec<f64>> = exemplars.iter().map(|(_, e)| e.feature.clone()).collect();
        let labels: Vec<usize> = exemplars
            .iter()
            .map(|(c, _)| self.observed_index(*c))
            .collect();
        let x = Tensor::from_rows(&feats);

        for _ in 0..self.cfg.classifier_epochs {
            let mut tape = Tape::new();
            let clf = self.state.classifier.track(&mut tape);
            let logits = clf.forward(&mut tape, &x)?;
            let loss = ce_loss(&mut tape, &logits, &labels)?;
            let grads = tape.backward(&loss)?;
            sgd_update_mlp(
                self.cfg.classifier_lr,
                &mut self.state.classifier,
                &clf,
                &grads,
            );
        }
        Ok(())
    }

    /// Inlier accuracy via the classifier, spread metrics over encoder
    /// features, and KNN outlier scores against the exemplar memory.
    fn evaluate(
        &self,
        session_idx: usize,
    ) -> Result<(SessionReport, Vec<ScoreRecord>), RunnerError> {
        let inlier_rows = self.dataset.rows_of(&self.observed, false);
        if inlier_rows.is_empty() {
            return Err(RunnerError::Config(
                "no test rows for observed classes".into(),
            ));
        }
        let (x, truth) = self.dataset.batch(&inlier_rows);
        let feats = self.state.encode(&x)?;
        let logits = self.state.classify(&feats)?;

        let preds: Vec<usize> = (0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                let mut best = (f64::NEG_INFINITY, 0usize);
                for (j, &v) in row.iter().enumerate() {
                    if v > best.0 {
                        best = (v, j);
                    }
                }
                self.observed[best.1]
            })
            .collect();
        let accuracy = crate::metrics::incremental_accuracy(&preds, &truth)?;
        let spread = spread_report(&feats, &truth)?;

        let mut records = Vec::new();
        let mut inlier_scores = Vec::new();
        for (i, &row) in inlier_rows.iter().enumerate() {
            let sims = knn_class_similarity(feats.row(i), &self.store, self.cfg.osr.k_nn)?;
            let (sc, predicted) = osr_score(&sims)?;
            inlier_scores.push(sc);
            records.push(ScoreRecord {
                sample_id: row,
                class_sims: sims,
                sc_osr: sc,
                predicted,
                truth: Some(self.dataset.labels[row]),
            });
        }

        let outlier_rows = self.dataset.rows_of(self.plan.outlier_classes(), false);
        let mut outlier_scores = Vec::new();
        if !outlier_rows.is_empty() {
            let (ox, _) = self.dataset.batch(&outlier_rows);
            let ofeats = self.state.encode(&ox)?;
            for (i, &row) in outlier_rows.iter().enumerate() {
                let sims = knn_class_similarity(ofeats.row(i), &self.store, self.cfg.osr.k_nn)?;
                let (sc, predicted) = osr_score(&sims)?;
                outlier_scores.push(sc);
                records.push(ScoreRecord {
                    sample_id: row,
                    class_sims: sims,
                    sc_osr: sc,
                    predicted,
                    truth: None,
                });
            }
        }

        let auroc_value = if outlier_scores.is_empty() {
            None
        } else {
            Some(auroc(&inlier_scores, &outlier_scores)?)
        };

        Ok((
            SessionReport {
                session: session_idx,
                observed_classes: self.observed.len(),
                accuracy,
                auroc: auroc_value,
                s_intra: spread.s_intra,
                s_inter: spread.s_inter,
                r_s: spread.r_s,
                seconds: 0.0,
            },
            records,
        ))
    }
}

/// Run one configuration over the dataset and plan, writing per-session
/// artifacts (`scores_<t>.csv`, `exemplars_<t>.csv`, `model_<t>.json`) and a
/// final `results.csv` when `out_dir` is given.
pub fn run(
    dataset: &Dataset,
    plan: &SessionPlan,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<RunOutput, RunnerError> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }

    let mut trainer = Trainer::new(dataset, plan, cfg);
    let mut reports = Vec::new();

    let with_session = |session: usize| {
        move |e: RunnerError| RunnerError::Session {
            session,
            source: Box::new(e),
        }
    };

    if cfg.method.is_joint() {
        let all_inliers: Vec<usize> = plan.inlier_sessions().iter().flatten().copied().collect();
        // the joint reference trains for the same total representation
        // budget the incremental protocol would spend on this plan
        let epochs = cfg.epochs_base
            + plan.inlier_sessions().len().saturating_sub(1) * cfg.epochs_incremental;
        let (report, records) = trainer
            .run_session(0, &all_inliers, epochs)
            .map_err(with_session(0))?;
        if let Some(dir) = out_dir {
            write_session_artifacts(dir, 0, &trainer, &records).map_err(with_session(0))?;
        }
        reports.push(report);
    } else {
        for (t, classes) in plan.inlier_sessions().iter().enumerate() {
            let epochs = if t == 0 {
                cfg.epochs_base
            } else {
                cfg.epochs_incremental
            };
            let (report, records) = trainer
                .run_session(t, classes, epochs)
                .map_err(with_session(t))?;
            if let Some(dir) = out_dir {
                write_session_artifacts(dir, t, &trainer, &records).map_err(with_session(t))?;
            }
            reports.push(report);
        }
    }

    if let Some(dir) = out_dir {
        write_results_csv(&dir.join("results.csv"), &reports, dataset.fingerprint)?;
    }

    Ok(RunOutput {
        reports,
        state: trainer.state,
        store: trainer.store,
    })
}

fn write_session_artifacts(
    dir: &Path,
    session: usize,
    trainer: &Trainer,
    records: &[ScoreRecord],
) -> Result<(), RunnerError> {
    let mut scores = fs::File::create(dir.join(format!("scores_{session}.csv")))?;
    write_scores_csv(records, &mut scores, trainer.dataset.fingerprint)?;

    let mut exemplars = fs::File::create(dir.join(format!("exemplars_{session}.csv")))?;
    trainer
        .store
        .write_csv(&mut exemplars, trainer.dataset.fingerprint)?;

    save_snapshot(
        &trainer.state,
        trainer.cfg.seed,
        session,
        &dir.join(format!("model_{session}.json")),
    )?;
    Ok(())
}

/// `results.csv`: one row per session. The `seconds` column is wall time and
/// is the only field exempt from byte-level reproducibility.
pub fn write_results_csv(
    path: &Path,
    reports: &[SessionReport],
    fingerprint: u64,
) -> Result<(), RunnerError> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# dataset {fingerprint:016x}")?;
    writeln!(
        f,
        "session,classes,accuracy,auroc,s_intra,s_inter,r_s,seconds"
    )?;
    for r in reports {
        let auroc = r.auroc.map_or(String::new(), |a| a.to_string());
        writeln!(
            f,
            "{},{},{},{},{},{},{},{:.3}",
            r.session,
            r.observed_classes,
            r.accuracy,
            auroc,
            r.s_intra,
            r.s_inter,
            r.r_s,
            r.seconds
        )?;
    }
    Ok(())
}
