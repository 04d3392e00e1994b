//! The MLP realization of the encoder/classifier stack: encoder E, the
//! projection head used by contrastive training, and the single
//! fully-connected inlier classifier, with frozen teacher snapshots.
//!
//! Layout convention: a layer stores `w: [in × out]` and `b: [1 × out]`, so a
//! forward pass is `x·w + 1·b` and never needs a transpose. Hidden layers are
//! followed by relu; the last layer of every stack stays linear.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::rngs::StdRng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tape::Tape;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("classifier expansion needs at least one new class")]
    InvalidCount,
    #[error("snapshot layer {0} missing or malformed")]
    MalformedSnapshot(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("snapshot json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
}

/// One fully-connected layer.
#[derive(Debug, Clone)]
pub struct Layer {
    pub w: Tensor,
    pub b: Tensor,
}

impl Layer {
    /// Symmetric uniform init with bound sqrt(6/(fan_in+fan_out)), biases 0.
    fn init(fan_in: usize, fan_out: usize, rng: &mut StdRng) -> Layer {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Layer {
            w: Tensor::matrix(fan_in, fan_out, w),
            b: Tensor::matrix(1, fan_out, vec![0.0; fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }
}

/// A stack of fully-connected layers with relu between them (not after the
/// last). A single-layer stack is a plain affine map.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    pub fn init(dims: &[usize], rng: &mut StdRng) -> Mlp {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|pair| Layer::init(pair[0], pair[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    /// Pure forward pass, no gradient tracking.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let mut h = x.detach();
        for (i, layer) in self.layers.iter().enumerate() {
            let affine = h.matmul(&layer.w)?;
            let rows = affine.rows();
            let ones = Tensor::matrix(rows, 1, vec![1.0; rows]);
            let bias = ones.matmul(&layer.b)?;
            h = affine.add(&bias)?;
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Register every parameter as a tracked leaf on `tape`.
    pub fn track(&self, tape: &mut Tape) -> TrackedMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                w: tape.leaf(&l.w),
                b: tape.leaf(&l.b),
            })
            .collect();
        TrackedMlp { layers }
    }
}

/// Tape-registered view of an [`Mlp`]; forwarding through it records every
/// op so gradients reach the parameters.
pub struct TrackedMlp {
    pub layers: Vec<Layer>,
}

impl TrackedMlp {
    /// Assemble from explicitly registered layers, for callers that need to
    /// mix tracked and constant parameters.
    pub fn from_layers(layers: Vec<Layer>) -> Self {
        TrackedMlp { layers }
    }
}

impl TrackedMlp {
    pub fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor, TensorError> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let affine = tape.matmul(&h, &layer.w)?;
            let rows = affine.rows();
            // bias broadcast as ones·b keeps the op set closed; its matmul
            // vjp yields the column-sum bias gradient
            let ones = Tensor::matrix(rows, 1, vec![1.0; rows]);
            let bias = tape.matmul(&ones, &layer.b)?;
            h = tape.add(&affine, &bias)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(&h);
            }
        }
        Ok(h)
    }
}

/// Frozen pre-session copy used as the distillation teacher.
#[derive(Debug, Clone)]
pub struct Teacher {
    pub encoder: Mlp,
    pub head: Mlp,
    pub classifier: Mlp,
}

impl Teacher {
    pub fn encode(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        self.encoder.forward(x)
    }

    pub fn classify(&self, z: &Tensor) -> Result<Tensor, TensorError> {
        self.classifier.forward(z)
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim()
    }
}

/// Encoder, projection head, classifier and the optional frozen teacher.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub encoder: Mlp,
    pub head: Mlp,
    pub classifier: Mlp,
    pub teacher: Option<Teacher>,
    pub feature_dim: usize,
    pub proj_dim: usize,
}

impl ModelState {
    /// Fresh model with an empty (zero-class) classifier; classes are added
    /// through [`ModelState::expand_classifier`].
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        feature_dim: usize,
        proj_dim: usize,
        rng: &mut StdRng,
    ) -> ModelState {
        let mut enc_dims = vec![input_dim];
        enc_dims.extend_from_slice(hidden);
        enc_dims.push(feature_dim);
        let encoder = Mlp::init(&enc_dims, rng);
        let head = Mlp::init(&[feature_dim, feature_dim, proj_dim], rng);
        let classifier = Mlp {
            layers: vec![Layer {
                w: Tensor::matrix(feature_dim, 0, vec![]),
                b: Tensor::matrix(1, 0, vec![]),
            }],
        };
        ModelState {
            encoder,
            head,
            classifier,
            teacher: None,
            feature_dim,
            proj_dim,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim()
    }

    /// Encoder features for a batch of inputs.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        self.encoder.forward(x)
    }

    /// Projection-head output with unit-normalized rows.
    pub fn project(&self, z: &Tensor) -> Result<Tensor, TensorError> {
        self.head.forward(z)?.l2_normalize()
    }

    /// Classifier logits; no softmax applied.
    pub fn classify(&self, z: &Tensor) -> Result<Tensor, TensorError> {
        self.classifier.forward(z)
    }

    /// Freeze the current encoder, head and classifier as the teacher.
    /// A later snapshot overwrites an earlier one.
    pub fn snapshot_teacher(&mut self) {
        self.teacher = Some(Teacher {
            encoder: self.encoder.clone(),
            head: self.head.clone(),
            classifier: self.classifier.clone(),
        });
    }

    /// Widen the classifier by `c_new` outputs. Existing columns are
    /// preserved exactly; new columns draw from `rng` with the same
    /// symmetric-uniform policy as initialization.
    pub fn expand_classifier(&mut self, c_new: usize, rng: &mut StdRng) -> Result<(), ModelError> {
        if c_new == 0 {
            return Err(ModelError::InvalidCount);
        }
        let layer = &self.classifier.layers[0];
        let d = self.feature_dim;
        let old_c = layer.out_dim();
        let new_c = old_c + c_new;
        let bound = (6.0 / (d + new_c) as f64).sqrt();

        let mut w = vec![0.0; d * new_c];
        for r in 0..d {
            for c in 0..old_c {
                w[r * new_c + c] = layer.w.get(r, c);
            }
        }
        // column-major draw so every new class gets a contiguous rng run
        for c in old_c..new_c {
            for r in 0..d {
                w[r * new_c + c] = rng.gen_range(-bound..bound);
            }
        }
        let mut b = vec![0.0; new_c];
        b[..old_c].copy_from_slice(layer.b.data());

        self.classifier.layers[0] = Layer {
            w: Tensor::matrix(d, new_c, w),
            b: Tensor::matrix(1, new_c, b),
        };
        Ok(())
    }
}

// --- snapshot serialization ---

#[derive(Debug, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub dims: SnapshotDims,
    pub seed: u64,
    pub session: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SnapshotDims {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub proj_dim: usize,
    pub num_classes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    meta: SnapshotMeta,
    layers: Vec<LayerRecord>,
}

fn record_stack(name: &str, mlp: &Mlp, out: &mut Vec<LayerRecord>) {
    for (i, layer) in mlp.layers.iter().enumerate() {
        out.push(LayerRecord {
            name: format!("{name}.{i}.weight"),
            shape: layer.w.shape().to_vec(),
            values: layer.w.data().to_vec(),
        });
        out.push(LayerRecord {
            name: format!("{name}.{i}.bias"),
            shape: layer.b.shape().to_vec(),
            values: layer.b.data().to_vec(),
        });
    }
}

/// Serialize the student parameters (teacher excluded) to the snapshot JSON
/// schema: `{meta: {dims, seed, session}, layers: [{name, shape, values}]}`.
pub fn snapshot_to_json(state: &ModelState, seed: u64, session: usize) -> String {
    let hidden: Vec<usize> = state
        .encoder
        .layers
        .iter()
        .take(state.encoder.layers.len() - 1)
        .map(Layer::out_dim)
        .collect();
    let meta = SnapshotMeta {
        dims: SnapshotDims {
            input_dim: state.encoder.in_dim(),
            hidden,
            feature_dim: state.feature_dim,
            proj_dim: state.proj_dim,
            num_classes: state.num_classes(),
        },
        seed,
        session,
    };
    let mut layers = Vec::new();
    record_stack("encoder", &state.encoder, &mut layers);
    record_stack("head", &state.head, &mut layers);
    record_stack("classifier", &state.classifier, &mut layers);
    serde_json::to_string_pretty(&Snapshot { meta, layers }).expect("snapshot serializes")
}

pub fn save_snapshot(
    state: &ModelState,
    seed: u64,
    session: usize,
    path: &Path,
) -> Result<(), ModelError> {
    let mut f = fs::File::create(path)?;
    f.write_all(snapshot_to_json(state, seed, session).as_bytes())?;
    Ok(())
}

fn take_stack(name: &str, count: usize, layers: &[LayerRecord]) -> Result<Mlp, ModelError> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let w = find_layer(layers, &format!("{name}.{i}.weight"))?;
        let b = find_layer(layers, &format!("{name}.{i}.bias"))?;
        out.push(Layer { w, b });
    }
    Ok(Mlp { layers: out })
}

fn find_layer(layers: &[LayerRecord], name: &str) -> Result<Tensor, ModelError> {
    let rec = layers
        .iter()
        .find(|l| l.name == name)
        .ok_or_else(|| ModelError::MalformedSnapshot(name.to_string()))?;
    let numel: usize = rec.shape.iter().product();
    if numel != rec.values.len() {
        return Err(ModelError::MalformedSnapshot(name.to_string()));
    }
    Ok(Tensor::new(rec.shape.clone(), rec.values.clone()))
}

/// Rebuild a model (without teacher) from snapshot JSON; inverse of
/// [`snapshot_to_json`] up to exact floating-point equality.
pub fn snapshot_from_json(json: &str) -> Result<(ModelState, SnapshotMeta), ModelError> {
    let snap: Snapshot = serde_json::from_str(json)?;
    let enc_layers = snap.meta.dims.hidden.len() + 1;
    let encoder = take_stack("encoder", enc_layers, &snap.layers)?;
    let head = take_stack("head", 2, &snap.layers)?;
    let classifier = take_stack("classifier", 1, &snap.layers)?;
    let state = ModelState {
        encoder,
        head,
        classifier,
        teacher: None,
        feature_dim: snap.meta.dims.feature_dim,
        proj_dim: snap.meta.dims.proj_dim,
    };
    Ok((state, snap.meta))
}

pub fn load_snapshot(path: &Path) -> Result<(ModelState, SnapshotMeta), ModelError> {
    let json = fs::read_to_string(path)?;
    snapshot_from_json(&json)
}
