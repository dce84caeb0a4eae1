//! The noise-prediction network.
//!
//! A small fully connected MLP maps `[x_t, condition, time-embedding]` to a
//! predicted noise vector of the same dimension as `x_t`. The timestep enters
//! through a fixed sinusoidal embedding, the condition through plain
//! concatenation, and classifier-free guidance through a stored
//! `null_condition` vector:
//!
//! ```text
//! eps_guided = (1 - w) * eps(x, t, null) + w * eps(x, t, c)
//! ```
//!
//! `w = 1` short-circuits to a single conditional evaluation, so guided and
//! unguided predictions agree bitwise there. All arithmetic is `f64` with
//! `libm` transcendentals; the forward pass is a pure function of
//! `(params, inputs)`.

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::scalar::sigmoid;
use crate::numerics::schedule::ScheduleSpec;
use crate::numerics::{SeededRng, Vector};

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(x),
            Activation::Silu => x * sigmoid(x),
        }
    }

    /// Derivative at `x` (used by the reverse pass).
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let y = libm::tanh(x);
                1.0 - y * y
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "silu" => Ok(Activation::Silu),
            other => Err(Error::Config(format!(
                "unknown activation '{other}' (expected tanh or silu)"
            ))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Tanh => write!(f, "tanh"),
            Activation::Silu => write!(f, "silu"),
        }
    }
}

/// Network hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArch {
    pub data_dim: usize,
    pub cond_dim: usize,
    pub hidden_dim: usize,
    /// Number of hidden layers.
    pub depth: usize,
    /// Sinusoidal embedding width; must be even.
    pub t_embed_dim: usize,
    pub activation: Activation,
}

impl Default for ModelArch {
    fn default() -> Self {
        ModelArch {
            data_dim: 2,
            cond_dim: 2,
            hidden_dim: 64,
            depth: 3,
            t_embed_dim: 16,
            activation: Activation::Silu,
        }
    }
}

impl ModelArch {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.cond_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidArgument(
                "model dimensions must be >= 1".to_string(),
            ));
        }
        if self.depth == 0 || self.depth > 16 {
            return Err(Error::InvalidArgument(format!(
                "depth {} outside 1..=16",
                self.depth
            )));
        }
        if self.t_embed_dim < 2 || self.t_embed_dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "t_embed_dim {} must be even and >= 2",
                self.t_embed_dim
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.data_dim + self.cond_dim + self.t_embed_dim
    }

    /// `(rows, cols)` of each layer, hidden layers then the linear output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.depth + 1);
        let mut cols = self.input_dim();
        for _ in 0..self.depth {
            shapes.push((self.hidden_dim, cols));
            cols = self.hidden_dim;
        }
        shapes.push((self.data_dim, cols));
        shapes
    }
}

/// One dense layer, `w` stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    /// `y = W x + b`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            y.push(acc + self.b[r]);
        }
        y
    }
}

/// The MLP noise predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    arch: ModelArch,
    layers: Vec<Layer>,
    null_condition: Vector,
}

impl DenoiserModel {
    /// Random initialization: `w ~ N(0, 1/cols)`, biases zero. Draws come
    /// from per-layer child streams, so the result only depends on the
    /// passed generator's identity, not on its cursor.
    pub fn init(arch: ModelArch, rng: &SeededRng) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .iter()
            .enumerate()
            .map(|(i, &(rows, cols))| {
                let mut lr = rng.child(i as u64);
                let scale = libm::sqrt(1.0 / cols as f64);
                let mut layer = Layer::zeros(rows, cols);
                for w in layer.w.iter_mut() {
                    *w = scale * lr.standard_normal();
                }
                layer
            })
            .collect();
        let null_condition = Vector::zeros(arch.cond_dim);
        Ok(DenoiserModel {
            arch,
            layers,
            null_condition,
        })
    }

    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn null_condition(&self) -> &Vector {
        &self.null_condition
    }

    /// Fixed sinusoidal timestep embedding; `t = 0` is a valid input (the
    /// inversion path evaluates the model at the clean end of the chain).
    pub fn t_embedding(&self, t: usize) -> Vec<f64> {
        sinusoidal_embedding(t, self.arch.t_embed_dim)
    }

    fn features(&self, x_t: &Vector, t: usize, cond: &Vector) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.arch.input_dim());
        f.extend_from_slice(x_t.as_slice());
        f.extend_from_slice(cond.as_slice());
        f.extend_from_slice(&self.t_embedding(t));
        f
    }

    fn check_inputs(&self, x_t: &Vector, cond: &Vector) -> Result<()> {
        x_t.ensure_dim(self.arch.data_dim, "eps_predict x_t")?;
        cond.ensure_dim(self.arch.cond_dim, "eps_predict condition")?;
        x_t.ensure_finite("x_t")?;
        cond.ensure_finite("condition")?;
        Ok(())
    }

    /// Predicted noise for `x_t` at timestep `t` under `cond`.
    pub fn eps_predict(&self, x_t: &Vector, t: usize, cond: &Vector) -> Result<Vector> {
        self.check_inputs(x_t, cond)?;
        let mut h = self.features(x_t, t, cond);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                for v in h.iter_mut() {
                    *v = self.arch.activation.apply(*v);
                }
            }
        }
        Ok(Vector::from_vec(h))
    }

    /// Classifier-free guided prediction with weight `w`.
    pub fn eps_predict_guided(
        &self,
        x_t: &Vector,
        t: usize,
        cond: &Vector,
        w: f64,
    ) -> Result<Vector> {
        if !w.is_finite() {
            return Err(Error::NonFinite(format!("guidance weight = {w}")));
        }
        if w == 1.0 {
            return self.eps_predict(x_t, t, cond);
        }
        let null = self.null_condition.clone();
        let eps_u = self.eps_predict(x_t, t, &null)?;
        let eps_c = self.eps_predict(x_t, t, cond)?;
        eps_u.affine(1.0 - w, &eps_c, w)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameter view in a fixed order: per layer, weights row-major
    /// then biases. The optimizer and gradient bundles share this order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimMismatch {
                expected: self.param_count(),
                got: flat.len(),
                context: "set_params_flat".to_string(),
            });
        }
        let mut off = 0;
        for layer in self.layers.iter_mut() {
            let wn = layer.w.len();
            layer.w.copy_from_slice(&flat[off..off + wn]);
            off += wn;
            let bn = layer.b.len();
            layer.b.copy_from_slice(&flat[off..off + bn]);
            off += bn;
        }
        Ok(())
    }

    /// SHA-256 over the little-endian parameter bytes; used to assert that
    /// reference models stay frozen.
    pub fn param_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for layer in &self.layers {
            for v in layer.w.iter().chain(layer.b.iter()) {
                hasher.update(v.to_le_bytes());
            }
        }
        hex(&hasher.finalize())
    }

    pub fn save(&self, path: &Path, schedule: &ScheduleSpec) -> Result<()> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            compat_hash: compat_hash(&self.arch, schedule),
            schedule: schedule.clone(),
            arch: self.arch.clone(),
            null_condition: self.null_condition.as_slice().to_vec(),
            layers: self.layers.clone(),
        };
        let file = std::fs::File::create(path)?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer(&mut writer, &ckpt).map_err(|e| Error::Format {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, ScheduleSpec)> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Format {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
        let fail = |detail: String| Error::Format {
            path: path.display().to_string(),
            detail,
        };
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(fail(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        ckpt.arch.validate()?;
        ckpt.schedule.build()?;
        let expected = compat_hash(&ckpt.arch, &ckpt.schedule);
        if ckpt.compat_hash != expected {
            return Err(fail(
                "compat hash does not match the stored architecture/schedule".to_string(),
            ));
        }
        let shapes = ckpt.arch.layer_shapes();
        if ckpt.layers.len() != shapes.len() {
            return Err(fail(format!(
                "expected {} layers, found {}",
                shapes.len(),
                ckpt.layers.len()
            )));
        }
        for (i, (layer, &(rows, cols))) in ckpt.layers.iter().zip(&shapes).enumerate() {
            if layer.rows != rows
                || layer.cols != cols
                || layer.w.len() != rows * cols
                || layer.b.len() != rows
            {
                return Err(fail(format!("layer {i} has inconsistent shape")));
            }
            if layer.w.iter().chain(layer.b.iter()).any(|v| !v.is_finite()) {
                return Err(fail(format!("layer {i} contains non-finite parameters")));
            }
        }
        if ckpt.null_condition.len() != ckpt.arch.cond_dim {
            return Err(fail("null_condition dimension mismatch".to_string()));
        }
        let model = DenoiserModel {
            arch: ckpt.arch,
            layers: ckpt.layers,
            null_condition: Vector::from_vec(ckpt.null_condition),
        };
        Ok((model, ckpt.schedule))
    }
}

pub(crate) fn sinusoidal_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut emb = Vec::with_capacity(dim);
    let tf = t as f64;
    for i in 0..half {
        let exponent = if half > 1 {
            i as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let freq = libm::pow(10_000.0, -exponent);
        emb.push(libm::sin(tf * freq));
    }
    for i in 0..half {
        let exponent = if half > 1 {
            i as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let freq = libm::pow(10_000.0, -exponent);
        emb.push(libm::cos(tf * freq));
    }
    emb
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    compat_hash: String,
    schedule: ScheduleSpec,
    arch: ModelArch,
    null_condition: Vec<f64>,
    layers: Vec<Layer>,
}

/// Hash of the (architecture, schedule) pair. Models may only be compared or
/// evaluated together when their hashes agree.
pub fn compat_hash(arch: &ModelArch, schedule: &ScheduleSpec) -> String {
    let text = format!(
        "v{CHECKPOINT_VERSION}|data={}|cond={}|hidden={}|depth={}|temb={}|act={}|kind={}|t_max={}|beta_min={:e}|beta_max={:e}",
        arch.data_dim,
        arch.cond_dim,
        arch.hidden_dim,
        arch.depth,
        arch.t_embed_dim,
        arch.activation,
        schedule.kind,
        schedule.t_max,
        schedule.beta_min,
        schedule.beta_max,
    );
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
