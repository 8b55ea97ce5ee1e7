//! The conditional vector field `v_θ(Rᵗ, t; R⁰)`.
//!
//! Every layer builds rotation- and translation-invariant messages for each
//! ordered atom pair from the two atom embeddings, the squared distances in the
//! current and the condition geometry, the inner product of the two difference
//! vectors and a sinusoidal time embedding. Two scalar gates turn each message
//! into weights on the difference vectors, so the layer output is a
//! rotation-equivariant field:
//!
//! ```text
//! v_i = 1/(n−1) · Σ_{j≠i} (x_i − x_j)·gate_x(m_ij) + (c_i − c_j)·gate_c(m_ij)
//! ```
//!
//! Layers are stacked by moving the current coordinates along their output
//! (`x ← x + v`); the model output is the total displacement projected onto the
//! CoM-free subspace. Gradients are derived by hand and checked against finite
//! differences in the tests.

mod net;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::Vec3;

pub use net::{forward_with_cache, ForwardCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub feature_embed_dim: usize,
    pub hidden_width: usize,
    pub n_layers: usize,
    pub time_embed_dim: usize,
    pub max_atom_types: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_embed_dim: 32,
            hidden_width: 64,
            n_layers: 2,
            time_embed_dim: 16,
            max_atom_types: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_embed_dim", self.feature_embed_dim),
            ("hidden_width", self.hidden_width),
            ("n_layers", self.n_layers),
            ("time_embed_dim", self.time_embed_dim),
            ("max_atom_types", self.max_atom_types),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "time_embed_dim must be even, got {}",
                self.time_embed_dim
            )));
        }
        Ok(())
    }

    /// Width of the per-pair message input.
    pub fn message_input_dim(&self) -> usize {
        2 * self.feature_embed_dim + 3 + self.time_embed_dim
    }
}

/// A named, shaped slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one dense layer (`weight` is `out × in`, row-major).
#[derive(Debug, Clone, Copy)]
pub(crate) struct DenseSlot {
    pub weight: usize,
    pub bias: usize,
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerSlots {
    pub msg1: DenseSlot,
    pub msg2: DenseSlot,
    pub gate_x_hidden: DenseSlot,
    pub gate_x_out: DenseSlot,
    pub gate_c_hidden: DenseSlot,
    pub gate_c_out: DenseSlot,
}

/// Parameter layout derived from a [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Layout {
    pub blocks: Vec<Block>,
    pub(crate) embed: usize,
    pub(crate) layers: Vec<LayerSlots>,
    total: usize,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let block = Block { name, shape, offset };
            offset += block.len();
            let at = block.offset;
            blocks.push(block);
            at
        };
        let f = config.feature_embed_dim;
        let h = config.hidden_width;
        let embed = push("embed".into(), vec![config.max_atom_types, f]);
        let mut dense = |prefix: String, input: usize, output: usize| DenseSlot {
            weight: push(format!("{prefix}.weight"), vec![output, input]),
            bias: push(format!("{prefix}.bias"), vec![output]),
            input,
            output,
        };
        let layers = (0..config.n_layers)
            .map(|l| LayerSlots {
                msg1: dense(format!("layers.{l}.msg1"), config.message_input_dim(), h),
                msg2: dense(format!("layers.{l}.msg2"), h, h),
                gate_x_hidden: dense(format!("layers.{l}.gate_x.hidden"), h, h),
                gate_x_out: dense(format!("layers.{l}.gate_x.out"), h, 1),
                gate_c_hidden: dense(format!("layers.{l}.gate_c.hidden"), h, h),
                gate_c_out: dense(format!("layers.{l}.gate_c.out"), h, 1),
            })
            .collect();
        Self { blocks, embed, layers, total: offset }
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// All weights of the model (or a gradient of the same shape).
#[derive(Debug, Clone)]
pub struct ScoreModelParams {
    config: ModelConfig,
    layout: Layout,
    data: Vec<f64>,
}

impl PartialEq for ScoreModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.data == other.data
    }
}

impl ScoreModelParams {
    /// All-zero parameters.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let data = vec![0.0; layout.total()];
        Ok(Self { config, layout, data })
    }

    /// Uniform `±1/√fan_in` weights, zero biases, and zero gate output layers so
    /// that the initial field is identically zero.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let embed = params.layout.blocks[0].range();
        for w in &mut params.data[embed] {
            *w = rng.random_range(-1.0..=1.0);
        }
        let slots = params.layout.layers.clone();
        for layer in &slots {
            for slot in [layer.msg1, layer.msg2, layer.gate_x_hidden, layer.gate_c_hidden] {
                let bound = 1.0 / (slot.input as f64).sqrt();
                for w in &mut params.data[slot.weight..slot.weight + slot.input * slot.output] {
                    *w = rng.random_range(-bound..=bound);
                }
            }
        }
        Ok(params)
    }

    /// Builds parameters from a flat vector laid out per [`Layout`].
    pub fn from_flat(config: ModelConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if data.len() != layout.total() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                layout.total(),
                data.len()
            )));
        }
        Ok(Self { config, layout, data })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Parameters of one named block.
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.blocks.iter().find(|b| b.name == name).map(|b| &self.data[b.range()])
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self { config: self.config, layout: self.layout.clone(), data: vec![0.0; self.data.len()] }
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// Output of the field for one structure.
    pub fn forward(&self, r_t: &[Vec3], r_0: &[Vec3], features: &[u32], t: f64) -> Result<Vec<Vec3>> {
        Ok(forward_with_cache(self, r_t, r_0, features, t)?.output)
    }
}

/// Sinusoidal features `[sin(ω_k t)…, cos(ω_k t)…]` with `ω_k` geometric in `[1, 1000]`.
pub fn time_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!("time embedding dimension must be even, got {dim}")));
    }
    let half = dim / 2;
    let freq = |k: usize| {
        if half == 1 {
            1.0
        } else {
            1000f64.powf(k as f64 / (half - 1) as f64)
        }
    };
    let mut out = Vec::with_capacity(dim);
    out.extend((0..half).map(|k| (freq(k) * t).sin()));
    out.extend((0..half).map(|k| (freq(k) * t).cos()));
    Ok(out)
}

/// A drift field conditioned on a reference geometry.
pub trait ConditionalField {
    fn eval(&self, r_t: &[Vec3], condition: &[Vec3], features: &[u32], t: f64) -> Result<Vec<Vec3>>;
}

impl ConditionalField for ScoreModelParams {
    fn eval(&self, r_t: &[Vec3], condition: &[Vec3], features: &[u32], t: f64) -> Result<Vec<Vec3>> {
        self.forward(r_t, condition, features, t)
    }
}

/// One regression example for the weighted matching loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub r_t: Vec<Vec3>,
    pub condition: Vec<Vec3>,
    pub features: Vec<u32>,
    pub t: f64,
    pub target: Vec<Vec3>,
    pub lambda: f64,
}

/// `mean_b λ_b·‖v_θ(item_b) − target_b‖²` and its exact parameter gradient.
///
/// Items are evaluated independently (in parallel when a rayon pool with
/// more than one thread is active) and reduced in batch order, so the result
/// does not depend on the thread count.
pub fn loss_and_grad(params: &ScoreModelParams, batch: &[TrainItem]) -> Result<(f64, ScoreModelParams)> {
    use rayon::prelude::*;
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let per_item: Vec<Result<(f64, ScoreModelParams)>> =
        batch.par_iter().map(|item| net::item_loss_and_grad(params, item)).collect();
    let mut loss = 0.0;
    let mut grads = params.zeros_like();
    for result in per_item {
        let (l, g) = result?;
        loss += l;
        grads.add_assign(&g);
    }
    let inv = 1.0 / batch.len() as f64;
    loss *= inv;
    grads.scale(inv);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("batch loss is {loss}")));
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_embedding_examples() {
        let e = time_embedding(0.0, 16).unwrap();
        assert!(e[..8].iter().all(|&x| x == 0.0));
        assert!(e[8..].iter().all(|&x| x == 1.0));
        assert_eq!(time_embedding(0.37, 16).unwrap(), time_embedding(0.37, 16).unwrap());
        let a = time_embedding(0.1, 16).unwrap();
        let b = time_embedding(0.9, 16).unwrap();
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(dist > 0.1);
        assert!(time_embedding(0.5, 7).is_err());
    }

    #[test]
    fn layout_is_contiguous() {
        let layout = Layout::new(&ModelConfig::default());
        let mut next = 0;
        for b in &layout.blocks {
            assert_eq!(b.offset, next);
            next += b.len();
        }
        assert_eq!(next, layout.total());
        assert_eq!(layout.blocks[0].name, "embed");
        assert_eq!(layout.blocks.len(), 1 + 2 * 12);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        c.time_embed_dim = 5;
        assert!(c.validate().is_err());
        c.time_embed_dim = 4;
        c.hidden_width = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_starts_from_zero_field() {
        let mut r = crate::rng::seeded(1);
        let p = ScoreModelParams::init(ModelConfig::default(), &mut r).unwrap();
        let x = crate::kernels::com_free_noise(4, &mut r);
        let c = crate::kernels::com_free_noise(4, &mut r);
        let out = p.forward(&x, &c, &[0, 1, 2, 3], 0.3).unwrap();
        assert!(out.iter().all(|v| *v == Vec3::zeros()));
        assert!(p.block("layers.0.gate_x.out.weight").unwrap().iter().all(|&w| w == 0.0));
        let bound = 1.0 / (ModelConfig::default().message_input_dim() as f64).sqrt();
        let w = p.block("layers.1.msg1.weight").unwrap();
        assert!(w.iter().all(|x| x.abs() <= bound) && w.iter().any(|&x| x != 0.0));
    }
}
