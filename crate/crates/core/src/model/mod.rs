//! The hybrid network: conv/pool feature extractor, pre-norm multi-head
//! self-attention layers, mean pooling over time, and a small classifier
//! head emitting raw logits.

mod checkpoint;
mod config;

pub use checkpoint::{
    load, read_checkpoint, save, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ConvBlock, ModelConfig};

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NialError, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Graph handles for every parameter, in model order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Debug, Clone)]
pub struct NialModel {
    config: ModelConfig,
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
    rng: ChaCha8Rng,
    training: bool,
}

enum Init {
    HeNormal { fan_in: usize },
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

impl NialModel {
    /// Instantiates `config` with parameters drawn from a generator seeded by
    /// `seed`. Same seed, same parameters.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let stages = config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut add = |name: String, shape: &[usize], init: Init| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::HeNormal { fan_in } => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            std * z
                        })
                        .collect()
                }
                Init::Uniform { fan_in } => {
                    let a = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-a..a)).collect()
                }
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            params.push(Parameter {
                name,
                value: Tensor::from_vec(shape.to_vec(), data).expect("shape from validated config"),
            });
        };

        for (i, b) in config.conv_blocks.iter().enumerate() {
            let cin = stages[i].0;
            add(
                format!("conv.{i}.weight"),
                &[b.out_channels, cin, b.kernel],
                Init::HeNormal {
                    fan_in: cin * b.kernel,
                },
            );
            add(format!("conv.{i}.bias"), &[b.out_channels], Init::Zeros);
        }
        let channels = stages.last().expect("non-empty").0;
        let d = config.d_model;
        add(
            "proj.weight".into(),
            &[channels, d],
            Init::HeNormal { fan_in: channels },
        );
        add("proj.bias".into(), &[d], Init::Zeros);
        for l in 0..config.n_attn_layers {
            let p = |s: &str| format!("attn.{l}.{s}");
            add(p("ln1.gamma"), &[d], Init::Ones);
            add(p("ln1.beta"), &[d], Init::Zeros);
            for proj in ["q", "k", "v", "o"] {
                add(
                    p(&format!("{proj}.weight")),
                    &[d, d],
                    Init::Uniform { fan_in: d },
                );
                add(p(&format!("{proj}.bias")), &[d], Init::Zeros);
            }
            add(p("ln2.gamma"), &[d], Init::Ones);
            add(p("ln2.beta"), &[d], Init::Zeros);
            add(
                p("ff1.weight"),
                &[d, config.ff_dim],
                Init::HeNormal { fan_in: d },
            );
            add(p("ff1.bias"), &[config.ff_dim], Init::Zeros);
            add(
                p("ff2.weight"),
                &[config.ff_dim, d],
                Init::HeNormal {
                    fan_in: config.ff_dim,
                },
            );
            add(p("ff2.bias"), &[d], Init::Zeros);
        }
        add(
            "head.hidden.weight".into(),
            &[d, config.head_hidden],
            Init::HeNormal { fan_in: d },
        );
        add(
            "head.hidden.bias".into(),
            &[config.head_hidden],
            Init::Zeros,
        );
        add(
            "head.out.weight".into(),
            &[config.head_hidden, config.n_classes],
            Init::HeNormal {
                fan_in: config.head_hidden,
            },
        );
        add("head.out.bias".into(), &[config.n_classes], Init::Zeros);

        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
        dropout_rng.set_stream(1);
        Ok(Self::from_parts(config, params, dropout_rng))
    }

    fn from_parts(config: ModelConfig, params: Vec<Parameter>, rng: ChaCha8Rng) -> Self {
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Self {
            config,
            params,
            index,
            rng,
            training: false,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Replaces parameter values with `other`'s (same architecture).
    pub fn copy_parameters_from(&mut self, other: &NialModel) -> Result<()> {
        if other.config != self.config {
            return Err(NialError::Config("architectures differ".into()));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value = Tensor::from_vec(src.value.shape().to_vec(), src.value.data().to_vec())?;
        }
        Ok(())
    }

    /// Records every parameter on `g` as a gradient-receiving leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                g.param(
                    Tensor::from_vec(p.value.shape().to_vec(), p.value.data().to_vec())
                        .expect("valid"),
                )
            })
            .collect();
        Bound { vars }
    }

    /// Adds the graph gradients of the bound parameters into each
    /// parameter's gradient buffer.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &Bound) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(grad) = g.grad(v) {
                p.value.accumulate_grad(grad);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.value.zero_grad();
        }
    }

    /// Full forward pass on `x` of shape [B×1×L]; returns logits [B×n_classes].
    /// Dropout is active only in training mode.
    pub fn forward(&mut self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        self.forward_traced(g, bound, x).map(|(y, _)| y)
    }

    /// Like [`NialModel::forward`], also returning the attention-weight
    /// nodes ([B·heads × T × T], one per layer).
    pub fn forward_traced(
        &mut self,
        g: &mut Graph,
        bound: &Bound,
        x: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let mut rng = self.rng.clone();
        let mut trace = Vec::new();
        let dropout = if self.training { Some(&mut rng) } else { None };
        let out = self.forward_impl(g, bound, x, dropout, &mut trace)?;
        self.rng = rng;
        Ok((out, trace))
    }

    /// The attention stage alone on [B×T×d_model]: positional encoding,
    /// then the pre-norm residual layers.
    pub fn attention_block(&mut self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        self.attention_block_traced(g, bound, x).map(|(y, _)| y)
    }

    pub fn attention_block_traced(
        &mut self,
        g: &mut Graph,
        bound: &Bound,
        x: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let mut rng = self.rng.clone();
        let mut trace = Vec::new();
        let dropout = if self.training { Some(&mut rng) } else { None };
        let out = self.attention_impl(g, bound, x, dropout, &mut trace)?;
        self.rng = rng;
        Ok((out, trace))
    }

    /// Forward pass with dropout disabled, regardless of the mode flag.
    pub fn forward_eval(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        self.forward_impl(g, bound, x, None, &mut Vec::new())
    }

    /// Task loss on raw logits: binary cross-entropy for a single-logit
    /// head, categorical cross-entropy otherwise.
    pub fn loss(&self, g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
        if self.config.is_binary() {
            g.binary_cross_entropy(logits, labels)
        } else {
            g.categorical_cross_entropy(logits, labels)
        }
    }

    /// Eval-mode logits for a [B×1×L] batch, independent of the mode flag.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind_constants(&mut g);
        let xv = g.constant(x.clone());
        let out = self.forward_impl(&mut g, &bound, xv, None, &mut Vec::new())?;
        Ok(g.take_value(out).with_requires_grad(false))
    }

    fn bind_constants(&self, g: &mut Graph) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                g.constant(
                    Tensor::from_vec(p.value.shape().to_vec(), p.value.data().to_vec())
                        .expect("valid"),
                )
            })
            .collect();
        Bound { vars }
    }

    fn p(&self, bound: &Bound, name: &str) -> Var {
        bound.vars[self.index[name]]
    }

    fn linear(&self, g: &mut Graph, bound: &Bound, x: Var, name: &str) -> Result<Var> {
        let w = self.p(bound, &format!("{name}.weight"));
        let b = self.p(bound, &format!("{name}.bias"));
        let shape = g.shape(x).to_vec();
        let (din, dout) = (g.shape(w)[0], g.shape(w)[1]);
        if shape.last() != Some(&din) {
            return Err(NialError::Dimension(format!(
                "{name}: input {shape:?} does not end in {din}"
            )));
        }
        let rows = shape.iter().product::<usize>() / din;
        let flat = g.reshape(x, &[rows, din])?;
        let y = g.matmul(flat, w)?;
        let y = g.add_trailing(y, b)?;
        let mut oshape = shape;
        *oshape.last_mut().expect("non-empty") = dout;
        g.reshape(y, &oshape)
    }

    fn drop(&self, g: &mut Graph, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Var> {
        match rng {
            Some(r) => g.dropout(x, self.config.dropout_p, *r),
            None => Ok(x),
        }
    }

    fn forward_impl(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: Var,
        mut rng: Option<&mut ChaCha8Rng>,
        trace: &mut Vec<Var>,
    ) -> Result<Var> {
        let c = &self.config;
        let shape = g.shape(x);
        if shape.len() != 3 || shape[1] != 1 || shape[2] != c.input_len {
            return Err(NialError::Dimension(format!(
                "expected input [B, 1, {}], got {shape:?}",
                c.input_len
            )));
        }
        let batch = shape[0];
        let mut h = x;
        for (i, b) in c.conv_blocks.iter().enumerate() {
            let w = self.p(bound, &format!("conv.{i}.weight"));
            let bias = self.p(bound, &format!("conv.{i}.bias"));
            h = g.conv1d(h, w, bias, b.stride, b.padding)?;
            h = g.relu(h);
            h = g.maxpool1d(h, b.pool_window, b.pool_stride)?;
        }
        // [B, C, T] -> [B, T, C] -> [B, T, d_model]
        h = g.permute(h, &[0, 2, 1])?;
        h = self.linear(g, bound, h, "proj")?;
        h = self.attention_impl(g, bound, h, rng.as_deref_mut(), trace)?;
        h = g.mean_axis(h, 1)?;
        debug_assert_eq!(g.shape(h), &[batch, c.d_model]);
        h = self.linear(g, bound, h, "head.hidden")?;
        h = g.relu(h);
        h = self.drop(g, h, &mut rng)?;
        self.linear(g, bound, h, "head.out")
    }

    fn attention_impl(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: Var,
        mut rng: Option<&mut ChaCha8Rng>,
        trace: &mut Vec<Var>,
    ) -> Result<Var> {
        let c = &self.config;
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != c.d_model {
            return Err(NialError::Dimension(format!(
                "attention input {shape:?} is not [B, T, {}]",
                c.d_model
            )));
        }
        let pe = g.constant(positional_encoding(shape[1], shape[2]));
        let mut h = g.add_trailing(x, pe)?;
        for l in 0..c.n_attn_layers {
            let p = |s: &str| format!("attn.{l}.{s}");
            let a = g.layernorm(
                h,
                self.p(bound, &p("ln1.gamma")),
                self.p(bound, &p("ln1.beta")),
                LAYERNORM_EPS,
            )?;
            let (o, weights) = self.self_attention(g, bound, l, a)?;
            trace.push(weights);
            let o = self.drop(g, o, &mut rng)?;
            h = g.add(h, o)?;

            let f = g.layernorm(
                h,
                self.p(bound, &p("ln2.gamma")),
                self.p(bound, &p("ln2.beta")),
                LAYERNORM_EPS,
            )?;
            let f = self.linear(g, bound, f, &p("ff1"))?;
            let f = g.relu(f);
            let f = self.linear(g, bound, f, &p("ff2"))?;
            let f = self.drop(g, f, &mut rng)?;
            h = g.add(h, f)?;
        }
        Ok(h)
    }

    /// Multi-head scaled dot-product attention of layer `layer` on an
    /// already-normalized [B×T×d_model] input. Returns the output projection
    /// and the attention weights [B·heads × T × T].
    pub fn self_attention(
        &self,
        g: &mut Graph,
        bound: &Bound,
        layer: usize,
        x: Var,
    ) -> Result<(Var, Var)> {
        let c = &self.config;
        if layer >= c.n_attn_layers {
            return Err(NialError::Config(format!("no attention layer {layer}")));
        }
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != c.d_model {
            return Err(NialError::Dimension(format!(
                "attention input {shape:?} is not [B, T, {}]",
                c.d_model
            )));
        }
        let (batch, t, d) = (shape[0], shape[1], shape[2]);
        let (heads, dk) = (c.n_heads, c.head_dim());
        let p = |s: &str| format!("attn.{layer}.{s}");
        let split = |g: &mut Graph, name: &str| -> Result<Var> {
            let y = self.linear(g, bound, x, &p(name))?;
            let y = g.reshape(y, &[batch, t, heads, dk])?;
            let y = g.permute(y, &[0, 2, 1, 3])?;
            g.reshape(y, &[batch * heads, t, dk])
        };
        let q = split(g, "q")?;
        let k = split(g, "k")?;
        let v = split(g, "v")?;
        let kt = g.transpose_last(k)?;
        let scores = g.bmm(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
        let weights = g.softmax(scores, 2)?;
        let ctx = g.bmm(weights, v)?;
        let ctx = g.reshape(ctx, &[batch, heads, t, dk])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[batch, t, d])?;
        let out = self.linear(g, bound, ctx, &p("o"))?;
        Ok((out, weights))
    }

    /// Wraps externally recorded parameter nodes (in [`NialModel::parameters`]
    /// order) for use with the forward methods.
    pub fn bound_from(&self, vars: Vec<Var>) -> Result<Bound> {
        if vars.len() != self.params.len() {
            return Err(NialError::Contract(format!(
                "{} nodes for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        Ok(Bound { vars })
    }
}

/// Fixed sinusoidal encoding [T×d]: sin on even columns, cos on odd.
pub fn positional_encoding(t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d {
            let pair = (i / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_vec(vec![t, d], data).expect("t, d > 0")
}
