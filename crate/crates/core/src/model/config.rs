use crate::error::{NialError, Result};
use crate::kv::KvMap;
use crate::tensor::ops::{conv_out_len, pool_out_len};

/// One convolution → ReLU → max-pool stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
}

impl ConvBlock {
    pub const fn new(out_channels: usize, kernel: usize, pool: usize) -> Self {
        Self {
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            pool_window: pool,
            pool_stride: pool,
        }
    }
}

/// Declarative architecture: CNN stack → attention layers → classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_len: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub n_attn_layers: usize,
    pub dropout_p: f64,
    pub head_hidden: usize,
    /// Output width; `1` selects a single binary logit.
    pub n_classes: usize,
}

impl ModelConfig {
    /// Reference multiclass architecture for 187-sample segmented beats.
    pub fn mitbih() -> Self {
        Self {
            input_len: 187,
            conv_blocks: vec![ConvBlock::new(32, 5, 2), ConvBlock::new(64, 5, 2)],
            d_model: 64,
            n_heads: 4,
            ff_dim: 128,
            n_attn_layers: 2,
            dropout_p: 0.1,
            head_hidden: 64,
            n_classes: 5,
        }
    }

    /// Same as [`ModelConfig::mitbih`] with a binary-logit head.
    pub fn ptbdb() -> Self {
        Self {
            n_classes: 1,
            ..Self::mitbih()
        }
    }

    /// Small network for tests and desk-scale synthetic experiments.
    pub fn tiny(input_len: usize, n_classes: usize) -> Self {
        Self {
            input_len,
            conv_blocks: vec![ConvBlock::new(4, 5, 2)],
            d_model: 8,
            n_heads: 2,
            ff_dim: 16,
            n_attn_layers: 1,
            dropout_p: 0.0,
            head_hidden: 8,
            n_classes,
        }
    }

    /// Number of label values the head can represent (2 for a binary logit).
    pub fn label_classes(&self) -> usize {
        self.n_classes.max(2)
    }

    pub fn is_binary(&self) -> bool {
        self.n_classes == 1
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Checks every invariant and returns `(channels, length)` after each
    /// conv stage, starting with the raw input.
    pub fn validate(&self) -> Result<Vec<(usize, usize)>> {
        let fail = |msg: String| Err(NialError::Build(msg));
        if self.input_len == 0 {
            return fail("input_len must be positive".into());
        }
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "attention: d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_classes == 0 {
            return fail("head: n_classes must be at least 1".into());
        }
        if self.ff_dim == 0 || self.head_hidden == 0 {
            return fail("ff_dim and head_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        let mut stages = vec![(1, self.input_len)];
        let mut len = self.input_len;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.out_channels == 0 {
                return fail(format!("conv block {i}: out_channels must be positive"));
            }
            len = conv_out_len(len, b.kernel, b.stride, b.padding).ok_or_else(|| {
                NialError::Build(format!(
                    "conv block {i}: kernel {} / stride {} / padding {} leaves no output for length {len}",
                    b.kernel, b.stride, b.padding
                ))
            })?;
            len = pool_out_len(len, b.pool_window, b.pool_stride).ok_or_else(|| {
                NialError::Build(format!(
                    "conv block {i}: pool window {} / stride {} leaves no output for length {len}",
                    b.pool_window, b.pool_stride
                ))
            })?;
            stages.push((b.out_channels, len));
        }
        Ok(stages)
    }

    /// Sequence length entering the attention layers.
    pub fn sequence_len(&self) -> Result<usize> {
        Ok(self.validate()?.last().expect("non-empty").1)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("input_len", self.input_len);
        m.set("conv.count", self.conv_blocks.len());
        for (i, b) in self.conv_blocks.iter().enumerate() {
            m.set(format!("conv.{i}.out_channels"), b.out_channels);
            m.set(format!("conv.{i}.kernel"), b.kernel);
            m.set(format!("conv.{i}.stride"), b.stride);
            m.set(format!("conv.{i}.padding"), b.padding);
            m.set(format!("conv.{i}.pool_window"), b.pool_window);
            m.set(format!("conv.{i}.pool_stride"), b.pool_stride);
        }
        m.set("d_model", self.d_model);
        m.set("n_heads", self.n_heads);
        m.set("ff_dim", self.ff_dim);
        m.set("n_attn_layers", self.n_attn_layers);
        m.set("dropout_p", self.dropout_p);
        m.set("head_hidden", self.head_hidden);
        m.set("n_classes", self.n_classes);
        m
    }

    /// Reads keys over `base`; absent keys keep `base`'s values. Setting
    /// `conv.count` replaces the conv stack, with each block defaulting to
    /// the matching block of `base` (or the last one).
    pub fn from_kv_over(m: &KvMap, base: &ModelConfig) -> Result<Self> {
        let mut c = base.clone();
        c.input_len = m.parse_or("input_len", c.input_len)?;
        c.d_model = m.parse_or("d_model", c.d_model)?;
        c.n_heads = m.parse_or("n_heads", c.n_heads)?;
        c.ff_dim = m.parse_or("ff_dim", c.ff_dim)?;
        c.n_attn_layers = m.parse_or("n_attn_layers", c.n_attn_layers)?;
        c.dropout_p = m.parse_or("dropout_p", c.dropout_p)?;
        c.head_hidden = m.parse_or("head_hidden", c.head_hidden)?;
        c.n_classes = m.parse_or("n_classes", c.n_classes)?;
        let count = m.parse_or("conv.count", base.conv_blocks.len())?;
        let fallback = base
            .conv_blocks
            .last()
            .copied()
            .unwrap_or(ConvBlock::new(16, 5, 2));
        c.conv_blocks = (0..count)
            .map(|i| {
                let d = base.conv_blocks.get(i).copied().unwrap_or(fallback);
                let key = |f: &str| format!("conv.{i}.{f}");
                Ok(ConvBlock {
                    out_channels: m.parse_or(&key("out_channels"), d.out_channels)?,
                    kernel: m.parse_or(&key("kernel"), d.kernel)?,
                    stride: m.parse_or(&key("stride"), d.stride)?,
                    padding: m.parse_or(&key("padding"), d.padding)?,
                    pool_window: m.parse_or(&key("pool_window"), d.pool_window)?,
                    pool_stride: m.parse_or(&key("pool_stride"), d.pool_stride)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(c)
    }

    /// Strict parse: every field must be present (checkpoint headers).
    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let count: usize = m.require("conv.count")?;
        let conv_blocks = (0..count)
            .map(|i| {
                let key = |f: &str| format!("conv.{i}.{f}");
                Ok(ConvBlock {
                    out_channels: m.require(&key("out_channels"))?,
                    kernel: m.require(&key("kernel"))?,
                    stride: m.require(&key("stride"))?,
                    padding: m.require(&key("padding"))?,
                    pool_window: m.require(&key("pool_window"))?,
                    pool_stride: m.require(&key("pool_stride"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            input_len: m.require("input_len")?,
            conv_blocks,
            d_model: m.require("d_model")?,
            n_heads: m.require("n_heads")?,
            ff_dim: m.require("ff_dim")?,
            n_attn_layers: m.require("n_attn_layers")?,
            dropout_p: m.require("dropout_p")?,
            head_hidden: m.require("head_hidden")?,
            n_classes: m.require("n_classes")?,
        })
    }
}
