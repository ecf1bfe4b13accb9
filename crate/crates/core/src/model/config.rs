use super::{ModelError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub dropout: f64,
    pub tie_output_head: bool,
}

pub(crate) const LN_EPS: f64 = 1e-5;

impl ModelConfig {
    pub fn new(n_layers: usize, n_heads: usize, d_model: usize, vocab_size: usize, max_context: usize) -> Self {
        Self {
            n_layers,
            n_heads,
            d_model,
            d_ff: 4 * d_model,
            vocab_size,
            max_context,
            dropout: 0.0,
            tie_output_head: false,
        }
    }

    /// 6 layers, 6 heads, width 384.
    pub fn large(vocab_size: usize, max_context: usize) -> Self {
        Self::new(6, 6, 384, vocab_size, max_context)
    }

    /// 4 layers, 4 heads, width 128: the CPU-sized default.
    pub fn desk(vocab_size: usize, max_context: usize) -> Self {
        Self::new(4, 4, 128, vocab_size, max_context)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad("layers, heads and widths must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.vocab_size == 0 || self.max_context == 0 {
            return bad("vocab_size and max_context must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Parameters inside the transformer blocks (attention, MLP, layer norms).
    pub fn block_param_count(&self) -> usize {
        let (d, f) = (self.d_model, self.d_ff);
        let attn = 4 * (d * d + d);
        let mlp = d * f + f + f * d + d;
        let norms = 4 * d;
        self.n_layers * (attn + mlp + norms)
    }

    /// Closed-form total, matching what [`init_model`](super::init_model) allocates.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let head = if self.tie_output_head { 0 } else { d * self.vocab_size };
        self.vocab_size * d + self.max_context * d + self.block_param_count() + 2 * d + head
    }

    pub fn to_kv(&self) -> String {
        format!(
            "n_layers={}\nn_heads={}\nd_model={}\nd_ff={}\nvocab_size={}\nmax_context={}\ndropout={}\ntie_output_head={}\n",
            self.n_layers,
            self.n_heads,
            self.d_model,
            self.d_ff,
            self.vocab_size,
            self.max_context,
            self.dropout,
            self.tie_output_head
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::new(0, 0, 0, 0, 0);
        let mut seen = 0;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("expected key=value, got {line:?}")))?;
            let num = || v.parse::<usize>().map_err(|_| ModelError::Config(format!("{k}: bad integer {v:?}")));
            match k {
                "n_layers" => cfg.n_layers = num()?,
                "n_heads" => cfg.n_heads = num()?,
                "d_model" => cfg.d_model = num()?,
                "d_ff" => cfg.d_ff = num()?,
                "vocab_size" => cfg.vocab_size = num()?,
                "max_context" => cfg.max_context = num()?,
                "dropout" => {
                    cfg.dropout = v.parse().map_err(|_| ModelError::Config(format!("dropout: bad number {v:?}")))?
                }
                "tie_output_head" => {
                    cfg.tie_output_head =
                        v.parse().map_err(|_| ModelError::Config(format!("tie_output_head: bad bool {v:?}")))?
                }
                other => return Err(ModelError::Config(format!("unknown key {other:?}"))),
            }
            seen += 1;
        }
        if seen != 8 {
            return Err(ModelError::Config(format!("expected 8 keys, got {seen}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
