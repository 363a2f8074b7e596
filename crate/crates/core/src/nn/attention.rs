use candle_core::{DType, Device, Tensor};

use super::layers::{dropout, mask_rows, softmax_last, Conv1d, Ctx, LayerNorm, Linear};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Score offset for masked keys; `exp` of it underflows to exactly 0.
const MASKED_SCORE: f64 = -1e9;

pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    heads: usize,
    d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!("d_model {d_model} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), d_model, d_model, true)?,
            k: Linear::new(store, &format!("{name}.k"), d_model, d_model, true)?,
            v: Linear::new(store, &format!("{name}.v"), d_model, d_model, true)?,
            o: Linear::new(store, &format!("{name}.o"), d_model, d_model, true)?,
            heads,
            d_model,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        Ok(x
            .reshape((b, t, self.heads, self.d_model / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// `query`: `B x Tq x d`, `kv`: `B x Tk x d`, `key_mask`: `B x Tk`.
    /// Returns the projected output `B x Tq x d` and weights `B x H x Tq x Tk`.
    pub fn forward(&self, query: &Tensor, kv: &Tensor, key_mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, tq, d) = query.dims3()?;
        if d != self.d_model || kv.dim(2)? != self.d_model {
            return Err(Error::Shape(format!(
                "attention width {} but inputs have {d} and {}",
                self.d_model,
                kv.dim(2)?
            )));
        }
        let q = self.split(&self.q.forward(query)?)?;
        let k = self.split(&self.k.forward(kv)?)?;
        let v = self.split(&self.v.forward(kv)?)?;
        let scale = 1.0 / ((self.d_model / self.heads) as f64).sqrt();
        let scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        // (mask - 1) * 1e9 adds exactly 0 at valid keys.
        let bias = key_mask.affine(-MASKED_SCORE, MASKED_SCORE)?.unsqueeze(1)?.unsqueeze(1)?;
        let weights = softmax_last(&scores.broadcast_add(&bias)?)?;
        let ctx = weights.matmul(&v)?.transpose(1, 2)?.reshape((b, tq, d))?;
        Ok((self.o.forward(&ctx)?, weights))
    }
}

/// Sinusoidal position table `T x d`.
pub fn positional_encoding(t: usize, d: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut data = Vec::with_capacity(t * d);
    for pos in 0..t {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * rate;
            data.push(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Ok(Tensor::from_vec(data, (t, d), device)?.to_dtype(dtype)?)
}

/// Self-attention plus convolutional feed-forward, each followed by a
/// residual connection, layer norm and re-masking.
pub struct FftBlock {
    pub attn: MultiHeadAttention,
    ln1: LayerNorm,
    conv1: Conv1d,
    conv2: Conv1d,
    ln2: LayerNorm,
    dropout: f64,
}

impl FftBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        filter: usize,
        kernel: usize,
        dropout: f64,
    ) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d_model, heads)?,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d_model)?,
            conv1: Conv1d::same(store, &format!("{name}.ffn1"), d_model, filter, kernel)?,
            conv2: Conv1d::same(store, &format!("{name}.ffn2"), filter, d_model, 1)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d_model)?,
            dropout,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let (a, _) = self.attn.forward(x, x, mask)?;
        let x = mask_rows(&self.ln1.forward(&dropout(&a, self.dropout, ctx)?.add(x)?)?, mask)?;
        let f = self.conv2.forward(&self.conv1.forward(&x)?.relu()?)?;
        mask_rows(&self.ln2.forward(&dropout(&f, self.dropout, ctx)?.add(&x)?)?, mask)
    }
}

/// Two conv/ReLU/LayerNorm stages and a linear head with one real per step.
pub struct VariancePredictor {
    conv1: Conv1d,
    ln1: LayerNorm,
    conv2: Conv1d,
    ln2: LayerNorm,
    head: Linear,
    dropout: f64,
}

impl VariancePredictor {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        filter: usize,
        kernel: usize,
        out_dim: usize,
        dropout: f64,
    ) -> Result<Self> {
        Ok(Self {
            conv1: Conv1d::same(store, &format!("{name}.conv1"), d_model, filter, kernel)?,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), filter)?,
            conv2: Conv1d::same(store, &format!("{name}.conv2"), filter, filter, kernel)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), filter)?,
            head: Linear::new(store, &format!("{name}.head"), filter, out_dim, true)?,
            dropout,
        })
    }

    /// `B x T x d` → `B x T x out_dim`, zero at padded steps.
    pub fn forward(&self, x: &Tensor, mask: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let h = self.ln1.forward(&self.conv1.forward(x)?.relu()?)?;
        let h = dropout(&h, self.dropout, ctx)?;
        let h = self.ln2.forward(&self.conv2.forward(&h)?.relu()?)?;
        let h = dropout(&h, self.dropout, ctx)?;
        mask_rows(&self.head.forward(&h)?, mask)
    }
}
