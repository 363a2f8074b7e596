use candle_core::{DType, Device, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Init, ParamStore};
use crate::error::{Error, Result};
use crate::util::keyed_rng;

/// Forward-pass mode. Dropout draws from the context's seeded stream in
/// training mode and is the identity in eval mode.
pub struct Ctx {
    train: bool,
    rng: ChaCha8Rng,
}

impl Ctx {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: keyed_rng(0, "eval"),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: keyed_rng(seed, "dropout"),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }
}

pub fn dropout(x: &Tensor, p: f64, ctx: &mut Ctx) -> Result<Tensor> {
    if !ctx.train || p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..x.elem_count())
        .map(|_| if ctx.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
    Ok(x.mul(&mask)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x * 0.5)?.tanh()?.affine(0.5, 0.5)?)
}

/// Numerically stable softmax over the last dimension.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// Zeroes rows of `x` (`B x T x C`) where `mask` (`B x T`, 1 valid / 0 pad) is 0.
pub fn mask_rows(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_mul(&mask.unsqueeze(D::Minus1)?)?)
}

/// `B x T` float mask from sequence lengths.
pub fn length_mask(lengths: &[usize], max_len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let data: Vec<f64> = lengths
        .iter()
        .flat_map(|&l| (0..max_len).map(move |t| if t < l { 1.0 } else { 0.0 }))
        .collect();
    Ok(Tensor::from_vec(data, (lengths.len(), max_len), device)?.to_dtype(dtype)?)
}

/// `B x T` id tensor, right-padded with `pad`.
pub fn pad_ids(seqs: &[Vec<u32>], pad: u32, device: &Device) -> Result<(Tensor, Vec<usize>)> {
    let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let lengths: Vec<usize> = seqs.iter().map(Vec::len).collect();
    let data: Vec<u32> = seqs
        .iter()
        .flat_map(|s| s.iter().copied().chain(std::iter::repeat(pad)).take(max_len))
        .collect();
    Ok((Tensor::from_vec(data, (seqs.len(), max_len), device)?, lengths))
}

/// `x @ w` for `x` of shape `... x C_in` and a 2-D `w`, as one 2-D matmul
/// over the flattened leading dimensions.
pub fn matmul_rows(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let c_in = *dims.last().ok_or_else(|| Error::Shape("matmul of a scalar".into()))?;
    let rows = x.elem_count() / c_in.max(1);
    let y = x.contiguous()?.reshape((rows, c_in))?.matmul(w)?;
    let mut out = dims;
    *out.last_mut().unwrap() = w.dim(1)?;
    Ok(y.reshape(out)?)
}

pub struct Linear {
    /// `in x out`.
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = store.var(&format!("{name}.weight"), &[d_in, d_out], Init::Uniform(bound))?;
        let bias = if bias {
            Some(store.var(&format!("{name}.bias"), &[d_out], Init::Uniform(bound))?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = matmul_rows(x, &self.weight)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

pub struct Embedding {
    /// `vocab x dim`.
    pub table: Tensor,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize) -> Result<Self> {
        let table = store.var(&format!("{name}.table"), &[vocab, dim], Init::Normal(1.0 / (dim as f64).sqrt()))?;
        Ok(Self { table })
    }

    pub fn vocab(&self) -> usize {
        self.table.dim(0).unwrap_or(0)
    }

    /// Looks up an integer id tensor of any shape; output appends the embedding dim.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let vocab = self.vocab() as u32;
        let ids = ids.contiguous()?;
        if let Some(bad) = ids.flatten_all()?.to_vec1::<u32>()?.into_iter().find(|&i| i >= vocab) {
            return Err(Error::Validation(format!("id {bad} out of range for vocabulary of {vocab}")));
        }
        let mut shape = ids.dims().to_vec();
        shape.push(self.table.dim(1)?);
        Ok(self.table.index_select(&ids.flatten_all()?, 0)?.reshape(shape)?)
    }
}

pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.var(&format!("{name}.gamma"), &[dim], Init::Ones)?,
            beta: store.var(&format!("{name}.beta"), &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Zero,
    /// Repeats the edge frame, so a constant input stays constant at the borders.
    Replicate,
}

/// 1-D convolution over channels-last input `B x T x C_in`, producing
/// `B x T' x C_out` with `T' = floor((T + 2 p - k) / s) + 1`.
pub struct Conv1d {
    /// `(k * C_in) x C_out`, tap-major.
    pub weight: Tensor,
    pub bias: Tensor,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pad_mode: PadMode,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        pad_mode: PadMode,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::Config(format!("{name}: kernel and stride must be positive")));
        }
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        Ok(Self {
            weight: store.var(&format!("{name}.weight"), &[kernel * c_in, c_out], Init::Uniform(bound))?,
            bias: store.var(&format!("{name}.bias"), &[c_out], Init::Uniform(bound))?,
            kernel,
            stride,
            padding,
            pad_mode,
        })
    }

    /// Length-preserving convolution for odd kernels.
    pub fn same(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        Self::new(store, name, c_in, c_out, kernel, 1, (kernel - 1) / 2, PadMode::Zero)
    }

    pub fn output_len(&self, t: usize) -> usize {
        (t + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1
    }

    fn pad(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.padding;
        if p == 0 {
            return Ok(x.clone());
        }
        let (b, t, c) = x.dims3()?;
        let (left, right) = match self.pad_mode {
            PadMode::Zero => {
                let z = Tensor::zeros((b, p, c), x.dtype(), x.device())?;
                (z.clone(), z)
            }
            PadMode::Replicate => {
                let first = x.narrow(1, 0, 1)?;
                let last = x.narrow(1, t - 1, 1)?;
                (
                    Tensor::cat(&vec![first; p], 1)?,
                    Tensor::cat(&vec![last; p], 1)?,
                )
            }
        };
        Ok(Tensor::cat(&[&left, x, &right], 1)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, t, _) = x.dims3()?;
        if t == 0 {
            return Err(Error::Shape("convolution over an empty sequence".into()));
        }
        if self.kernel == 1 && self.stride == 1 && self.padding == 0 {
            return Ok(matmul_rows(x, &self.weight)?.broadcast_add(&self.bias)?);
        }
        let xp = self.pad(x)?;
        let tp = t + 2 * self.padding;
        // Inputs shorter than the kernel are extended at the end with the pad mode's fill.
        let xp = if tp < self.kernel {
            let (b, _, c) = xp.dims3()?;
            let fill = match self.pad_mode {
                PadMode::Zero => Tensor::zeros((b, self.kernel - tp, c), xp.dtype(), xp.device())?,
                PadMode::Replicate => Tensor::cat(&vec![xp.narrow(1, tp - 1, 1)?; self.kernel - tp], 1)?,
            };
            Tensor::cat(&[&xp, &fill], 1)?
        } else {
            xp
        };
        let xp = xp.contiguous()?;
        let t_out = self.output_len(t).max(1);
        let taps = (0..self.kernel)
            .map(|k| {
                if self.stride == 1 {
                    Ok(xp.narrow(1, k, t_out)?)
                } else {
                    let idx: Vec<u32> = (0..t_out).map(|i| (k + i * self.stride) as u32).collect();
                    let idx = Tensor::from_vec(idx, t_out, xp.device())?;
                    Ok(xp.index_select(&idx, 1)?)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let cols = Tensor::cat(&taps, 2)?;
        Ok(matmul_rows(&cols, &self.weight)?.broadcast_add(&self.bias)?)
    }
}
