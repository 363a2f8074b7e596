//! Recurrent layers. Padded steps (mask 0) carry the previous state through
//! unchanged and emit zeros, so right padding never leaks into valid steps in
//! either direction.

use candle_core::{Tensor, D};

use super::layers::{sigmoid, Linear};
use super::params::ParamStore;
use crate::error::Result;

/// `m * new + (1 - m) * old` with `m` of shape `B x 1`.
fn gate_state(new: &Tensor, old: &Tensor, m: &Tensor) -> Result<Tensor> {
    Ok(old.broadcast_add(&new.sub(old)?.broadcast_mul(m)?)?)
}

pub struct Lstm {
    input: Linear,
    recurrent: Linear,
    hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            input: Linear::new(store, &format!("{name}.input"), d_in, 4 * hidden, true)?,
            recurrent: Linear::new(store, &format!("{name}.recurrent"), hidden, 4 * hidden, false)?,
            hidden,
        })
    }

    /// `x`: `B x T x d_in`, `mask`: `B x T`. Returns `B x T x hidden`.
    pub fn forward(&self, x: &Tensor, mask: &Tensor, reverse: bool) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let h_dim = self.hidden;
        let xi = self.input.forward(x)?;
        let mut h = Tensor::zeros((b, h_dim), x.dtype(), x.device())?;
        let mut c = h.clone();
        let mut outs: Vec<Option<Tensor>> = vec![None; t];
        let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
        for step in order {
            let gates = xi.narrow(1, step, 1)?.squeeze(1)?.add(&self.recurrent.forward(&h)?)?;
            let i = sigmoid(&gates.narrow(D::Minus1, 0, h_dim)?)?;
            let f = sigmoid(&gates.narrow(D::Minus1, h_dim, h_dim)?)?;
            let g = gates.narrow(D::Minus1, 2 * h_dim, h_dim)?.tanh()?;
            let o = sigmoid(&gates.narrow(D::Minus1, 3 * h_dim, h_dim)?)?;
            let c_new = f.mul(&c)?.add(&i.mul(&g)?)?;
            let h_new = o.mul(&c_new.tanh()?)?;
            let m = mask.narrow(1, step, 1)?;
            c = gate_state(&c_new, &c, &m)?;
            h = gate_state(&h_new, &h, &m)?;
            outs[step] = Some(h_new.broadcast_mul(&m)?);
        }
        let outs: Vec<Tensor> = outs.into_iter().map(|o| o.expect("every step visited")).collect();
        Ok(Tensor::stack(&outs, 1)?)
    }
}

pub struct Blstm {
    fwd: Lstm,
    bwd: Lstm,
}

impl Blstm {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fwd: Lstm::new(store, &format!("{name}.fwd"), d_in, hidden)?,
            bwd: Lstm::new(store, &format!("{name}.bwd"), d_in, hidden)?,
        })
    }

    /// Returns `B x T x 2*hidden` (forward states then backward states).
    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let f = self.fwd.forward(x, mask, false)?;
        let b = self.bwd.forward(x, mask, true)?;
        Ok(Tensor::cat(&[&f, &b], D::Minus1)?)
    }
}

pub struct Gru {
    input: Linear,
    recurrent: Linear,
    hidden: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            input: Linear::new(store, &format!("{name}.input"), d_in, 3 * hidden, true)?,
            recurrent: Linear::new(store, &format!("{name}.recurrent"), hidden, 3 * hidden, true)?,
            hidden,
        })
    }

    /// Runs over all `T` steps of `x` (`B x T x d_in`) and returns the final state `B x hidden`.
    pub fn final_state(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let hd = self.hidden;
        let xi = self.input.forward(x)?;
        let mut h = Tensor::zeros((b, hd), x.dtype(), x.device())?;
        for step in 0..t {
            let gx = xi.narrow(1, step, 1)?.squeeze(1)?;
            let gh = self.recurrent.forward(&h)?;
            let r = sigmoid(&gx.narrow(D::Minus1, 0, hd)?.add(&gh.narrow(D::Minus1, 0, hd)?)?)?;
            let z = sigmoid(&gx.narrow(D::Minus1, hd, hd)?.add(&gh.narrow(D::Minus1, hd, hd)?)?)?;
            let n = gx
                .narrow(D::Minus1, 2 * hd, hd)?
                .add(&r.mul(&gh.narrow(D::Minus1, 2 * hd, hd)?)?)?
                .tanh()?;
            // h' = (1 - z) * n + z * h
            h = n.add(&z.mul(&h.sub(&n)?)?)?;
        }
        Ok(h)
    }
}
