//! Differentiable building blocks over `ParamStore` tensors.

use candle_core::{Tensor, D};
use rand_chacha::ChaCha8Rng;

use super::ops::gru_scan;
use super::params::{Init, ParamGroup, ParamStore};
use crate::error::Result;

pub(crate) const LN_EPS: f64 = 1e-5;

/// `x [.., in] · wᵀ + b` with `w [out, in]`.
pub(crate) fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> candle_core::Result<Tensor> {
    let dims = x.dims().to_vec();
    let (out, inp) = w.dims2()?;
    let rows = x.elem_count() / inp;
    let y = x.reshape((rows, inp))?.matmul(&w.t()?)?;
    let y = match b {
        Some(b) => y.broadcast_add(b)?,
        None => y,
    };
    let mut shape = dims;
    *shape.last_mut().unwrap() = out;
    y.reshape(shape)
}

pub(crate) fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> candle_core::Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    let xn = xc.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
    xn.broadcast_mul(gamma)?.broadcast_add(beta)
}

/// Logistic function via `tanh`, which has a backward rule.
pub(crate) fn sigmoid(x: &Tensor) -> candle_core::Result<Tensor> {
    ((x * 0.5)?.tanh()? + 1.0)? * 0.5
}

/// Gated linear unit over the last dimension: first half times sigmoid of the second.
pub(crate) fn glu(x: &Tensor) -> candle_core::Result<Tensor> {
    let n = x.dim(D::Minus1)? / 2;
    let a = x.narrow(D::Minus1, 0, n)?;
    let g = x.narrow(D::Minus1, n, n)?;
    a * sigmoid(&g)?
}

fn uniform_bound(fan_in: usize) -> Init {
    Init::Uniform(1.0 / (fan_in as f64).sqrt())
}

pub(crate) fn add_linear(
    store: &mut ParamStore,
    prefix: &str,
    inp: usize,
    out: usize,
    bias: bool,
    group: ParamGroup,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    store.add(format!("{prefix}.weight"), &[out, inp], group, uniform_bound(inp), rng)?;
    if bias {
        store.add(format!("{prefix}.bias"), &[out], group, uniform_bound(inp), rng)?;
    }
    Ok(())
}

pub(crate) fn add_layer_norm(
    store: &mut ParamStore,
    prefix: &str,
    dim: usize,
    group: ParamGroup,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    store.add(format!("{prefix}.weight"), &[dim], group, Init::Ones, rng)?;
    store.add(format!("{prefix}.bias"), &[dim], group, Init::Zeros, rng)?;
    Ok(())
}

pub(crate) fn apply_linear(store: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let w = store.get(&format!("{prefix}.weight"))?;
    let bias_name = format!("{prefix}.bias");
    let b = if store.contains(&bias_name) {
        Some(store.get(&bias_name)?)
    } else {
        None
    };
    Ok(linear(x, w, b)?)
}

pub(crate) fn apply_layer_norm(store: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    Ok(layer_norm(
        x,
        store.get(&format!("{prefix}.weight"))?,
        store.get(&format!("{prefix}.bias"))?,
    )?)
}

/// Residual bidirectional GRU unit over the second-to-last axis:
/// `x + proj([gru_fwd(ln(x)), gru_bwd(ln(x))])`.
pub(crate) struct RnnUnit {
    pub prefix: String,
    pub dim: usize,
    pub hidden: usize,
}

impl RnnUnit {
    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let (d, h) = (self.dim, self.hidden);
        let g = ParamGroup::TfBlocks;
        add_layer_norm(store, &format!("{}.norm", self.prefix), d, g, rng)?;
        for dir in ["fwd", "bwd"] {
            let p = format!("{}.gru.{dir}", self.prefix);
            store.add(format!("{p}.w_ih"), &[3 * h, d], g, uniform_bound(h), rng)?;
            store.add(format!("{p}.b_ih"), &[3 * h], g, uniform_bound(h), rng)?;
            store.add(format!("{p}.hh"), &[3 * h * h + 3 * h], g, uniform_bound(h), rng)?;
        }
        add_linear(store, &format!("{}.proj", self.prefix), 2 * h, d, true, g, rng)
    }

    /// `x`: `[S, L, dim]`, recurrence along `L`.
    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let y = apply_layer_norm(store, &format!("{}.norm", self.prefix), x)?;
        let mut states = Vec::with_capacity(2);
        for (dir, reverse) in [("fwd", false), ("bwd", true)] {
            let p = format!("{}.gru.{dir}", self.prefix);
            let gi = linear(
                &y,
                store.get(&format!("{p}.w_ih"))?,
                Some(store.get(&format!("{p}.b_ih"))?),
            )?;
            states.push(gru_scan(&gi, store.get(&format!("{p}.hh"))?, self.hidden, reverse)?);
        }
        let h = Tensor::cat(&states, D::Minus1)?;
        let out = apply_linear(store, &format!("{}.proj", self.prefix), &h)?;
        Ok((x + out)?)
    }
}

/// Per-band mask estimator: norm, MLP with tanh, then a GLU down to `2·C·F_b` outputs.
pub(crate) struct MaskHead {
    pub prefix: String,
    pub dim: usize,
    pub hidden: usize,
    pub group: ParamGroup,
}

impl MaskHead {
    fn band(&self, b: usize) -> String {
        format!("{}.band{b}", self.prefix)
    }

    pub fn register(
        &self,
        store: &mut ParamStore,
        outputs: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        for (b, &k) in outputs.iter().enumerate() {
            let p = self.band(b);
            add_layer_norm(store, &format!("{p}.norm"), self.dim, self.group, rng)?;
            add_linear(store, &format!("{p}.hidden"), self.dim, self.hidden, true, self.group, rng)?;
            add_linear(store, &format!("{p}.out"), self.hidden, 2 * k, true, self.group, rng)?;
        }
        Ok(())
    }

    /// `x`: `[N, B, T, D]` → concatenated band outputs `[N, T, Σ K_b]`.
    pub fn forward(&self, store: &ParamStore, x: &Tensor, n_bands: usize) -> Result<Tensor> {
        let mut outs = Vec::with_capacity(n_bands);
        for b in 0..n_bands {
            let p = self.band(b);
            let xb = x.narrow(1, b, 1)?.squeeze(1)?;
            let y = apply_layer_norm(store, &format!("{p}.norm"), &xb)?;
            let y = apply_linear(store, &format!("{p}.hidden"), &y)?.tanh()?;
            let y = apply_linear(store, &format!("{p}.out"), &y)?;
            outs.push(glu(&y)?);
        }
        Ok(Tensor::cat(&outs, D::Minus1)?)
    }
}
