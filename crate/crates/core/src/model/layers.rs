//! Transformer building blocks composed from differentiable tensor ops.

use candle_core::{Tensor, Var, D};
#[cfg(test)]
use candle_core::DType;

use super::params::{Init, ParamStore};
use crate::Result;

const LN_EPS: f64 = 1e-6;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, std: f64, seed: u64) -> Result<Self> {
        let weight = store.param(&format!("{name}.weight"), &[out_dim, in_dim], Init::TruncNormal(std), seed)?;
        let bias = if bias {
            Some(store.param(&format!("{name}.bias"), &[out_dim], Init::Zeros, seed)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    /// Applies to the last dimension of a 2-D or 3-D input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().expect("non-scalar input");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x.reshape((rows, in_dim))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.weight.dim(0)?;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            gamma: store.param(&format!("{name}.weight"), &[dim], Init::Ones, seed)?,
            beta: store.param(&format!("{name}.bias"), &[dim], Init::Zeros, seed)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Batch normalisation over the first dimension of a `[batch, features]` input.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    /// Absent when the caller applies its own affine transform.
    pub gamma: Option<Tensor>,
    /// Absent for the re-identification necks, whose shift is frozen at zero.
    pub beta: Option<Tensor>,
    pub running_mean: Var,
    pub running_var: Var,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, with_bias: bool, seed: u64) -> Result<Self> {
        Ok(Self {
            gamma: Some(store.param(&format!("{name}.weight"), &[dim], Init::Ones, seed)?),
            beta: if with_bias {
                Some(store.param(&format!("{name}.bias"), &[dim], Init::Zeros, seed)?)
            } else {
                None
            },
            running_mean: store.buffer(&format!("{name}.running_mean"), &[dim], Init::Zeros)?,
            running_var: store.buffer(&format!("{name}.running_var"), &[dim], Init::Ones)?,
        })
    }

    /// Normalisation with running statistics but no learnable affine part.
    pub fn without_affine(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: None,
            beta: None,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[dim], Init::Zeros)?,
            running_var: store.buffer(&format!("{name}.running_var"), &[dim], Init::Ones)?,
        })
    }

    /// Normalised input before the affine transform. In training mode the
    /// batch statistics are used and the running statistics are updated.
    pub fn normalize(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (mean, var) = if train {
            let n = x.dim(0)?;
            let mean = x.mean_keepdim(0)?;
            let var = x.broadcast_sub(&mean)?.sqr()?.mean_keepdim(0)?;
            let unbiased = if n > 1 {
                (var.detach() * (n as f64 / (n - 1) as f64))?
            } else {
                var.detach()
            };
            let rm = ((self.running_mean.as_tensor() * (1.0 - BN_MOMENTUM))? + (mean.detach().squeeze(0)? * BN_MOMENTUM)?)?;
            let rv = ((self.running_var.as_tensor() * (1.0 - BN_MOMENTUM))? + (unbiased.squeeze(0)? * BN_MOMENTUM)?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().unsqueeze(0)?,
                self.running_var.as_tensor().unsqueeze(0)?,
            )
        };
        Ok(x.broadcast_sub(&mean)?.broadcast_div(&(var + BN_EPS)?.sqrt()?)?)
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.normalize(x, train)?;
        let y = match &self.gamma {
            Some(g) => y.broadcast_mul(g)?,
            None => y,
        };
        Ok(match &self.beta {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    qkv: Linear,
    proj: Linear,
    heads: usize,
}

impl Attention {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let hd = d / self.heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((b, t, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (hd as f64).sqrt()))?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, t, d))?;
        self.proj.forward(&out)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu_erf()?)
    }
}

/// Pre-norm transformer encoder layer.
#[derive(Debug, Clone)]
pub struct Block {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    mlp: Mlp,
}

impl Block {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, mlp_ratio: usize, std: f64, seed: u64) -> Result<Self> {
        let hidden = dim * mlp_ratio;
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim, seed)?,
            attn: Attention {
                qkv: Linear::new(store, &format!("{name}.attn.qkv"), dim, 3 * dim, true, std, seed)?,
                proj: Linear::new(store, &format!("{name}.attn.proj"), dim, dim, true, std, seed)?,
                heads,
            },
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim, seed)?,
            mlp: Mlp {
                fc1: Linear::new(store, &format!("{name}.mlp.fc1"), dim, hidden, true, std, seed)?,
                fc2: Linear::new(store, &format!("{name}.mlp.fc2"), hidden, dim, true, std, seed)?,
            },
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.norm1.forward(x)?)?)?;
        Ok((&x + self.mlp.forward(&self.norm2.forward(&x)?)?)?)
    }

    /// Output projections of both residual branches; zeroing them makes the layer the identity.
    pub fn residual_outputs(&self) -> [&Linear; 2] {
        [&self.attn.proj, &self.mlp.fc2]
    }
}

/// Row-wise L2 normalisation.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let eps = Tensor::new(1e-12f64, x.device())?.to_dtype(x.dtype())?;
    Ok(x.broadcast_div(&norm.broadcast_maximum(&eps)?)?)
}

pub fn scalar(value: f64, like: &Tensor) -> Result<Tensor> {
    Ok(Tensor::new(value, like.device())?.to_dtype(like.dtype())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn layer_norm_rows_are_standardised() {
        let mut s = ParamStore::new(DType::F64);
        let ln = LayerNorm::new(&mut s, "ln", 4, 0).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 4.0], [-1.0, 0.0, 5.0, 0.5]], &candle_core::Device::Cpu).unwrap();
        let y: Vec<Vec<f64>> = ln.forward(&x).unwrap().to_vec2().unwrap();
        for row in y {
            let m = row.iter().sum::<f64>() / 4.0;
            let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let mut s = ParamStore::new(DType::F64);
        let bn = BatchNorm::new(&mut s, "bn", 2, true, 0).unwrap();
        let x = Tensor::new(&[[1.0f64, 10.0], [3.0, 30.0]], &candle_core::Device::Cpu).unwrap();
        let y: Vec<Vec<f64>> = bn.forward(&x, true).unwrap().to_vec2().unwrap();
        assert_abs_diff_eq!(y[0][0], -1.0, epsilon = 1e-4);
        let rm: Vec<f64> = bn.running_mean.as_tensor().to_vec1().unwrap();
        assert_abs_diff_eq!(rm[1], 2.0, epsilon = 1e-12);
        let rv: Vec<f64> = bn.running_var.as_tensor().to_vec1().unwrap();
        // unbiased variance of (10, 30) is 200
        assert_abs_diff_eq!(rv[1], 0.9 + 20.0, epsilon = 1e-9);
        let a: Vec<Vec<f64>> = bn.forward(&x, false).unwrap().to_vec2().unwrap();
        let b: Vec<Vec<f64>> = bn.forward(&x, false).unwrap().to_vec2().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zeroed_residuals_make_identity() {
        let mut s = ParamStore::new(DType::F64);
        let blk = Block::new(&mut s, "b", 6, 2, 4, 0.02, 0).unwrap();
        for lin in blk.residual_outputs() {
            let w = s.params().iter().find(|(_, v)| v.as_tensor().id() == lin.weight.id()).unwrap().1;
            w.set(&w.zeros_like().unwrap()).unwrap();
        }
        let x = Tensor::randn(0.0f64, 1.0, (2, 5, 6), &candle_core::Device::Cpu).unwrap();
        let y = blk.forward(&x).unwrap();
        let diff: f64 = (y - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
        assert_eq!(diff, 0.0);
    }
}
