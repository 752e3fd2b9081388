use crate::error::{Error, Result};
use crate::kernels::conv::ConvParams;
use crate::tensor::{Shape, Tensor4};

pub const BN_EPS: f32 = 1e-5;

/// Inference-mode batch normalization statistics for `c` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
}

impl BnParams {
    /// gamma 1, beta 0, mean 0, var 1.
    pub fn identity(c: usize) -> Self {
        BnParams {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::invalid("batch_norm", "parameter vectors differ in length"));
        }
        if self.running_var.iter().any(|&v| v < 0.0) || self.eps < 0.0 {
            return Err(Error::invalid("batch_norm", "negative variance or eps"));
        }
        Ok(())
    }

    /// Per-channel (scale, shift) with bn(v) = scale·v + shift.
    fn affine(&self) -> Vec<(f64, f64)> {
        (0..self.channels())
            .map(|c| {
                let scale = self.gamma[c] as f64 / (self.running_var[c] as f64 + self.eps as f64).sqrt();
                (scale, self.beta[c] as f64 - self.running_mean[c] as f64 * scale)
            })
            .collect()
    }
}

/// gamma·(x − mean)/sqrt(var + eps) + beta per channel.
pub fn batch_norm_infer(x: &Tensor4, bn: &BnParams) -> Result<Tensor4> {
    bn.validate()?;
    let s = x.shape();
    if bn.channels() != s.c {
        return Err(Error::ShapeMismatch {
            op: "batch_norm_infer",
            left: s,
            right: Shape::new(1, bn.channels(), 1, 1),
        });
    }
    let mut out = x.clone();
    batch_norm_in_place(&mut out, bn);
    Ok(out)
}

pub(crate) fn batch_norm_in_place(x: &mut Tensor4, bn: &BnParams) {
    let s = x.shape();
    let affine = bn.affine();
    for n in 0..s.n {
        for (c, &(scale, shift)) in affine.iter().enumerate() {
            x.plane_mut(n, c)
                .iter_mut()
                .for_each(|v| *v = (*v as f64 * scale + shift) as f32);
        }
    }
}

/// Merges `bn` into the preceding convolution so that
/// `conv2d(x, fold(p, bn)) == batch_norm_infer(conv2d(x, p), bn)`.
pub fn fold_bn_into_conv(p: &ConvParams, bn: &BnParams) -> Result<ConvParams> {
    bn.validate()?;
    let ws = p.weight.shape();
    if bn.channels() != ws.n {
        return Err(Error::ShapeMismatch {
            op: "fold_bn_into_conv",
            left: ws,
            right: Shape::new(bn.channels(), 1, 1, 1),
        });
    }
    let per_out = ws.c * ws.h * ws.w;
    let mut weight = p.weight.clone();
    let mut bias = Vec::with_capacity(ws.n);
    for oc in 0..ws.n {
        let scale = bn.gamma[oc] as f64 / (bn.running_var[oc] as f64 + bn.eps as f64).sqrt();
        weight.data_mut()[oc * per_out..(oc + 1) * per_out]
            .iter_mut()
            .for_each(|w| *w = (*w as f64 * scale) as f32);
        let b = p.bias.as_ref().map_or(0.0, |b| b[oc] as f64);
        bias.push(((b - bn.running_mean[oc] as f64) * scale + bn.beta[oc] as f64) as f32);
    }
    Ok(ConvParams {
        weight,
        bias: Some(bias),
        ..p.clone()
    })
}
