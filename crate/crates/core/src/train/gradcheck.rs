//! Central-difference gradient checking.

use crate::error::{Error, Result};
use crate::io::init::SplitMix64;
use crate::params::{Role, TensorSource};
use crate::sad::{sad_backward, sad_flatten, sad_forward, sad_forward_f64, SadWeights, SAD_TENSORS};
use crate::tensor::{Shape, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates probed per tensor; smaller tensors are probed in full.
    pub samples: usize,
    pub seed: u64,
    /// Relative errors are taken against `max(|analytic|, |numeric|, rel_floor)`.
    pub rel_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-3,
            samples: 64,
            seed: 0,
            rel_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_abs: f64,
    pub max_rel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_abs).fold(0.0, f64::max)
    }
}

fn sample_indices(len: usize, k: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if len <= k {
        return idx;
    }
    for i in 0..k {
        let j = i + rng.below(len - i);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Compares `analytic` against `(f(p + eps) − f(p − eps)) / 2eps` on a
/// random subsample of each tensor's coordinates. `params` is restored
/// before returning.
pub fn finite_diff_check<F>(
    mut f: F,
    names: &[&str],
    params: &mut [Vec<f64>],
    analytic: &[Vec<f64>],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    if names.len() != params.len() || params.len() != analytic.len() {
        return Err(Error::invalid("finite_diff_check", "names, params and gradients differ in count"));
    }
    if let Some(t) = params.iter().zip(analytic).position(|(p, g)| p.len() != g.len()) {
        return Err(Error::invalid(
            "finite_diff_check",
            format!("gradient of `{}` has the wrong length", names[t]),
        ));
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let mut tensors = Vec::with_capacity(names.len());
    for t in 0..params.len() {
        let coords = sample_indices(params[t].len(), cfg.samples, &mut rng);
        let (mut max_abs, mut max_rel) = (0f64, 0f64);
        for &i in &coords {
            let orig = params[t][i];
            params[t][i] = orig + cfg.eps;
            let up = f(params);
            params[t][i] = orig - cfg.eps;
            let down = f(params);
            params[t][i] = orig;
            let numeric = (up - down) / (2.0 * cfg.eps);
            let a = analytic[t][i];
            let err = (a - numeric).abs();
            max_abs = max_abs.max(err);
            max_rel = max_rel.max(err / a.abs().max(numeric.abs()).max(cfg.rel_floor));
        }
        tensors.push(TensorCheck {
            name: names[t].to_string(),
            checked: coords.len(),
            max_abs,
            max_rel,
        });
    }
    Ok(GradCheckReport { tensors })
}

/// Fills every tensor uniformly in ±scale.
struct UniformSource {
    rng: SplitMix64,
    scale: f64,
}

impl TensorSource for UniformSource {
    fn fetch(&mut self, _name: &str, dims: &[usize], _role: Role) -> Result<Vec<f32>> {
        let n: usize = dims.iter().product();
        Ok((0..n).map(|_| self.rng.uniform(-self.scale, self.scale) as f32).collect())
    }
}

/// Checks `sad_backward` on a random instance of the given shape, with the
/// sum of the decoder outputs as the loss.
pub fn sad_gradcheck(shape: Shape, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut src = UniformSource {
        rng: SplitMix64::new(cfg.seed ^ 0x5ad0_5ad0_5ad0_5ad0),
        scale: 0.5,
    };
    let w = SadWeights::load(&mut src, "sad", shape.c)?;
    let mut input = || Tensor4::from_fn(shape, |_, _, _, _| src.rng.uniform(-1.0, 1.0) as f32);
    let (x, dp1, dp2, y) = (input(), input(), input(), input());
    let (out, cache) = sad_forward(&x, &dp1, &dp2, &y, &w)?;
    let grads = sad_backward(&cache, &Tensor4::ones_like(&out), &w)?;
    let analytic: Vec<Vec<f64>> = grads.named().into_iter().map(|(_, g)| g.to_vec()).collect();
    let mut params = sad_flatten(&x, &dp1, &dp2, &y, &w);
    let loss = |p: &[Vec<f64>]| {
        sad_forward_f64(shape, p, &w)
            .expect("shapes fixed above")
            .iter()
            .sum::<f64>()
    };
    finite_diff_check(loss, &SAD_TENSORS, &mut params, &analytic, cfg)
}
