//! Segmentation losses. All accumulation is in f64.

use crate::error::{Error, Result};
use crate::tensor::{ClassMap, Shape, Tensor4};

/// Loss constants. The ignore sentinel travels with each [`ClassMap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Pixels whose true-class probability is below this are hard.
    pub ohem_threshold: f64,
    /// Lower bound on the OHEM keep set; `None` means 1/16 of the valid pixels.
    pub ohem_min_kept: Option<usize>,
    pub main_weight: f64,
    pub aux_weight: f64,
    pub boundary_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            ohem_threshold: 0.7,
            ohem_min_kept: None,
            main_weight: 1.0,
            aux_weight: 0.4,
            boundary_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ohem_threshold > 0.0 && self.ohem_threshold < 1.0) {
            return Err(Error::invalid("loss_config", format!("threshold {} not in (0,1)", self.ohem_threshold)));
        }
        if self.ohem_min_kept == Some(0) {
            return Err(Error::invalid("loss_config", "min_kept must be at least 1"));
        }
        let w = [self.main_weight, self.aux_weight, self.boundary_weight];
        if !w.iter().all(|&v| v.is_finite() && v >= 0.0) {
            return Err(Error::invalid("loss_config", format!("negative or non-finite weight in {w:?}")));
        }
        Ok(())
    }

    /// `main·seg + aux·aux + boundary·boundary`.
    pub fn combine(&self, seg: f64, aux: f64, boundary: f64) -> f64 {
        self.main_weight * seg + self.aux_weight * aux + self.boundary_weight * boundary
    }
}

fn check_dims(op: &'static str, logits: Shape, labels: &ClassMap) -> Result<()> {
    if logits.n != 1 || (logits.h, logits.w) != labels.dims() {
        return Err(Error::invalid(
            op,
            format!("logits {logits} do not match {}x{} labels", labels.height(), labels.width()),
        ));
    }
    Ok(())
}

/// Per-pixel `(index, −log p_true, p_true)` for every non-ignored pixel.
fn pixel_losses(op: &'static str, logits: &Tensor4, labels: &ClassMap) -> Result<Vec<(usize, f64, f64)>> {
    let s = logits.shape();
    check_dims(op, s, labels)?;
    labels.validate(s.c)?;
    let p = s.plane();
    let src = logits.data();
    let mut out = Vec::with_capacity(p);
    for (i, &label) in labels.data().iter().enumerate() {
        if label == labels.ignore_value() {
            continue;
        }
        let m = (0..s.c).map(|c| src[c * p + i] as f64).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + (0..s.c).map(|c| (src[c * p + i] as f64 - m).exp()).sum::<f64>().ln();
        let nll = lse - src[label as usize * p + i] as f64;
        out.push((i, nll, (-nll).exp()));
    }
    Ok(out)
}

/// Mean negative log-likelihood of the true class over non-ignored pixels;
/// 0 when every pixel is ignored.
pub fn cross_entropy(logits: &Tensor4, labels: &ClassMap) -> Result<f64> {
    let px = pixel_losses("cross_entropy", logits, labels)?;
    if px.is_empty() {
        return Ok(0.0);
    }
    Ok(px.iter().map(|p| p.1).sum::<f64>() / px.len() as f64)
}

/// Cross entropy over hard pixels only: those with true-class probability
/// below the threshold, topped up with the highest-loss remaining pixels
/// when fewer than `min_kept` qualify.
pub fn ohem_cross_entropy(logits: &Tensor4, labels: &ClassMap, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let mut px = pixel_losses("ohem_cross_entropy", logits, labels)?;
    if px.is_empty() {
        return Ok(0.0);
    }
    let min_kept = cfg.ohem_min_kept.unwrap_or((px.len() / 16).max(1)).min(px.len());
    let hard = px.iter().filter(|p| p.2 < cfg.ohem_threshold).count();
    let kept: Vec<f64> = if hard >= min_kept {
        px.iter().filter(|p| p.2 < cfg.ohem_threshold).map(|p| p.1).collect()
    } else {
        // Stable sort: equal losses keep pixel order.
        px.sort_by(|a, b| b.1.total_cmp(&a.1));
        px[..min_kept].iter().map(|p| p.1).collect()
    };
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Marks a pixel 1 when some 4-neighbour carries a different non-ignored
/// label. Ignored pixels stay ignored and never count as a differing
/// neighbour.
pub fn boundary_targets(labels: &ClassMap) -> ClassMap {
    let (h, w) = labels.dims();
    let ig = labels.ignore_value();
    let mut out = ClassMap::filled(h, w, 0).with_ignore(ig);
    for y in 0..h {
        for x in 0..w {
            let v = labels.get(y, x);
            if v == ig {
                out.set(y, x, ig);
                continue;
            }
            let mut nbrs = [None; 4];
            if y > 0 {
                nbrs[0] = Some((y - 1, x));
            }
            if y + 1 < h {
                nbrs[1] = Some((y + 1, x));
            }
            if x > 0 {
                nbrs[2] = Some((y, x - 1));
            }
            if x + 1 < w {
                nbrs[3] = Some((y, x + 1));
            }
            let edge = nbrs.iter().flatten().any(|&(ny, nx)| {
                let u = labels.get(ny, nx);
                u != ig && u != v
            });
            out.set(y, x, edge as u32);
        }
    }
    out
}

/// Binary cross entropy on logits, with positives weighted by
/// `#negatives / #positives`, averaged over non-ignored pixels. Without
/// positives the weighting is dropped.
pub fn boundary_loss(logits: &Tensor4, targets: &ClassMap) -> Result<f64> {
    let s = logits.shape();
    check_dims("boundary_loss", s, targets)?;
    if s.c != 1 {
        return Err(Error::invalid("boundary_loss", format!("expected one channel, got {s}")));
    }
    let ig = targets.ignore_value();
    let (mut pos, mut neg) = (0usize, 0usize);
    for &t in targets.data() {
        match t {
            _ if t == ig => {}
            0 => neg += 1,
            1 => pos += 1,
            _ => {
                return Err(Error::invalid("boundary_loss", format!("target {t} is not binary")));
            }
        }
    }
    if pos + neg == 0 {
        return Ok(0.0);
    }
    let w_pos = if pos == 0 { 1.0 } else { neg as f64 / pos as f64 };
    let mut sum = 0.0;
    for (&z, &t) in logits.data().iter().zip(targets.data()) {
        if t == ig {
            continue;
        }
        let z = z as f64;
        // −log σ(z) = softplus(−z), −log(1 − σ(z)) = softplus(z)
        let softplus = |v: f64| v.max(0.0) + (-v.abs()).exp().ln_1p();
        sum += if t == 1 { w_pos * softplus(-z) } else { softplus(z) };
    }
    Ok(sum / (pos + neg) as f64)
}
