//! The full network: stem, Layers 1–6, Dilated Path, context module, SAD
//! decoder and heads.
//!
//! ```text
//! img ─ stem ─ L1 ─ L2 ─ L3 ─┬─ L4 ─ L5 ─ L6 ─ context ─ resize ─┐
//!                            │    └─ aux head (training)         │
//!                            └─ DP ─ (dp1, dp2, x) ──────────── SAD ─ head ─ logits
//!                                         └─ boundary head (training)
//! ```

mod config;
mod report;

pub use config::{
    ContextKind, ModelConfig, Variant, CONTEXT_CHANNELS, MIN_INPUT_SIDE, STAGE_CHANNELS, STAGE_NAMES, STAGE_STRIDES,
    STEM_CHANNELS,
};
pub use report::{describe, LayerReport, StageRecord};

use crate::blocks::{DilatedPath, DpTaps, Head, ResBlock, Stem};
use crate::context::{Apppm, ContextModule, Ppm};
use crate::error::{Error, Result};
use crate::io::store::WeightStore;
use crate::kernels::bilinear_resize;
use crate::params::{PositiveSource, StoreSource, TensorSource};
use crate::receptive::{receptive_field_summary, LayerGeom, RfSummary};
use crate::sad::{sad_forward, SadWeights};
use crate::tensor::{softmax_channels, Shape, Tensor4};

/// A Layer: residual blocks in series.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: &'static str,
    pub blocks: Vec<ResBlock>,
}

impl Stage {
    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut blocks = self.blocks.iter();
        let first = blocks.next().expect("stage has at least one block");
        blocks.try_fold(first.forward(x)?, |acc, b| b.forward(&acc))
    }

    pub fn calibrate(&mut self, x: &Tensor4) -> Result<Tensor4> {
        self.blocks.iter_mut().try_fold(x.clone(), |acc, b| b.calibrate(&acc))
    }

    pub fn out_shape(&self, x: Shape) -> Result<Shape> {
        self.blocks.iter().try_fold(x, |s, b| b.out_shape(s))
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(ResBlock::param_count).sum()
    }

    pub fn geometry(&self) -> Vec<LayerGeom> {
        self.blocks.iter().flat_map(ResBlock::geometry).collect()
    }
}

/// Truncation points used for receptive-field analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prefix {
    L3,
    Dp2,
    L6,
}

impl Prefix {
    pub const ALL: [Prefix; 3] = [Prefix::L3, Prefix::Dp2, Prefix::L6];

    pub fn name(self) -> &'static str {
        match self {
            Prefix::L3 => "L3",
            Prefix::Dp2 => "DP2",
            Prefix::L6 => "L6",
        }
    }
}

/// Outputs of a training-mode forward pass, all at input resolution.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub logits: Tensor4,
    /// Semantic logits from the Layer-4 head.
    pub aux: Tensor4,
    /// Single-channel boundary logits from the Dilated Path head.
    pub boundary: Tensor4,
}

/// An immutable network bound to its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    pub stem: Stem,
    pub stages: Vec<Stage>,
    pub dp: DilatedPath,
    pub context: ContextModule,
    pub sad: SadWeights,
    pub head: Head,
    pub aux_head: Head,
    pub boundary_head: Head,
    folded: bool,
}

/// Per-stage output shapes recorded during a forward pass.
pub type Trace = Vec<(&'static str, Shape)>;

impl Model {
    /// Binds `cfg` to the tensors in `weights`; fails on the first missing
    /// or misshapen tensor, naming it.
    pub fn build(cfg: &ModelConfig, weights: &WeightStore) -> Result<Self> {
        Self::from_source(cfg, &mut StoreSource::new(weights))
    }

    pub fn from_source(cfg: &ModelConfig, src: &mut dyn TensorSource) -> Result<Self> {
        cfg.validate()?;
        let stem = Stem::load(src, "stem", cfg.stem_spec())?;
        let stages = cfg
            .stage_specs()
            .into_iter()
            .map(|(name, specs)| {
                let blocks = specs
                    .into_iter()
                    .enumerate()
                    .map(|(i, spec)| ResBlock::load(src, &format!("{name}.block{i}"), spec))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Stage { name, blocks })
            })
            .collect::<Result<Vec<_>>>()?;
        let l3_c = cfg.stage_channels[2];
        let dp = DilatedPath::load(src, "dp", l3_c, cfg.dp_dilations)?;
        let context = match cfg.context {
            ContextKind::Apppm => ContextModule::Apppm(Apppm::load(src, "apppm", &cfg.apppm)?),
            ContextKind::Ppm => ContextModule::Ppm(Ppm::load(
                src,
                "ppm",
                cfg.apppm.in_c,
                cfg.apppm.branch_c,
                cfg.apppm.out_c,
            )?),
        };
        let c = cfg.decoder_channels;
        Ok(Model {
            cfg: cfg.clone(),
            stem,
            stages,
            dp,
            context,
            sad: SadWeights::load(src, "sad", c)?,
            head: Head::load(src, "head", c, cfg.head_channels, cfg.num_classes)?,
            aux_head: Head::load(src, "aux_head", cfg.stage_channels[3], cfg.head_channels, cfg.num_classes)?,
            boundary_head: Head::load(src, "boundary_head", l3_c, cfg.head_channels, 1)?,
            folded: false,
        })
    }

    /// Positive-weight probe with the topology of `cfg` and unit widths.
    pub fn probe(cfg: &ModelConfig) -> Result<Self> {
        Self::from_source(&cfg.collapsed(), &mut PositiveSource)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn is_folded(&self) -> bool {
        self.folded
    }

    /// Copy with every batch norm merged into its convolution.
    pub fn fold_bn(&self) -> Result<Self> {
        Ok(Model {
            cfg: self.cfg.clone(),
            stem: self.stem.folded()?,
            stages: self
                .stages
                .iter()
                .map(|s| {
                    Ok(Stage {
                        name: s.name,
                        blocks: s.blocks.iter().map(ResBlock::folded).collect::<Result<_>>()?,
                    })
                })
                .collect::<Result<_>>()?,
            dp: self.dp.folded()?,
            context: self.context.folded()?,
            sad: self.sad.clone(),
            head: self.head.folded()?,
            aux_head: self.aux_head.folded()?,
            boundary_head: self.boundary_head.folded()?,
            folded: true,
        })
    }

    fn check_input(&self, img: &Tensor4) -> Result<()> {
        let s = img.shape();
        if s.n != 1 || s.c != self.cfg.in_channels {
            return Err(Error::invalid(
                "forward",
                format!("expected 1×{}×H×W image, got {s}", self.cfg.in_channels),
            ));
        }
        if s.h < MIN_INPUT_SIDE || s.w < MIN_INPUT_SIDE {
            return Err(Error::ImageTooSmall {
                h: s.h,
                w: s.w,
                min: MIN_INPUT_SIDE,
            });
        }
        Ok(())
    }

    /// Inference: segmentation logits at input resolution.
    pub fn forward(&self, img: &Tensor4) -> Result<Tensor4> {
        self.check_input(img)?;
        Ok(self.run(img, false, None)?.0)
    }

    /// Inference that also records every stage's output shape.
    pub fn forward_traced(&self, img: &Tensor4) -> Result<(Tensor4, Trace)> {
        self.check_input(img)?;
        let mut trace = Vec::new();
        let (logits, _) = self.run(img, false, Some(&mut trace))?;
        Ok((logits, trace))
    }

    /// Training mode: also evaluates the auxiliary and boundary heads.
    pub fn forward_train(&self, img: &Tensor4) -> Result<TrainOutputs> {
        self.check_input(img)?;
        let (logits, extra) = self.run(img, true, None)?;
        let (aux, boundary) = extra.expect("training heads requested");
        Ok(TrainOutputs { logits, aux, boundary })
    }

    #[allow(clippy::type_complexity)]
    fn run(&self, img: &Tensor4, train: bool, mut trace: Option<&mut Trace>) -> Result<(Tensor4, Option<(Tensor4, Tensor4)>)> {
        let mut record = |name: &'static str, t: &Tensor4| {
            if let Some(tr) = trace.as_deref_mut() {
                tr.push((name, t.shape()));
            }
        };
        let full = (img.shape().h, img.shape().w);
        let mut x = self.stem.forward(img)?;
        record("stem", &x);
        let mut l3 = None;
        let mut l4 = None;
        let mut taps = None;
        for (i, stage) in self.stages.iter().enumerate() {
            x = stage.forward(&x)?;
            record(stage.name, &x);
            if i == 2 {
                let t = self.dp.forward(&x)?;
                record("dp", &t.x);
                taps = Some(t);
                l3 = Some(x.shape());
            }
            if i == 3 && train {
                l4 = Some(x.clone());
            }
        }
        let ctx = self.context.forward(&x)?;
        record(self.context.name(), &ctx);
        let l3 = l3.expect("layer 3 ran");
        let DpTaps { dp1, dp2, x: dp_x } = taps.expect("dilated path ran");
        let y = bilinear_resize(&ctx, (l3.h, l3.w))?;
        let (decoded, _) = sad_forward(&dp_x, &dp1, &dp2, &y, &self.sad)?;
        record("sad", &decoded);
        let logits = self.head.forward(&decoded, full)?;
        record("head", &logits);
        let extra = if train {
            let aux = self.aux_head.forward(l4.as_ref().expect("layer 4 kept"), full)?;
            let boundary = self.boundary_head.forward(&dp_x, full)?;
            Some((aux, boundary))
        } else {
            None
        };
        Ok((logits, extra))
    }

    /// Sets every batch-norm running mean and variance to the statistics its
    /// input produces on `img`, in forward order, as a trained network's
    /// statistics would be. Gives randomly initialized networks unit-scale
    /// activations.
    pub fn calibrate_bn(&mut self, img: &Tensor4) -> Result<()> {
        if self.folded {
            return Err(Error::invalid("calibrate_bn", "batch norm already folded"));
        }
        self.check_input(img)?;
        let full = (img.shape().h, img.shape().w);
        let mut x = self.stem.calibrate(img)?;
        let mut taps = None;
        let mut l4 = None;
        for (i, stage) in self.stages.iter_mut().enumerate() {
            x = stage.calibrate(&x)?;
            if i == 2 {
                taps = Some(self.dp.calibrate(&x)?);
            }
            if i == 3 {
                l4 = Some(x.clone());
            }
        }
        let ctx = self.context.calibrate(&x)?;
        let DpTaps { dp1, dp2, x: dp_x } = taps.expect("dilated path ran");
        let y = bilinear_resize(&ctx, (dp_x.shape().h, dp_x.shape().w))?;
        let (decoded, _) = sad_forward(&dp_x, &dp1, &dp2, &y, &self.sad)?;
        self.head.calibrate(&decoded, full)?;
        self.aux_head.calibrate(l4.as_ref().expect("layer 4 ran"), full)?;
        self.boundary_head.calibrate(&dp_x, full)?;
        Ok(())
    }

    /// Runs the network only up to `prefix`. No minimum input size applies.
    pub fn forward_prefix(&self, img: &Tensor4, prefix: Prefix) -> Result<Tensor4> {
        let mut x = self.stem.forward(img)?;
        for stage in &self.stages[..3] {
            x = stage.forward(&x)?;
        }
        match prefix {
            Prefix::L3 => Ok(x),
            Prefix::Dp2 => Ok(self.dp.forward(&x)?.dp2),
            Prefix::L6 => {
                for stage in &self.stages[3..] {
                    x = stage.forward(&x)?;
                }
                Ok(x)
            }
        }
    }

    /// Layer geometry along the main path to `prefix`.
    pub fn chain(&self, prefix: Prefix) -> Vec<LayerGeom> {
        let mut chain = self.stem.geometry();
        for stage in &self.stages[..3] {
            chain.extend(stage.geometry());
        }
        match prefix {
            Prefix::L3 => {}
            Prefix::Dp2 => {
                chain.extend(self.dp.dp1.geometry());
                chain.extend(self.dp.dp2.geometry());
            }
            Prefix::L6 => {
                for stage in &self.stages[3..] {
                    chain.extend(stage.geometry());
                }
            }
        }
        chain
    }

    /// Empirical receptive field of the prefix output, per axis: the extent of
    /// input rows (columns) whose unit impulse reaches a central output unit.
    /// Meaningful on positive-weight probes such as [`Model::probe`]; each
    /// axis is scanned on an input that is long along that axis and narrow
    /// along the other.
    pub fn impulse_receptive_field(&self, prefix: Prefix) -> Result<(usize, usize)> {
        let RfSummary { rf, jump } = receptive_field_summary(&self.chain(prefix));
        let c = self.cfg.in_channels;
        let run = |x: &Tensor4| self.forward_prefix(x, prefix);
        let extent = |rf: usize, j: usize, cross_j: usize, vertical: bool| -> Result<usize> {
            let long = (rf / (2 * j) + 2) * 2 * j;
            let short = 2 * cross_j + 1;
            let (h, w) = if vertical { (long, short) } else { (short, long) };
            let unit = if vertical { (long / j / 2, 2) } else { (2, long / j / 2) };
            let mut hits = Vec::new();
            for p in 0..long {
                let mut x = Tensor4::zeros(Shape::new(1, c, h, w));
                let at = if vertical { (p, 2 * cross_j) } else { (2 * cross_j, p) };
                for ch in 0..c {
                    x.set(0, ch, at.0, at.1, 1.0);
                }
                let y = run(&x)?;
                if (0..y.shape().c).any(|ch| y.at(0, ch, unit.0, unit.1) != 0.0) {
                    hits.push(p);
                }
            }
            Ok(hits.last().map_or(0, |last| last - hits[0] + 1))
        };
        Ok((extent(rf.0, jump.0, jump.1, true)?, extent(rf.1, jump.1, jump.0, false)?))
    }

    /// Stored element count, including batch-norm statistics.
    pub fn param_count(&self) -> usize {
        self.stem.param_count()
            + self.stages.iter().map(Stage::param_count).sum::<usize>()
            + self.dp.param_count()
            + self.context.param_count()
            + self.sad.param_count()
            + self.head.param_count()
            + self.aux_head.param_count()
            + self.boundary_head.param_count()
    }

    /// Averages class probabilities over rescaled copies of `img`. Each copy
    /// is resized by the scale factor, run, soft-maxed and resized back.
    pub fn multi_scale_infer(&self, img: &Tensor4, scales: &[f64]) -> Result<Tensor4> {
        if scales.is_empty() || !scales.iter().all(|&s| s.is_finite() && s > 0.0) {
            return Err(Error::invalid("multi_scale_infer", format!("bad scales {scales:?}")));
        }
        let s = img.shape();
        let mut acc: Option<Tensor4> = None;
        for &scale in scales {
            let h = ((s.h as f64 * scale).round() as usize).max(1);
            let w = ((s.w as f64 * scale).round() as usize).max(1);
            let scaled = bilinear_resize(img, (h, w))?;
            let probs = softmax_channels(&self.forward(&scaled)?);
            let probs = bilinear_resize(&probs, (s.h, s.w))?;
            acc = Some(match acc {
                None => probs,
                Some(a) => a.add(&probs)?,
            });
        }
        let acc = acc.expect("scales is non-empty");
        Ok(acc.scalar_mul(1.0 / scales.len() as f32))
    }
}
