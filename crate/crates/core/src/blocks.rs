//! Composite blocks: conv+BN units, the stem, residual BasicBlock and
//! Bottleneck, the Dilated Path and the prediction heads.

use crate::error::{Error, Result};
use crate::kernels::norm::batch_norm_in_place;
use crate::kernels::{bilinear_resize, conv2d, fold_bn_into_conv, relu_in_place, BnParams, ConvParams, BN_EPS};
use crate::params::{Role, TensorSource};
use crate::receptive::LayerGeom;
use crate::tensor::{Shape, Tensor4};

/// Geometry of one convolution to be loaded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub dilation: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_c: usize, out_c: usize, kernel: (usize, usize)) -> Self {
        ConvSpec {
            in_c,
            out_c,
            kernel,
            stride: 1,
            dilation: 1,
            bias: false,
        }
    }

    pub fn k3(in_c: usize, out_c: usize) -> Self {
        Self::new(in_c, out_c, (3, 3))
    }

    pub fn k1(in_c: usize, out_c: usize) -> Self {
        Self::new(in_c, out_c, (1, 1))
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn bias(mut self) -> Self {
        self.bias = true;
        self
    }

    /// Loads `{prefix}.w` (and `{prefix}.b`) with centred padding
    /// `d·(k−1)/2` per axis.
    pub fn load(&self, src: &mut dyn TensorSource, prefix: &str) -> Result<ConvParams> {
        let (kh, kw) = self.kernel;
        let dims = [self.out_c, self.in_c, kh, kw];
        let fan_in = self.in_c * kh * kw;
        let data = src.fetch(&format!("{prefix}.w"), &dims, Role::ConvWeight { fan_in })?;
        let weight = Tensor4::from_vec(Shape::new(self.out_c, self.in_c, kh, kw), data)?;
        let mut p = ConvParams::new(weight)
            .with_stride(self.stride, self.stride)
            .with_dilation(self.dilation, self.dilation)
            .with_padding(self.dilation * (kh - 1) / 2, self.dilation * (kw - 1) / 2);
        if self.bias {
            p = p.with_bias(src.fetch(&format!("{prefix}.b"), &[self.out_c], Role::ConvBias)?);
        }
        Ok(p)
    }
}

pub fn load_bn(src: &mut dyn TensorSource, prefix: &str, c: usize) -> Result<BnParams> {
    let mut get = |leaf: &str, role| src.fetch(&format!("{prefix}.bn.{leaf}"), &[c], role);
    Ok(BnParams {
        gamma: get("gamma", Role::BnGamma)?,
        beta: get("beta", Role::BnBeta)?,
        running_mean: get("mean", Role::BnMean)?,
        running_var: get("var", Role::BnVar)?,
        eps: BN_EPS,
    })
}

/// Convolution, optional batch norm, optional ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn {
    pub conv: ConvParams,
    pub bn: Option<BnParams>,
    pub relu: bool,
}

impl ConvBn {
    pub fn load(src: &mut dyn TensorSource, prefix: &str, spec: ConvSpec, relu: bool) -> Result<Self> {
        let conv = spec.load(src, prefix)?;
        let bn = Some(load_bn(src, prefix, spec.out_c)?);
        Ok(ConvBn { conv, bn, relu })
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut y = conv2d(x, &self.conv)?;
        if let Some(bn) = &self.bn {
            batch_norm_in_place(&mut y, bn);
        }
        if self.relu {
            relu_in_place(&mut y);
        }
        Ok(y)
    }

    /// Resets the running statistics to the per-channel mean and biased
    /// variance of the convolution output on `x`, then runs the layer.
    /// Statistics stay untouched when there is a single value per channel,
    /// and a channel that is constant keeps unit variance.
    pub fn calibrate(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let mut y = conv2d(x, &self.conv)?;
        let s = y.shape();
        let count = (s.n * s.plane()) as f64;
        if let Some(bn) = self.bn.as_mut().filter(|_| count > 1.0) {
            for c in 0..s.c {
                let vals = (0..s.n).flat_map(|n| y.plane(n, c).iter().map(|&v| v as f64));
                let mean = vals.clone().sum::<f64>() / count;
                let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / count;
                bn.running_mean[c] = mean as f32;
                bn.running_var[c] = if var > 0.0 { var as f32 } else { 1.0 };
            }
        }
        if let Some(bn) = &self.bn {
            batch_norm_in_place(&mut y, bn);
        }
        if self.relu {
            relu_in_place(&mut y);
        }
        Ok(y)
    }

    /// Same computation with the batch norm merged into the convolution.
    pub fn folded(&self) -> Result<Self> {
        Ok(match &self.bn {
            Some(bn) => ConvBn {
                conv: fold_bn_into_conv(&self.conv, bn)?,
                bn: None,
                relu: self.relu,
            },
            None => self.clone(),
        })
    }

    pub fn out_shape(&self, x: Shape) -> Result<Shape> {
        self.conv.output_shape(x)
    }

    /// Stored elements: weights, bias and the four BN vectors.
    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.as_ref().map_or(0, |b| 4 * b.channels())
    }

    pub fn geometry(&self) -> LayerGeom {
        LayerGeom::of(&self.conv)
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Stem,
    Basic,
    Bottleneck,
    DpStage,
    Head,
}

/// Channel/stride contract of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub in_c: usize,
    pub out_c: usize,
    pub stride: usize,
    pub dilation: usize,
    pub kind: BlockKind,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, in_c: usize, out_c: usize, stride: usize) -> Self {
        BlockSpec {
            in_c,
            out_c,
            stride,
            dilation: 1,
            kind,
        }
    }

    pub fn with_dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.stride, 1 | 2) || self.dilation == 0 || self.in_c == 0 || self.out_c == 0 {
            return Err(Error::invalid("block", format!("{self:?}")));
        }
        Ok(())
    }

    /// Output shape implied by the contract, with ceil rounding on stride 2.
    pub fn expected_out(&self, x: Shape) -> Shape {
        Shape::new(x.n, self.out_c, x.h.div_ceil(self.stride), x.w.div_ceil(self.stride))
    }
}

fn check_channels(op: &'static str, x: Shape, expected: usize) -> Result<()> {
    if x.c != expected {
        return Err(Error::ShapeMismatch {
            op,
            left: x,
            right: Shape::new(x.n, expected, x.h, x.w),
        });
    }
    Ok(())
}

fn residual_join(mut main: Tensor4, shortcut: &Tensor4) -> Result<Tensor4> {
    if main.shape() != shortcut.shape() {
        return Err(Error::ShapeMismatch {
            op: "residual",
            left: main.shape(),
            right: shortcut.shape(),
        });
    }
    main.data_mut()
        .iter_mut()
        .zip(shortcut.data())
        .for_each(|(m, &s)| *m = (*m + s).max(0.0));
    Ok(main)
}

/// Two stride-2 3×3 conv+BN+ReLU stages, 3 → c → c.
#[derive(Debug, Clone, PartialEq)]
pub struct Stem {
    pub spec: BlockSpec,
    pub convs: [ConvBn; 2],
}

impl Stem {
    pub fn load(src: &mut dyn TensorSource, prefix: &str, spec: BlockSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Stem {
            spec,
            convs: [
                ConvBn::load(src, &format!("{prefix}.0"), ConvSpec::k3(spec.in_c, spec.out_c).stride(2), true)?,
                ConvBn::load(src, &format!("{prefix}.1"), ConvSpec::k3(spec.out_c, spec.out_c).stride(2), true)?,
            ],
        })
    }

    pub fn forward(&self, img: &Tensor4) -> Result<Tensor4> {
        check_channels("stem", img.shape(), self.spec.in_c)?;
        self.convs[1].forward(&self.convs[0].forward(img)?)
    }

    pub fn calibrate(&mut self, img: &Tensor4) -> Result<Tensor4> {
        check_channels("stem", img.shape(), self.spec.in_c)?;
        let x = self.convs[0].calibrate(img)?;
        self.convs[1].calibrate(&x)
    }

    pub fn folded(&self) -> Result<Self> {
        Ok(Stem {
            spec: self.spec,
            convs: [self.convs[0].folded()?, self.convs[1].folded()?],
        })
    }

    pub fn out_shape(&self, x: Shape) -> Result<Shape> {
        self.convs[1].out_shape(self.convs[0].out_shape(x)?)
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(ConvBn::param_count).sum()
    }

    pub fn geometry(&self) -> Vec<LayerGeom> {
        self.convs.iter().map(ConvBn::geometry).collect()
    }
}

/// conv3×3(stride)+BN+ReLU → conv3×3+BN, plus identity or 1×1 projection
/// shortcut, then ReLU. Both convs share the block's dilation.
#[derive(Debug, Clone, PartialEq)]
pub struct BasicBlock {
    pub spec: BlockSpec,
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub shortcut: Option<ConvBn>,
}

impl BasicBlock {
    pub fn load(src: &mut dyn TensorSource, prefix: &str, spec: BlockSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dilation;
        let conv1 = ConvBn::load(
            src,
            &format!("{prefix}.conv1"),
            ConvSpec::k3(spec.in_c, spec.out_c).stride(spec.stride).dilation(d),
            true,
        )?;
        let conv2 = ConvBn::load(src, &format!("{prefix}.conv2"), ConvSpec::k3(spec.out_c, spec.out_c).dilation(d), false)?;
        let shortcut = if spec.stride != 1 || spec.in_c != spec.out_c {
            Some(ConvBn::load(
                src,
                &format!("{prefix}.down"),
                ConvSpec::k1(spec.in_c, spec.out_c).stride(spec.stride),
                false,
            )?)
        } else {
            None
        };
        Ok(BasicBlock {
            spec,
            conv1,
            conv2,
            shortcut,
        })
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        check_channels("basic_block", x.shape(), self.spec.in_c)?;
        let main = self.conv2.forward(&self.conv1.forward(x)?)?;
        match &self.shortcut {
            Some(sc) => residual_join(main, &sc.forward(x)?),
            None => residual_join(main, x),
        }
    }

    pub fn calibrate(&mut self, x: &Tensor4) -> Result<Tensor4> {
        check_channels("basic_block", x.shape(), self.spec.in_c)?;
        let h = self.conv1.calibrate(x)?;
        let main = self.conv2.calibrate(&h)?;
        match &mut self.shortcut {
            Some(sc) => residual_join(main, &sc.calibrate(x)?),
            None => residual_join(main, x),
        }
    }

    pub fn folded(&self) -> Result<Self> {
        Ok(BasicBlock {
            spec: self.spec,
            conv1: self.conv1.folded()?,
            conv2: self.conv2.folded()?,
            shortcut: self.shortcut.as_ref().map(ConvBn::folded).transpose()?,
        })
    }

    pub fn out_shape(&self, x: Shape) -> Result<Shape> {
        self.conv2.out_shape(self.conv1.out_shape(x)?)
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count() + self.shortcut.as_ref().map_or(0, ConvBn::param_count)
    }

    pub fn geometry(&self) -> Vec<LayerGeom> {
        vec![self.conv1.geometry(), self.conv2.geometry()]
    }
}

/// Internal width = out_c / BOTTLENECK_EXPANSION.
pub const BOTTLENECK_EXPANSION: usize = 2;

/// 1×1 reduce → 3×3 (stride) → 1×1 expand with a projection shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck {
    pub spec: BlockSpec,
    pub reduce: ConvBn,
    pub conv: ConvBn,
    pub expand: ConvBn,
    pub shortcut: ConvBn,
}

impl Bottleneck {
    pub fn mid_channels(spec: &BlockSpec) -> usize {
        (spec.out_c / BOTTLENECK_EXPANSION).max(1)
    }

    pub fn load(src: &mut dyn TensorSource, prefix: &str, spec: BlockSpec) -> Result<Self> {
        spec.validate()?;
        let mid = Self::mid_channels(&spec);
        Ok(Bottleneck {
            spec,
            reduce: ConvBn::load(src, &format!("{prefix}.reduce"), ConvSpec::k1(spec.in_c, mid), true)?,
            conv: ConvBn::load(src, &format!("{prefix}.conv"), ConvSpec::k3(mid, mid).stride(spec.stride), true)?,
            expand: ConvBn::load(src, &format!("{prefix}.expand"), ConvSpec::k1(mid, spec.out_c), false)?,
            shortcut: ConvBn::load(
                src,
                &format!("{prefix}.down"),
                ConvSpec::k1(spec.in_c, spec.out_c).stride(spec.stride),
                false,
            )?,
        })
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        check_channels("bottleneck", x.shape(), self.spec.in_c)?;
        let main = self.expand.forward(&self.conv.forward(&self.reduce.forward(x)?)?)?;
        residual_join(main, &self.shortcut.forward(x)?)
    }

    pub fn calibrate(&mut self, x: &Tensor4) -> Result<Tensor4> {
        check_channels("bottleneck", x.shape(), self.spec.in_c)?;
        let h = self.reduce.calibrate(x)?;
        let h = self.conv.calibrate(&h)?;
        let main = self.expand.calibrate(&h)?;
        residual_join(main, &self.shortcut.calibrate(x)?)
    }

    pub fn folded(&self) -> Result<Self> {
        Ok(Bottleneck {
            spec: self.spec,
            reduce: self.reduce.folded()?,
            conv: self.conv.folded()?,
            expand: self.expand.folded()?,
            shortcut: self.shortcut.folded()?,
        })
    }

    pub fn out_shape(&self, x: Shape) -> Result<Shape> {
        self.expand.out_shape(self.conv.out_shape(self.reduce.out_shape(x)?)?)
    }

    pub fn param_count(&self) -> usize {
        [&self.reduce, &self.conv, &self.expand, &self.shortcut]
            .iter()
            .map(|c| c.param_count())
            .sum()
    }

    pub fn geometry(&self) -> Vec<LayerGeom> {
        vec![self.reduce.geometry(), self.conv.geometry(), self.expand.geometry()]
    }
}

/// A residual block inside an encoder stage.
#[derive(Debug, Clone, PartialEq)]
pub enum ResBlock {
    Basic(BasicBlock),
    Bottleneck(Bottleneck),
}

impl ResBlock {
    pub fn load(src: &mut dyn TensorSource, prefix: &str, spec: BlockSpec) -> Result<Self> {
        match spec.kind {
            BlockKind::Basic | BlockKind::DpStage => Ok(ResBlock::Basic(BasicBlock::load(src, prefix, spec)?)),
            BlockKind::Bottleneck => Ok(ResBlock::Bottleneck(Bottleneck::load(src, prefix, spec)?)),
            kind => Err(Error::invalid("res_block", format!("{kind:?} is not a residual block"))),
        }
    }

    pub fn spec(&self) -> &BlockSpec {
        match self {
            ResBlock::Basic(b) => &b.spec,
            ResBlock::Bottleneck(b) => &b.spec,
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        match self {
            ResBlock::Basic(b) => b.forward(x),
            ResBlock::Bottleneck(b) => b.forward(x),
        }
    }

    pub fn calibrate(&mut self, x: &Tensor4) -> Result<Tensor4> {
        match self {
            ResBlock::Basic(b) => b.calibrate(x),
            ResBlock::Bottleneck(b) => b.calibrate(x),
        }
    }

    pub fn folded(&self) -> Result<Self> {
        Ok(match self {
            ResBlock::Basic(b) => ResBlock::Basic(b.folded()?),
            ResBlock::Bottleneck(b) => ResBlock::Bottleneck(b.folded()?),
        })
    }

    pub fn out_shape(&self, x: Shape) -> Result<Shape> {
        match self {
            ResBlock::Basic(b) => b.out_shape(x),
            ResBlock::Bottleneck(b) => b.out_shape(x),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ResBlock::Basic(b) => b.param_count(),
            ResBlock::Bottleneck(b) => b.param_count(),
        }
    }

    pub fn geometry(&self) -> Vec<LayerGeom> {
        match self {
            ResBlock::Basic(b) => b.geometry(),
            ResBlock::Bottleneck(b) => b.geometry(),
        }
    }
}

/// The three feature maps the decoder takes from the Dilated Path.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTaps {
    pub dp1: Tensor4,
    pub dp2: Tensor4,
    pub x: Tensor4,
}

/// Spatial branch split from Layer 3: two dilated residual blocks (the second
/// with the larger rate) and a closing 3×3 conv+BN+ReLU. Resolution is kept.
#[derive(Debug, Clone, PartialEq)]
pub struct DilatedPath {
    pub dp1: BasicBlock,
    pub dp2: BasicBlock,
    pub out: ConvBn,
}

impl DilatedPath {
    pub fn load(src: &mut dyn TensorSource, prefix: &str, channels: usize, dilations: (usize, usize)) -> Result<Self> {
        let stage = |d| BlockSpec::new(BlockKind::DpStage, channels, channels, 1).with_dilation(d);
        Ok(DilatedPath {
            dp1: BasicBlock::load(src, &format!("{prefix}.dp1"), stage(dilations.0))?,
            dp2: BasicBlock::load(src, &format!("{prefix}.dp2"), stage(dilations.1))?,
            out: ConvBn::load(src, &format!("{prefix}.out"), ConvSpec::k3(channels, channels), true)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.dp1.spec.in_c
    }

    pub fn forward(&self, l3: &Tensor4) -> Result<DpTaps> {
        check_channels("dilated_path", l3.shape(), self.channels())?;
        let dp1 = self.dp1.forward(l3)?;
        let dp2 = self.dp2.forward(&dp1)?;
        let x = self.out.forward(&dp2)?;
        Ok(DpTaps { dp1, dp2, x })
    }

    pub fn calibrate(&mut self, l3: &Tensor4) -> Result<DpTaps> {
        check_channels("dilated_path", l3.shape(), self.channels())?;
        let dp1 = self.dp1.calibrate(l3)?;
        let dp2 = self.dp2.calibrate(&dp1)?;
        let x = self.out.calibrate(&dp2)?;
        Ok(DpTaps { dp1, dp2, x })
    }

    pub fn folded(&self) -> Result<Self> {
        Ok(DilatedPath {
            dp1: self.dp1.folded()?,
            dp2: self.dp2.folded()?,
            out: self.out.folded()?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.dp1.param_count() + self.dp2.param_count() + self.out.param_count()
    }
}

/// conv3×3+BN+ReLU → conv1×1 (with bias) → bilinear resize.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub conv: ConvBn,
    pub classifier: ConvParams,
}

impl Head {
    pub fn load(src: &mut dyn TensorSource, prefix: &str, in_c: usize, mid_c: usize, num_out: usize) -> Result<Self> {
        Ok(Head {
            conv: ConvBn::load(src, &format!("{prefix}.conv"), ConvSpec::k3(in_c, mid_c), true)?,
            classifier: ConvSpec::k1(mid_c, num_out).bias().load(src, &format!("{prefix}.cls"))?,
        })
    }

    pub fn forward(&self, x: &Tensor4, target: (usize, usize)) -> Result<Tensor4> {
        let logits = conv2d(&self.conv.forward(x)?, &self.classifier)?;
        bilinear_resize(&logits, target)
    }

    pub fn calibrate(&mut self, x: &Tensor4, target: (usize, usize)) -> Result<Tensor4> {
        let logits = conv2d(&self.conv.calibrate(x)?, &self.classifier)?;
        bilinear_resize(&logits, target)
    }

    pub fn folded(&self) -> Result<Self> {
        Ok(Head {
            conv: self.conv.folded()?,
            classifier: self.classifier.clone(),
        })
    }

    pub fn num_out(&self) -> usize {
        self.classifier.out_channels()
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.classifier.param_count()
    }

    pub fn geometry(&self) -> Vec<LayerGeom> {
        vec![self.conv.geometry(), LayerGeom::of(&self.classifier)]
    }
}
