//! Context aggregation at 1/64 resolution: the asymmetric pooling pyramid
//! (APPPM) and the classic square-grid pyramid (PPM) it is compared against.

use crate::blocks::{ConvBn, ConvSpec};
use crate::error::{Error, Result};
use crate::kernels::{adaptive_avg_pool2d, bilinear_resize, conv2d, sigmoid, ConvParams};
use crate::params::TensorSource;
use crate::tensor::{concat_channels, Shape, Tensor4};

/// Target of one adaptive pooling branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolGrid {
    /// 1×1 global average.
    Global,
    /// `(⌈h/dh⌉, ⌈w/dw⌉)` for an h×w input.
    Divisor(usize, usize),
    /// A fixed output grid.
    Fixed(usize, usize),
}

impl PoolGrid {
    pub fn resolve(&self, h: usize, w: usize) -> (usize, usize) {
        match *self {
            PoolGrid::Global => (1, 1),
            PoolGrid::Divisor(dh, dw) => (h.div_ceil(dh), w.div_ceil(dw)),
            PoolGrid::Fixed(oh, ow) => (oh, ow),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApppmConfig {
    pub in_c: usize,
    pub branch_c: usize,
    pub out_c: usize,
    pub grids: Vec<PoolGrid>,
}

impl Default for ApppmConfig {
    fn default() -> Self {
        ApppmConfig {
            in_c: 512,
            branch_c: 128,
            out_c: 128,
            grids: vec![PoolGrid::Global, PoolGrid::Divisor(2, 1), PoolGrid::Divisor(4, 2)],
        }
    }
}

impl ApppmConfig {
    /// Exactly one global grid, and at least two others each reducing the
    /// two axes at different rates.
    pub fn validate(&self) -> Result<()> {
        let globals = self.grids.iter().filter(|g| **g == PoolGrid::Global).count();
        if globals != 1 {
            return Err(Error::invalid("apppm", format!("{globals} global grids, need exactly 1")));
        }
        let mut asym = 0;
        for g in &self.grids {
            match *g {
                PoolGrid::Global => {}
                PoolGrid::Divisor(a, b) | PoolGrid::Fixed(a, b) => {
                    if a == 0 || b == 0 {
                        return Err(Error::invalid("apppm", format!("zero in grid {g:?}")));
                    }
                    if a == b {
                        return Err(Error::invalid("apppm", format!("grid {g:?} is symmetric")));
                    }
                    asym += 1;
                }
            }
        }
        if asym < 2 {
            return Err(Error::invalid("apppm", "need at least two asymmetric grids"));
        }
        if self.in_c == 0 || self.branch_c == 0 || self.out_c == 0 {
            return Err(Error::invalid("apppm", "zero channel count"));
        }
        Ok(())
    }
}

/// `σ(conv1×3(s)) + σ(conv3×1(s))`, both convs biased and size-preserving.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAxisAttention {
    /// 1×3 kernel, padding (0, 1).
    pub row: ConvParams,
    /// 3×1 kernel, padding (1, 0).
    pub col: ConvParams,
}

/// Intermediates of one attention evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    pub a_row: Tensor4,
    pub a_col: Tensor4,
    /// a_row + a_col, strictly inside (0, 2).
    pub a: Tensor4,
}

impl DualAxisAttention {
    pub fn load(src: &mut dyn TensorSource, prefix: &str, c: usize) -> Result<Self> {
        Ok(DualAxisAttention {
            row: ConvSpec::new(c, c, (1, 3)).bias().load(src, &format!("{prefix}.row"))?,
            col: ConvSpec::new(c, c, (3, 1)).bias().load(src, &format!("{prefix}.col"))?,
        })
    }

    pub fn forward(&self, s: &Tensor4) -> Result<AttentionMaps> {
        let a_row = conv2d(s, &self.row)?.map(sigmoid);
        let a_col = conv2d(s, &self.col)?.map(sigmoid);
        let a = a_row.add(&a_col)?;
        Ok(AttentionMaps { a_row, a_col, a })
    }

    pub fn param_count(&self) -> usize {
        self.row.param_count() + self.col.param_count()
    }
}

/// `x·(1 + A) + y·(2 − A)`; the two coefficients always sum to 3.
pub fn gated_fuse(x: &Tensor4, y: &Tensor4, a: &Tensor4) -> Result<Tensor4> {
    for other in [y, a] {
        if other.shape() != x.shape() {
            return Err(Error::ShapeMismatch {
                op: "gated_fuse",
                left: x.shape(),
                right: other.shape(),
            });
        }
    }
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(a.data())
        .map(|((&xv, &yv), &av)| xv * (1.0 + av) + yv * (2.0 - av))
        .collect();
    Tensor4::from_vec(x.shape(), data)
}

/// Intermediates of one APPPM evaluation, exposed for inspection.
#[derive(Debug, Clone)]
pub struct ApppmTrace {
    /// Branch outputs resized back to the input size, in grid order.
    pub branches: Vec<Tensor4>,
    pub residual: Tensor4,
    pub fused: Tensor4,
    pub attention: AttentionMaps,
    pub output: Tensor4,
}

/// Asymmetric pooling pyramid over the 1/64 feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Apppm {
    pub cfg: ApppmConfig,
    /// One conv+BN+ReLU per grid: 1×1 after the global pool, 3×3 otherwise.
    pub branches: Vec<ConvBn>,
    /// 1×1 conv+BN on the raw input.
    pub residual: ConvBn,
    /// 3×3 conv+BN+ReLU over the concatenated branches.
    pub fuse: ConvBn,
    pub attention: DualAxisAttention,
    pub out: ConvParams,
}

impl Apppm {
    pub fn load(src: &mut dyn TensorSource, prefix: &str, cfg: &ApppmConfig) -> Result<Self> {
        cfg.validate()?;
        let branches = cfg
            .grids
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let spec = match g {
                    PoolGrid::Global => ConvSpec::k1(cfg.in_c, cfg.branch_c),
                    _ => ConvSpec::k3(cfg.in_c, cfg.branch_c),
                };
                ConvBn::load(src, &format!("{prefix}.branch{i}"), spec, true)
            })
            .collect::<Result<Vec<_>>>()?;
        let concat_c = cfg.branch_c * cfg.grids.len();
        Ok(Apppm {
            cfg: cfg.clone(),
            branches,
            residual: ConvBn::load(src, &format!("{prefix}.residual"), ConvSpec::k1(cfg.in_c, cfg.branch_c), false)?,
            fuse: ConvBn::load(src, &format!("{prefix}.fuse"), ConvSpec::k3(concat_c, cfg.branch_c), true)?,
            attention: DualAxisAttention::load(src, &format!("{prefix}.attn"), cfg.branch_c)?,
            out: ConvSpec::k1(cfg.branch_c, cfg.out_c).bias().load(src, &format!("{prefix}.out"))?,
        })
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(self.trace(x)?.output)
    }

    pub fn calibrate(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let s = x.shape();
        if s.c != self.cfg.in_c {
            return Err(Error::ShapeMismatch {
                op: "apppm",
                left: s,
                right: Shape::new(s.n, self.cfg.in_c, s.h, s.w),
            });
        }
        let mut branches = Vec::with_capacity(self.branches.len());
        for (grid, conv) in self.cfg.grids.iter().zip(&mut self.branches) {
            let pooled = adaptive_avg_pool2d(x, grid.resolve(s.h, s.w))?;
            branches.push(bilinear_resize(&conv.calibrate(&pooled)?, (s.h, s.w))?);
        }
        let residual = self.residual.calibrate(x)?;
        let refs: Vec<&Tensor4> = branches.iter().collect();
        let fused = self.fuse.calibrate(&concat_channels(&refs)?)?;
        let attention = self.attention.forward(&fused)?;
        conv2d(&gated_fuse(&fused, &residual, &attention.a)?, &self.out)
    }

    pub fn trace(&self, x: &Tensor4) -> Result<ApppmTrace> {
        let s = x.shape();
        if s.c != self.cfg.in_c {
            return Err(Error::ShapeMismatch {
                op: "apppm",
                left: s,
                right: Shape::new(s.n, self.cfg.in_c, s.h, s.w),
            });
        }
        let mut branches = Vec::with_capacity(self.branches.len());
        for (grid, conv) in self.cfg.grids.iter().zip(&self.branches) {
            let pooled = adaptive_avg_pool2d(x, grid.resolve(s.h, s.w))?;
            branches.push(bilinear_resize(&conv.forward(&pooled)?, (s.h, s.w))?);
        }
        let residual = self.residual.forward(x)?;
        let refs: Vec<&Tensor4> = branches.iter().collect();
        let fused = self.fuse.forward(&concat_channels(&refs)?)?;
        let attention = self.attention.forward(&fused)?;
        let output = conv2d(&gated_fuse(&fused, &residual, &attention.a)?, &self.out)?;
        Ok(ApppmTrace {
            branches,
            residual,
            fused,
            attention,
            output,
        })
    }

    pub fn folded(&self) -> Result<Self> {
        Ok(Apppm {
            cfg: self.cfg.clone(),
            branches: self.branches.iter().map(ConvBn::folded).collect::<Result<_>>()?,
            residual: self.residual.folded()?,
            fuse: self.fuse.folded()?,
            attention: self.attention.clone(),
            out: self.out.clone(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(ConvBn::param_count).sum::<usize>()
            + self.residual.param_count()
            + self.fuse.param_count()
            + self.attention.param_count()
            + self.out.param_count()
    }
}

/// Square grids of the classic pyramid.
pub const PPM_GRIDS: [usize; 4] = [1, 2, 3, 6];

/// Pool to {1,2,3,6}² → 1×1 conv+BN+ReLU → resize → concat with the input
/// → 3×3 conv+BN+ReLU. Grids are clamped to the input size per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Ppm {
    pub in_c: usize,
    pub branches: Vec<ConvBn>,
    pub fuse: ConvBn,
}

impl Ppm {
    pub fn load(src: &mut dyn TensorSource, prefix: &str, in_c: usize, branch_c: usize, out_c: usize) -> Result<Self> {
        let branches = (0..PPM_GRIDS.len())
            .map(|i| ConvBn::load(src, &format!("{prefix}.branch{i}"), ConvSpec::k1(in_c, branch_c), true))
            .collect::<Result<Vec<_>>>()?;
        let concat_c = in_c + branch_c * PPM_GRIDS.len();
        Ok(Ppm {
            in_c,
            branches,
            fuse: ConvBn::load(src, &format!("{prefix}.fuse"), ConvSpec::k3(concat_c, out_c), true)?,
        })
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let s = x.shape();
        if s.c != self.in_c {
            return Err(Error::ShapeMismatch {
                op: "ppm",
                left: s,
                right: Shape::new(s.n, self.in_c, s.h, s.w),
            });
        }
        let mut parts = vec![x.clone()];
        for (&g, conv) in PPM_GRIDS.iter().zip(&self.branches) {
            let pooled = adaptive_avg_pool2d(x, (g.min(s.h), g.min(s.w)))?;
            parts.push(bilinear_resize(&conv.forward(&pooled)?, (s.h, s.w))?);
        }
        let refs: Vec<&Tensor4> = parts.iter().collect();
        self.fuse.forward(&concat_channels(&refs)?)
    }

    pub fn calibrate(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let s = x.shape();
        if s.c != self.in_c {
            return Err(Error::ShapeMismatch {
                op: "ppm",
                left: s,
                right: Shape::new(s.n, self.in_c, s.h, s.w),
            });
        }
        let mut parts = vec![x.clone()];
        for (&g, conv) in PPM_GRIDS.iter().zip(&mut self.branches) {
            let pooled = adaptive_avg_pool2d(x, (g.min(s.h), g.min(s.w)))?;
            parts.push(bilinear_resize(&conv.calibrate(&pooled)?, (s.h, s.w))?);
        }
        let refs: Vec<&Tensor4> = parts.iter().collect();
        self.fuse.calibrate(&concat_channels(&refs)?)
    }

    pub fn folded(&self) -> Result<Self> {
        Ok(Ppm {
            in_c: self.in_c,
            branches: self.branches.iter().map(ConvBn::folded).collect::<Result<_>>()?,
            fuse: self.fuse.folded()?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(ConvBn::param_count).sum::<usize>() + self.fuse.param_count()
    }
}

/// Which context module sits at the end of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextModule {
    Apppm(Apppm),
    Ppm(Ppm),
}

impl ContextModule {
    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        match self {
            ContextModule::Apppm(m) => m.forward(x),
            ContextModule::Ppm(m) => m.forward(x),
        }
    }

    pub fn calibrate(&mut self, x: &Tensor4) -> Result<Tensor4> {
        match self {
            ContextModule::Apppm(m) => m.calibrate(x),
            ContextModule::Ppm(m) => m.calibrate(x),
        }
    }

    pub fn folded(&self) -> Result<Self> {
        Ok(match self {
            ContextModule::Apppm(m) => ContextModule::Apppm(m.folded()?),
            ContextModule::Ppm(m) => ContextModule::Ppm(m.folded()?),
        })
    }

    pub fn param_count(&self) -> usize {
        match self {
            ContextModule::Apppm(m) => m.param_count(),
            ContextModule::Ppm(m) => m.param_count(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ContextModule::Apppm(_) => "apppm",
            ContextModule::Ppm(_) => "ppm",
        }
    }
}
