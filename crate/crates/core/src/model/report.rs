use std::fmt;

use super::{Model, Prefix};
use crate::error::Result;
use crate::receptive::{receptive_field_summary, LayerGeom, RfSummary};
use crate::tensor::Shape;

/// One row of a layer table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRecord {
    pub name: String,
    pub output: Shape,
    /// Residual blocks in the stage; 1 for single modules.
    pub blocks: usize,
    pub params: usize,
    /// Analytic receptive field of the stage output; `None` past global pooling.
    pub rf: Option<RfSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerReport {
    pub model: &'static str,
    pub input: Shape,
    pub records: Vec<StageRecord>,
    pub total_params: usize,
}

/// Shapes, parameter counts and receptive fields per stage, computed
/// without running any convolution.
pub fn describe(model: &Model, h: usize, w: usize) -> Result<LayerReport> {
    let cfg = model.config();
    let input = Shape::new(1, cfg.in_channels, h, w);
    let mut records = Vec::new();
    let mut chain: Vec<LayerGeom> = model.stem.geometry();
    let mut shape = model.stem.out_shape(input)?;
    records.push(StageRecord {
        name: "stem".into(),
        output: shape,
        blocks: 1,
        params: model.stem.param_count(),
        rf: Some(receptive_field_summary(&chain)),
    });
    let mut l3 = shape;
    for (i, stage) in model.stages.iter().enumerate() {
        shape = stage.out_shape(shape)?;
        chain.extend(stage.geometry());
        records.push(StageRecord {
            name: stage.name.into(),
            output: shape,
            blocks: stage.blocks.len(),
            params: stage.param_count(),
            rf: Some(receptive_field_summary(&chain)),
        });
        if i == 2 {
            l3 = shape;
            let mut dp_chain = model.chain(Prefix::Dp2);
            dp_chain.push(model.dp.out.geometry());
            records.push(StageRecord {
                name: "dp".into(),
                output: l3,
                blocks: 2,
                params: model.dp.param_count(),
                rf: Some(receptive_field_summary(&dp_chain)),
            });
        }
    }
    let ctx_c = cfg.apppm.out_c;
    records.push(StageRecord {
        name: model.context.name().into(),
        output: Shape::new(1, ctx_c, shape.h, shape.w),
        blocks: 1,
        params: model.context.param_count(),
        rf: None,
    });
    records.push(StageRecord {
        name: "sad".into(),
        output: Shape::new(1, cfg.decoder_channels, l3.h, l3.w),
        blocks: 1,
        params: model.sad.param_count(),
        rf: None,
    });
    records.push(StageRecord {
        name: "head".into(),
        output: Shape::new(1, cfg.num_classes, h, w),
        blocks: 1,
        params: model.head.param_count(),
        rf: None,
    });
    records.push(StageRecord {
        name: "aux_head".into(),
        output: Shape::new(1, cfg.num_classes, h, w),
        blocks: 1,
        params: model.aux_head.param_count(),
        rf: None,
    });
    records.push(StageRecord {
        name: "boundary_head".into(),
        output: Shape::new(1, 1, h, w),
        blocks: 1,
        params: model.boundary_head.param_count(),
        rf: None,
    });
    Ok(LayerReport {
        model: cfg.variant.name(),
        input,
        total_params: model.param_count(),
        records,
    })
}

impl fmt::Display for LayerReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} on {}", self.model, self.input)?;
        writeln!(f, "{:<14} {:>18} {:>7} {:>12} {:>8}", "stage", "output", "blocks", "params", "rf")?;
        for r in &self.records {
            let rf = match r.rf {
                Some(s) if s.rf.0 == s.rf.1 => format!("{}", s.rf.0),
                Some(s) => format!("{}x{}", s.rf.0, s.rf.1),
                None => "global".into(),
            };
            writeln!(
                f,
                "{:<14} {:>18} {:>7} {:>12} {:>8}",
                r.name,
                r.output.to_string(),
                r.blocks,
                r.params,
                rf
            )?;
        }
        write!(f, "total params: {}", self.total_params)
    }
}
