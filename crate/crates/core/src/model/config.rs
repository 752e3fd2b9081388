use crate::blocks::{BlockKind, BlockSpec};
use crate::context::ApppmConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    S,
    M,
}

impl Variant {
    /// BasicBlock repeats of Layers 1–6 (the stem is a single block).
    pub const fn repeats(self) -> [usize; 6] {
        match self {
            Variant::S => [2, 2, 2, 2, 2, 1],
            Variant::M => [3, 3, 3, 9, 3, 1],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::S => "SANet-S",
            Variant::M => "SANet-M",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" => Ok(Variant::S),
            "m" => Ok(Variant::M),
            _ => Err(Error::invalid("variant", format!("unknown variant `{s}`, expected s or m"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextKind {
    Apppm,
    Ppm,
}

pub const STAGE_NAMES: [&str; 6] = ["l1", "l2", "l3", "l4", "l5", "l6"];
pub const STAGE_STRIDES: [usize; 6] = [1, 2, 1, 2, 2, 2];
pub const STEM_CHANNELS: usize = 32;
pub const STAGE_CHANNELS: [usize; 6] = [32, 64, 128, 128, 256, 512];
pub const CONTEXT_CHANNELS: usize = 128;
/// Smallest accepted image side; the 1/64 map is then at least 1×1.
pub const MIN_INPUT_SIDE: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stage_channels: [usize; 6],
    pub repeats: [usize; 6],
    pub dp_dilations: (usize, usize),
    pub num_classes: usize,
    pub context: ContextKind,
    pub apppm: ApppmConfig,
    /// Width of the SAD decoder; equals the Layer-3 / DP / context width.
    pub decoder_channels: usize,
    /// Hidden width of the segmentation, auxiliary and boundary heads.
    pub head_channels: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, num_classes: usize) -> Self {
        ModelConfig {
            variant,
            in_channels: 3,
            stem_channels: STEM_CHANNELS,
            stage_channels: STAGE_CHANNELS,
            repeats: variant.repeats(),
            dp_dilations: (2, 4),
            num_classes,
            context: ContextKind::Apppm,
            apppm: ApppmConfig::default(),
            decoder_channels: CONTEXT_CHANNELS,
            head_channels: 128,
        }
    }

    pub fn with_context(mut self, context: ContextKind) -> Self {
        self.context = context;
        self
    }

    /// Same topology with every width set to 1; used for impulse probes.
    pub fn collapsed(&self) -> Self {
        ModelConfig {
            stem_channels: 1,
            stage_channels: [1; 6],
            num_classes: 1,
            apppm: ApppmConfig {
                in_c: 1,
                branch_c: 1,
                out_c: 1,
                grids: self.apppm.grids.clone(),
            },
            decoder_channels: 1,
            head_channels: 1,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("model_config", msg));
        if self.repeats != self.variant.repeats() {
            return bad(format!("repeats {:?} do not match {}", self.repeats, self.variant.name()));
        }
        if self.num_classes == 0 || self.in_channels == 0 || self.head_channels == 0 {
            return bad("zero class, input or head width".into());
        }
        if self.dp_dilations.0 == 0 || self.dp_dilations.1 <= self.dp_dilations.0 {
            return bad(format!("DP dilations {:?} must increase", self.dp_dilations));
        }
        let l3 = self.stage_channels[2];
        if self.apppm.in_c != self.stage_channels[5] {
            return bad("context input width differs from Layer 6".into());
        }
        if self.apppm.out_c != l3 || self.decoder_channels != l3 {
            return bad("context output and decoder width must equal the Layer-3 width".into());
        }
        if self.stage_channels.contains(&0) || self.stem_channels == 0 {
            return bad("zero stage width".into());
        }
        self.apppm.validate()
    }

    /// Block contracts of Layers 1–6 in order.
    pub fn stage_specs(&self) -> Vec<(&'static str, Vec<BlockSpec>)> {
        let mut in_c = self.stem_channels;
        STAGE_NAMES
            .iter()
            .enumerate()
            .map(|(i, &name)| {
                let out_c = self.stage_channels[i];
                let kind = if i == 5 { BlockKind::Bottleneck } else { BlockKind::Basic };
                let specs = (0..self.repeats[i])
                    .map(|b| {
                        if b == 0 {
                            BlockSpec::new(kind, in_c, out_c, STAGE_STRIDES[i])
                        } else {
                            BlockSpec::new(kind, out_c, out_c, 1)
                        }
                    })
                    .collect();
                in_c = out_c;
                (name, specs)
            })
            .collect()
    }

    pub fn stem_spec(&self) -> BlockSpec {
        BlockSpec::new(BlockKind::Stem, self.in_channels, self.stem_channels, 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows() {
        let s = ModelConfig::new(Variant::S, 19);
        s.validate().unwrap();
        assert_eq!(s.repeats, [2, 2, 2, 2, 2, 1]);
        assert_eq!(ModelConfig::new(Variant::M, 19).repeats[3], 9);
        let specs = s.stage_specs();
        assert_eq!(specs[5].1[0].kind, BlockKind::Bottleneck);
        assert_eq!(specs[1].1[0].in_c, 32);
        assert_eq!(specs[1].1[0].stride, 2);
        assert_eq!(specs[2].1[0].stride, 1);
        s.collapsed().validate().unwrap();
    }

    #[test]
    fn rejects_inconsistent() {
        let mut c = ModelConfig::new(Variant::S, 19);
        c.repeats[3] = 9;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(Variant::S, 19);
        c.dp_dilations = (4, 2);
        assert!(c.validate().is_err());
        assert!("x".parse::<Variant>().is_err());
        assert_eq!("M".parse::<Variant>().unwrap(), Variant::M);
    }
}
