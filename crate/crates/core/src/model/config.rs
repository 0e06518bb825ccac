use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::GeomConfig;
use crate::graph::GraphConfig;
use crate::tasks::LabelDims;

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| {
                        let names: Vec<_> = Self::ALL.iter().map(|v| v.name()).collect();
                        format!("unknown {} {s:?} (expected one of {})", stringify!($name), names.join(", "))
                    })
            }
        }
    };
}

named_enum!(
    /// Graph pooling used before the task heads.
    ReadoutKind {
        TaskAware => "task_aware",
        Sum => "sum",
        WeightedPrompt => "weighted_prompt",
    }
);

named_enum!(
    /// `homogeneous` shares one `W_r`, `w_r`, `e_r` across all relations.
    RelationMode {
        Hetero => "hetero",
        Homogeneous => "homogeneous",
    }
);

named_enum!(
    NormKind {
        Batch => "batch",
        Layer => "layer",
    }
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub edge_dim: usize,
    pub readout: ReadoutKind,
    pub relations: RelationMode,
    pub norm: NormKind,
    pub norm_eps: f64,
    pub bn_momentum: f64,
    pub geom: GeomConfig,
    pub graph: GraphConfig,
    pub label_dims: LabelDims,
    /// Test hook: adds `coord_leak * Σ_c X[:, c, 0]` to every hidden
    /// feature, breaking invariance on purpose.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub coord_leak: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            hidden: 256,
            heads: 4,
            edge_dim: 16,
            readout: ReadoutKind::TaskAware,
            relations: RelationMode::Hetero,
            norm: NormKind::Batch,
            norm_eps: 1e-5,
            bn_momentum: 0.1,
            geom: GeomConfig::default(),
            graph: GraphConfig::default(),
            label_dims: LabelDims::default(),
            coord_leak: 0.0,
        }
    }
}

impl ModelConfig {
    /// Small configuration for tests and demos.
    pub fn tiny(hidden: usize, layers: usize, label_dims: LabelDims) -> Self {
        Self {
            layers,
            hidden,
            heads: 2,
            edge_dim: 4,
            geom: GeomConfig {
                attr_dim: 4,
                ..GeomConfig::default()
            },
            label_dims,
            ..Self::default()
        }
    }

    /// Width of the concatenated layer outputs.
    pub fn readout_dim(&self) -> usize {
        self.layers * self.hidden
    }

    pub fn head_dim(&self) -> usize {
        self.readout_dim() / self.heads
    }

    pub fn relation_slots(&self) -> usize {
        match self.relations {
            RelationMode::Hetero => crate::graph::RelationKind::COUNT,
            RelationMode::Homogeneous => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.edge_dim == 0 {
            return Err(Error::config("layers, hidden, heads and edge_dim must be positive"));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(self.norm_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) || !self.coord_leak.is_finite() {
            return Err(Error::config("norm_eps must be positive and bn_momentum in [0, 1]"));
        }
        self.geom.validate()?;
        self.label_dims.validated().map_err(Error::config)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_shape_laws() {
        let c = ModelConfig::default();
        assert_eq!(c.readout_dim(), 1536);
        assert_eq!(c.head_dim(), 384);
        c.validate().unwrap();
        let bad = ModelConfig { heads: 3, ..c.clone() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let text = serde_json::to_string(&c).unwrap();
        assert!(!text.contains("coord_leak"));
        assert_eq!(serde_json::from_str::<ModelConfig>(&text).unwrap(), c);
    }

    #[test]
    fn enum_names() {
        assert_eq!("weighted_prompt".parse::<ReadoutKind>().unwrap(), ReadoutKind::WeightedPrompt);
        assert_eq!(RelationMode::Homogeneous.to_string(), "homogeneous");
        assert!("mean".parse::<ReadoutKind>().is_err());
    }
}
