use serde::{Deserialize, Serialize};

use super::ModelError;

/// Layers per dense block in the high-level encoder.
pub const HFE_LAYERS: usize = 3;

/// LFE branch kernel sizes after the 1x1 branch.
pub const LFE_KERNELS: [usize; 3] = [3, 5, 7];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Width of each of the four LFE branches.
    pub lfe_branch_channels: usize,
    pub hfe_layer_channels: usize,
    /// Width of F_M1, F_M2, every F_L and F_G. Must be `4 * lfe_branch_channels`.
    pub feature_channels: usize,
    pub hfe_blocks: usize,
    pub amg_hidden_channels: usize,
    pub fine_hidden_channels: usize,
    pub dilation_block2: usize,
    pub use_amg: bool,
    pub use_dense: bool,
    pub use_refine: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            lfe_branch_channels: 16,
            hfe_layer_channels: 64,
            feature_channels: 64,
            hfe_blocks: 2,
            amg_hidden_channels: 32,
            fine_hidden_channels: 16,
            dilation_block2: 2,
            use_amg: true,
            use_dense: true,
            use_refine: true,
        }
    }
}

impl ModelConfig {
    /// Four channels per branch and layer; small enough for finite-difference
    /// checks.
    pub fn tiny() -> Self {
        Self {
            lfe_branch_channels: 4,
            hfe_layer_channels: 4,
            feature_channels: 16,
            amg_hidden_channels: 4,
            fine_hidden_channels: 4,
            ..Self::default()
        }
    }

    /// Width of the 1x1 reduction in front of the 3x3/5x5/7x7 LFE branches:
    /// half of the block's output width, which is half the input width of
    /// the second block.
    pub fn lfe_reduce_channels(&self) -> usize {
        (self.feature_channels / 2).max(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if !matches!(self.input_channels, 1 | 3) {
            return bad(format!(
                "input_channels must be 1 or 3, got {}",
                self.input_channels
            ));
        }
        for (name, v) in [
            ("lfe_branch_channels", self.lfe_branch_channels),
            ("hfe_layer_channels", self.hfe_layer_channels),
            ("feature_channels", self.feature_channels),
            ("hfe_blocks", self.hfe_blocks),
            ("amg_hidden_channels", self.amg_hidden_channels),
            ("fine_hidden_channels", self.fine_hidden_channels),
            ("dilation_block2", self.dilation_block2),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.feature_channels != 4 * self.lfe_branch_channels {
            return bad(format!(
                "feature_channels ({}) must equal 4 x lfe_branch_channels ({})",
                self.feature_channels, self.lfe_branch_channels
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn rejects_inconsistent_widths() {
        let c = ModelConfig {
            feature_channels: 60,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            input_channels: 2,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            amg_hidden_channels: 0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: ModelConfig = serde_json::from_str(r#"{"use_amg": false}"#).unwrap();
        assert!(!c.use_amg);
        assert_eq!(c.feature_channels, 64);
    }
}
