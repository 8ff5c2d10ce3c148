use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network hyper-parameters. The three component flags select the ablation
/// variant; all three on is the full model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Width `n` of the input block; the graph widths are multiples of it.
    pub base_width: usize,
    /// Side length of the (square) network input in pixels.
    pub input_size: usize,
    /// Frames per clip fed through the recurrent bottleneck.
    pub clip_len: usize,
    pub num_classes: usize,
    pub dropout_block: f64,
    pub dropout_cls: f64,
    pub convlstm_kernel: usize,
    pub classification_branch: bool,
    pub attention_gates: bool,
    pub stacked_module: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_width: 64,
            input_size: 224,
            clip_len: 5,
            num_classes: 4,
            dropout_block: 0.2,
            dropout_cls: 0.4,
            convlstm_kernel: 3,
            classification_branch: true,
            attention_gates: true,
            stacked_module: true,
        }
    }
}

impl NetConfig {
    /// Toy-scale configuration with all components enabled.
    pub fn toy(base_width: usize, input_size: usize, clip_len: usize) -> Self {
        NetConfig {
            base_width,
            input_size,
            clip_len,
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.base_width == 0 {
            return fail("base_width must be at least 1".into());
        }
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return fail(format!(
                "input_size {} must be a positive multiple of 16",
                self.input_size
            ));
        }
        if self.clip_len == 0 {
            return fail("clip_len must be at least 1".into());
        }
        if self.num_classes != 4 {
            return fail(format!("num_classes must be 4, got {}", self.num_classes));
        }
        for (name, p) in [
            ("dropout_block", self.dropout_block),
            ("dropout_cls", self.dropout_cls),
        ] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if self.convlstm_kernel % 2 == 0 {
            return fail(format!(
                "convlstm_kernel must be odd, got {}",
                self.convlstm_kernel
            ));
        }
        Ok(())
    }

    /// Encoder widths `n, 2n, 4n, 8n, 16n`.
    pub fn encoder_widths(&self) -> [usize; 5] {
        let n = self.base_width;
        [n, 2 * n, 4 * n, 8 * n, 16 * n]
    }

    /// Decoder widths `8n, 4n, 2n, n`.
    pub fn decoder_widths(&self) -> [usize; 4] {
        let n = self.base_width;
        [8 * n, 4 * n, 2 * n, n]
    }

    /// Spatial side of the recurrent bottleneck (`input_size / 16`).
    pub fn bottleneck_size(&self) -> usize {
        self.input_size / 16
    }

    pub fn hidden_width(&self) -> usize {
        16 * self.base_width
    }

    /// Short variant label in the style of the component ablation table.
    pub fn variant_name(&self) -> String {
        let mut name = String::from("U-Net");
        if self.classification_branch {
            name.push_str("+cls");
        }
        if self.attention_gates {
            name.push_str("+AG");
        }
        if self.stacked_module {
            name.push_str("+SM");
        }
        name
    }
}
