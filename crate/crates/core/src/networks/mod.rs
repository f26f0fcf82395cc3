//! The trainable systems: the RAW-to-bitstream student, its two teachers,
//! and the unified and cascaded baselines.

mod cascaded;
mod checkpoint;
mod codec;
mod rbn;
mod stacks;
mod teachers;
mod unified;

pub use cascaded::{Cascaded, CompStage, CompView, IspNet};
pub use checkpoint::{load_checkpoint, save_checkpoint, AnyModel, ModelSpec, System};
pub use codec::{compress, decompress, forward, infer, pad_reflect, Codec, ForwardOutput, PAD_MULTIPLE};
pub use rbn::{Rbn, DECODER_STAGES, ENCODER_STAGES};
pub use stacks::{ConvStack, DeconvStack, LayerSpec, RcagDecoder};
pub use teachers::{CompTeacher, IspTeacher, IspTeacherOutput};
pub use unified::Unified;

use serde::{Deserialize, Serialize};

use crate::entropy::EntropyConfig;
use crate::error::{Error, Result};
use crate::nn::RcagConfig;

/// What the ISP teacher's encoder consumes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IspInput {
    /// Ground-truth sRGB, reduced by one extra stride-2 stage.
    #[default]
    Srgb,
    /// Packed RAW through an encoder shaped like the student's.
    Raw,
}

/// Compression stage of the cascaded baseline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompStageKind {
    #[default]
    Learned,
    /// Lossless pass-through with zero rate; isolates the ISP stage.
    Identity,
}

/// Widths and depths of every system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Channels inside the student and teacher transforms.
    pub width: usize,
    /// Channels of the student's latent.
    pub latent_channels: usize,
    /// Channels of every hyper-latent.
    pub hyper_channels: usize,
    /// Channels inside the reference transforms (unified and cascaded).
    pub ref_width: usize,
    pub rcag_blocks: usize,
    pub rcag_reduction: usize,
    /// Cascaded ISP stage width and RCAB count.
    pub isp_width: usize,
    pub isp_blocks: usize,
    #[serde(default)]
    pub isp_input: IspInput,
    #[serde(default)]
    pub cascaded_comp: CompStageKind,
}

impl ArchConfig {
    /// Full-size widths.
    pub fn full() -> Self {
        ArchConfig {
            width: 256,
            latent_channels: 192,
            hyper_channels: 192,
            ref_width: 192,
            rcag_blocks: 2,
            rcag_reduction: 16,
            isp_width: 64,
            isp_blocks: 4,
            isp_input: IspInput::Srgb,
            cascaded_comp: CompStageKind::Learned,
        }
    }

    /// Narrow variant for tests and desk-scale runs.
    pub fn tiny() -> Self {
        ArchConfig {
            width: 16,
            latent_channels: 16,
            hyper_channels: 8,
            ref_width: 16,
            rcag_blocks: 1,
            rcag_reduction: 4,
            isp_width: 16,
            isp_blocks: 1,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [self.width, self.latent_channels, self.hyper_channels, self.ref_width, self.isp_width];
        if widths.contains(&0) || self.rcag_blocks == 0 || self.isp_blocks == 0 {
            return Err(Error::InvalidSpec(format!("zero width or depth in {self:?}")));
        }
        self.rcag(self.width).validate()?;
        self.rcag(self.isp_width).validate()?;
        self.entropy(self.latent_channels).validate()
    }

    pub(crate) fn rcag(&self, channels: usize) -> RcagConfig {
        RcagConfig { num_blocks: self.rcag_blocks, channels, reduction: self.rcag_reduction }
    }

    pub(crate) fn entropy(&self, latent_channels: usize) -> EntropyConfig {
        EntropyConfig { latent_channels, hyper_channels: self.hyper_channels }
    }
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::full()
    }
}
