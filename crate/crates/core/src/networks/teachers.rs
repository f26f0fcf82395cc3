use rand::Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::bitcodec::ModelKind;
use crate::entropy::ContextHyperprior;
use crate::error::{Error, Result};
use crate::networks::codec::Codec;
use crate::networks::rbn::{DECODER_STAGES, ENCODER_STAGES};
use crate::networks::stacks::{gdn_encoder_specs, ConvStack, DeconvStack, LayerSpec, RcagDecoder};
use crate::networks::{ArchConfig, IspInput};
use crate::scalar::Scalar;

/// RAW autoencoder under compression. Its encoder matches the student's
/// except that the last conv emits `k` channels.
#[derive(Clone, Debug)]
pub struct CompTeacher<T> {
    pub arch: ArchConfig,
    pub k: usize,
    pub ps: ParamStore<T>,
    encoder: ConvStack,
    decoder: DeconvStack,
    entropy: ContextHyperprior,
}

impl<T: Scalar> CompTeacher<T> {
    pub fn new(arch: ArchConfig, k: usize, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let mut ps = ParamStore::new();
        let encoder = ConvStack::new(&mut ps, "enc", 4, &gdn_encoder_specs(arch.width, k, ENCODER_STAGES, 3), rng);
        let mut up: Vec<LayerSpec> = (0..ENCODER_STAGES - 1).map(|_| LayerSpec::new(arch.width, 3, 2, true)).collect();
        up.push(LayerSpec::new(4, 3, 2, false));
        let decoder = DeconvStack::new(&mut ps, "dec", k, &up, rng);
        let entropy = ContextHyperprior::new(&mut ps, "em", arch.entropy(k), rng)?;
        Ok(CompTeacher { arch, k, ps, encoder, decoder, entropy })
    }
}

impl<T: Scalar> Codec<T> for CompTeacher<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::CompTeacher
    }

    fn store(&self) -> &ParamStore<T> {
        &self.ps
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.ps
    }

    fn entropy(&self) -> Option<&ContextHyperprior> {
        Some(&self.entropy)
    }

    fn input_channels(&self) -> usize {
        4
    }

    fn output_scale(&self) -> usize {
        1
    }

    fn latent_stride(&self) -> usize {
        16
    }

    fn analyze(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Vec<Var>)> {
        Ok(self.encoder.forward(tape, &self.ps, x))
    }

    fn synthesize(&self, tape: &mut Tape<T>, y_hat: Var) -> Result<(Var, Vec<Var>)> {
        Ok((self.decoder.forward(tape, &self.ps, y_hat), Vec::new()))
    }
}

/// Autoencoder with no rate path whose decoder is shaped exactly like the
/// student's, so each decoder site pairs with one of the student's.
#[derive(Clone, Debug)]
pub struct IspTeacher<T> {
    pub arch: ArchConfig,
    pub ps: ParamStore<T>,
    encoder: ConvStack,
    decoder: RcagDecoder,
}

pub struct IspTeacherOutput {
    pub output: Var,
    pub latent: Var,
    pub encoder_sites: Vec<Var>,
    pub decoder_sites: Vec<Var>,
}

impl<T: Scalar> IspTeacher<T> {
    pub fn new(arch: ArchConfig, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let mut ps = ParamStore::new();
        let (cin, stages) = match arch.isp_input {
            IspInput::Srgb => (3, ENCODER_STAGES + 1),
            IspInput::Raw => (4, ENCODER_STAGES),
        };
        let encoder = ConvStack::new(&mut ps, "enc", cin, &gdn_encoder_specs(arch.width, arch.latent_channels, stages, 3), rng);
        let decoder =
            RcagDecoder::new(&mut ps, "dec", arch.latent_channels, arch.width, 3, DECODER_STAGES, arch.rcag(arch.width), rng)?;
        Ok(IspTeacher { arch, ps, encoder, decoder })
    }

    /// Channels of the image the encoder consumes.
    pub fn input_channels(&self) -> usize {
        match self.arch.isp_input {
            IspInput::Srgb => 3,
            IspInput::Raw => 4,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<IspTeacherOutput> {
        let shape = tape.shape(x).to_vec();
        let need = 1 << (ENCODER_STAGES + usize::from(self.arch.isp_input == IspInput::Srgb));
        if shape.len() != 4 || shape[1] != self.input_channels() {
            return Err(Error::InvalidShape(format!("ISP teacher expects {} input channels, got {shape:?}", self.input_channels())));
        }
        if shape[2] % need != 0 || shape[3] % need != 0 {
            return Err(Error::PadRequired { height: shape[2], width: shape[3], multiple: need });
        }
        let (latent, encoder_sites) = self.encoder.forward(tape, &self.ps, x);
        let (output, decoder_sites) = self.decoder.forward(tape, &self.ps, latent)?;
        Ok(IspTeacherOutput { output, latent, encoder_sites, decoder_sites })
    }
}
