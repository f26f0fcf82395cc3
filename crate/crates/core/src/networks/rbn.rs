use rand::Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::bitcodec::ModelKind;
use crate::entropy::ContextHyperprior;
use crate::error::Result;
use crate::networks::codec::Codec;
use crate::networks::stacks::{gdn_encoder_specs, ConvStack, RcagDecoder};
use crate::networks::ArchConfig;
use crate::scalar::Scalar;

/// Encoder stride-2 stages; the decoder has one more to reach sRGB size.
/// Encoder attention sites of the RBN.
pub const ENCODER_STAGES: usize = 4;
/// Decoder attention sites of the RBN.
pub const DECODER_STAGES: usize = 5;

/// Packed RAW `[4, H/2, W/2]` → latent `[M, H/32, W/32]` → sRGB `[3, H, W]`.
///
/// Encoder sites are the four stage convs before GDN; decoder sites are the
/// five transposed-conv outputs before each RCAG.
#[derive(Clone, Debug)]
pub struct Rbn<T> {
    pub arch: ArchConfig,
    pub ps: ParamStore<T>,
    encoder: ConvStack,
    decoder: RcagDecoder,
    entropy: ContextHyperprior,
}

impl<T: Scalar> Rbn<T> {
    pub fn new(arch: ArchConfig, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let mut ps = ParamStore::new();
        let specs = gdn_encoder_specs(arch.width, arch.latent_channels, ENCODER_STAGES, 3);
        let encoder = ConvStack::new(&mut ps, "enc", 4, &specs, rng);
        let decoder =
            RcagDecoder::new(&mut ps, "dec", arch.latent_channels, arch.width, 3, DECODER_STAGES, arch.rcag(arch.width), rng)?;
        let entropy = ContextHyperprior::new(&mut ps, "em", arch.entropy(arch.latent_channels), rng)?;
        Ok(Rbn { arch, ps, encoder, decoder, entropy })
    }
}

impl<T: Scalar> Codec<T> for Rbn<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Rbn
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
        2
    }

    fn latent_stride(&self) -> usize {
        16
    }

    fn analyze(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Vec<Var>)> {
        Ok(self.encoder.forward(tape, &self.ps, x))
    }

    fn synthesize(&self, tape: &mut Tape<T>, y_hat: Var) -> Result<(Var, Vec<Var>)> {
        self.decoder.forward(tape, &self.ps, y_hat)
    }
}
