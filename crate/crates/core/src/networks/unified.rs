use rand::Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::bitcodec::ModelKind;
use crate::entropy::ContextHyperprior;
use crate::error::Result;
use crate::networks::codec::Codec;
use crate::networks::stacks::{reference_analysis_specs, reference_synthesis_specs, ConvStack, DeconvStack};
use crate::networks::ArchConfig;
use crate::scalar::Scalar;

/// Reference hyperprior + context codec taking packed RAW, with one extra
/// IGDN and transposed conv so it decodes at sRGB size.
#[derive(Clone, Debug)]
pub struct Unified<T> {
    pub arch: ArchConfig,
    pub ps: ParamStore<T>,
    g_a: ConvStack,
    g_s: DeconvStack,
    entropy: ContextHyperprior,
}

impl<T: Scalar> Unified<T> {
    pub fn new(arch: ArchConfig, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let mut ps = ParamStore::new();
        let (n, m) = (arch.ref_width, arch.latent_channels);
        let g_a = ConvStack::new(&mut ps, "g_a", 4, &reference_analysis_specs(n, m), rng);
        let g_s = DeconvStack::new(&mut ps, "g_s", m, &reference_synthesis_specs(n, 3, 5), rng);
        let entropy = ContextHyperprior::new(&mut ps, "em", arch.entropy(m), rng)?;
        Ok(Unified { arch, ps, g_a, g_s, entropy })
    }
}

impl<T: Scalar> Codec<T> for Unified<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Unified
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
        Ok(self.g_a.forward(tape, &self.ps, x))
    }

    fn synthesize(&self, tape: &mut Tape<T>, y_hat: Var) -> Result<(Var, Vec<Var>)> {
        Ok((self.g_s.forward(tape, &self.ps, y_hat), Vec::new()))
    }
}
