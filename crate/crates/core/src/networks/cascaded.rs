use rand::Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::bitcodec::ModelKind;
use crate::entropy::ContextHyperprior;
use crate::error::{Error, Result};
use crate::networks::codec::Codec;
use crate::networks::stacks::{reference_analysis_specs, reference_synthesis_specs, ConvStack, DeconvStack};
use crate::networks::{ArchConfig, CompStageKind};
use crate::nn::{Conv2d, Rcag};
use crate::scalar::Scalar;

/// Compact RAW → sRGB network: conv, one RCAG, conv to 12 channels, then a
/// ×2 pixel shuffle back to full resolution.
#[derive(Clone, Debug)]
pub struct IspNet {
    head: Conv2d,
    body: Rcag,
    tail: Conv2d,
}

impl IspNet {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, arch: &ArchConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = arch.isp_width;
        let head = Conv2d::new(ps, &format!("{name}.head"), 4, c, 3, 1, rng);
        let body = Rcag::new(ps, &format!("{name}.body"), crate::nn::RcagConfig { num_blocks: arch.isp_blocks, ..arch.rcag(c) }, rng)?;
        let tail = Conv2d::new(ps, &format!("{name}.tail"), c, 12, 3, 1, rng);
        Ok(IspNet { head, body, tail })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, raw: Var) -> Result<Var> {
        let h = self.head.forward(tape, ps, raw);
        let h = self.body.forward(tape, ps, h)?;
        let h = self.tail.forward(tape, ps, h);
        Ok(tape.pixel_shuffle(h, 2))
    }
}

/// sRGB codec of the cascade.
#[derive(Clone, Debug)]
pub enum CompStage {
    Learned { g_a: ConvStack, g_s: DeconvStack, entropy: ContextHyperprior },
    Identity,
}

/// ISP stage followed by a separately trained sRGB codec. Parameters live in
/// one store under the `isp.` and `comp.` prefixes.
#[derive(Clone, Debug)]
pub struct Cascaded<T> {
    pub arch: ArchConfig,
    pub ps: ParamStore<T>,
    pub isp: IspNet,
    pub comp: CompStage,
}

impl<T: Scalar> Cascaded<T> {
    pub fn new(arch: ArchConfig, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let mut ps = ParamStore::new();
        let isp = IspNet::new(&mut ps, "isp", &arch, rng)?;
        let comp = match arch.cascaded_comp {
            CompStageKind::Identity => CompStage::Identity,
            CompStageKind::Learned => {
                let (n, m) = (arch.ref_width, arch.latent_channels);
                let g_a = ConvStack::new(&mut ps, "comp.g_a", 3, &reference_analysis_specs(n, m), rng);
                let g_s = DeconvStack::new(&mut ps, "comp.g_s", m, &reference_synthesis_specs(n, 3, 4), rng);
                let entropy = ContextHyperprior::new(&mut ps, "comp.em", arch.entropy(m), rng)?;
                CompStage::Learned { g_a, g_s, entropy }
            }
        };
        Ok(Cascaded { arch, ps, isp, comp })
    }

    /// Freezes the compression stage for joint fine-tuning.
    pub fn freeze_comp(&mut self, frozen: bool) {
        self.ps.set_frozen_prefix("comp.", frozen);
    }

    /// The ISP stage alone: packed RAW → sRGB.
    pub fn isp_forward(&self, tape: &mut Tape<T>, raw: Var) -> Result<Var> {
        let shape = tape.shape(raw);
        if shape.len() != 4 || shape[1] != 4 {
            return Err(Error::InvalidShape(format!("ISP stage expects packed RAW, got {shape:?}")));
        }
        self.isp.forward(tape, &self.ps, raw)
    }

    /// The compression stage as a codec over sRGB images.
    pub fn comp_stage(&mut self) -> CompView<'_, T> {
        CompView { inner: self }
    }

    fn comp_analyze(&self, tape: &mut Tape<T>, x: Var) -> (Var, Vec<Var>) {
        match &self.comp {
            CompStage::Learned { g_a, .. } => g_a.forward(tape, &self.ps, x),
            CompStage::Identity => (x, Vec::new()),
        }
    }

    fn comp_synthesize(&self, tape: &mut Tape<T>, y_hat: Var) -> (Var, Vec<Var>) {
        match &self.comp {
            CompStage::Learned { g_s, .. } => (g_s.forward(tape, &self.ps, y_hat), Vec::new()),
            CompStage::Identity => (y_hat, Vec::new()),
        }
    }

    fn comp_entropy(&self) -> Option<&ContextHyperprior> {
        match &self.comp {
            CompStage::Learned { entropy, .. } => Some(entropy),
            CompStage::Identity => None,
        }
    }
}

/// Full cascade: packed RAW in, sRGB out. The ISP output is the
/// `intermediate` of the forward pass.
impl<T: Scalar> Codec<T> for Cascaded<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Cascaded
    }

    fn store(&self) -> &ParamStore<T> {
        &self.ps
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.ps
    }

    fn entropy(&self) -> Option<&ContextHyperprior> {
        self.comp_entropy()
    }

    fn input_channels(&self) -> usize {
        4
    }

    fn output_scale(&self) -> usize {
        2
    }

    fn latent_stride(&self) -> usize {
        8
    }

    fn preprocess(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.isp_forward(tape, x)
    }

    fn analyze(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Vec<Var>)> {
        Ok(self.comp_analyze(tape, x))
    }

    fn synthesize(&self, tape: &mut Tape<T>, y_hat: Var) -> Result<(Var, Vec<Var>)> {
        Ok(self.comp_synthesize(tape, y_hat))
    }
}

/// Borrowed view of the cascade's compression stage, taking sRGB input.
pub struct CompView<'a, T> {
    inner: &'a mut Cascaded<T>,
}

impl<T: Scalar> Codec<T> for CompView<'_, T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Cascaded
    }

    fn store(&self) -> &ParamStore<T> {
        &self.inner.ps
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.inner.ps
    }

    fn entropy(&self) -> Option<&ContextHyperprior> {
        self.inner.comp_entropy()
    }

    fn input_channels(&self) -> usize {
        3
    }

    fn output_scale(&self) -> usize {
        1
    }

    fn latent_stride(&self) -> usize {
        16
    }

    fn analyze(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Vec<Var>)> {
        Ok(self.inner.comp_analyze(tape, x))
    }

    fn synthesize(&self, tape: &mut Tape<T>, y_hat: Var) -> Result<(Var, Vec<Var>)> {
        Ok(self.inner.comp_synthesize(tape, y_hat))
    }
}
