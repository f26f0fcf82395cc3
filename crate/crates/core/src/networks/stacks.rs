//! Layer stacks shared by the systems.

use rand::Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::Result;
use crate::nn::{Conv2d, ConvTranspose2d, Gdn, GdnMode, Rcag, RcagConfig};
use crate::scalar::Scalar;

/// One layer of a [`ConvStack`] / [`DeconvStack`] description.
#[derive(Clone, Copy, Debug)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Append GDN (encoder) or IGDN (decoder) after the conv.
    pub normalize: bool,
}

impl LayerSpec {
    pub fn new(out_channels: usize, kernel: usize, stride: usize, normalize: bool) -> Self {
        LayerSpec { out_channels, kernel, stride, normalize }
    }
}

/// Convolutions optionally followed by GDN. The output of every conv that
/// feeds a GDN is reported as an attention site.
#[derive(Clone, Debug)]
pub struct ConvStack {
    layers: Vec<(Conv2d, Option<Gdn>)>,
}

impl ConvStack {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, in_channels: usize, specs: &[LayerSpec], rng: &mut impl Rng) -> Self {
        let mut cin = in_channels;
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let conv = Conv2d::new(ps, &format!("{name}.{i}.conv"), cin, s.out_channels, s.kernel, s.stride, rng);
                let gdn = s.normalize.then(|| Gdn::new(ps, &format!("{name}.{i}.gdn"), s.out_channels, GdnMode::Forward));
                cin = s.out_channels;
                (conv, gdn)
            })
            .collect();
        ConvStack { layers }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, x: Var) -> (Var, Vec<Var>) {
        let mut h = x;
        let mut sites = Vec::new();
        for (conv, gdn) in &self.layers {
            h = conv.forward(tape, ps, h);
            if let Some(g) = gdn {
                sites.push(h);
                h = g.forward(tape, ps, h);
            }
        }
        (h, sites)
    }
}

/// Transposed convolutions optionally followed by IGDN.
#[derive(Clone, Debug)]
pub struct DeconvStack {
    layers: Vec<(ConvTranspose2d, Option<Gdn>)>,
}

impl DeconvStack {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, in_channels: usize, specs: &[LayerSpec], rng: &mut impl Rng) -> Self {
        let mut cin = in_channels;
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let conv = ConvTranspose2d::new(ps, &format!("{name}.{i}.deconv"), cin, s.out_channels, s.kernel, s.stride, rng);
                let igdn = s.normalize.then(|| Gdn::new(ps, &format!("{name}.{i}.igdn"), s.out_channels, GdnMode::Inverse));
                cin = s.out_channels;
                (conv, igdn)
            })
            .collect();
        DeconvStack { layers }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, x: Var) -> Var {
        let mut h = x;
        for (conv, igdn) in &self.layers {
            h = conv.forward(tape, ps, h);
            if let Some(g) = igdn {
                h = g.forward(tape, ps, h);
            }
        }
        h
    }
}

/// `stages × [stride-2 transposed conv → RCAG]`, then a same-size output conv.
/// Transposed-conv outputs are the attention sites.
#[derive(Clone, Debug)]
pub struct RcagDecoder {
    stages: Vec<(ConvTranspose2d, Rcag)>,
    out: Conv2d,
}

impl RcagDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        width: usize,
        out_channels: usize,
        stages: usize,
        rcag: RcagConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut cin = in_channels;
        let mut layers = Vec::with_capacity(stages);
        for i in 0..stages {
            let up = ConvTranspose2d::new(ps, &format!("{name}.{i}.deconv"), cin, width, 3, 2, rng);
            let group = Rcag::new(ps, &format!("{name}.{i}.rcag"), RcagConfig { channels: width, ..rcag }, rng)?;
            layers.push((up, group));
            cin = width;
        }
        let out = Conv2d::new(ps, &format!("{name}.out"), width, out_channels, 3, 1, rng);
        Ok(RcagDecoder { stages: layers, out })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, x: Var) -> Result<(Var, Vec<Var>)> {
        let mut h = x;
        let mut sites = Vec::with_capacity(self.stages.len());
        for (up, group) in &self.stages {
            h = up.forward(tape, ps, h);
            sites.push(h);
            h = group.forward(tape, ps, h)?;
        }
        Ok((self.out.forward(tape, ps, h), sites))
    }
}

/// Layer list of `stages` stride-2 conv+GDN stages followed by a stride-1
/// projection.
pub fn gdn_encoder_specs(width: usize, out_channels: usize, stages: usize, kernel: usize) -> Vec<LayerSpec> {
    let mut v: Vec<LayerSpec> = (0..stages).map(|_| LayerSpec::new(width, kernel, 2, true)).collect();
    v.push(LayerSpec::new(out_channels, kernel, 1, false));
    v
}

/// Analysis transform of the reference hyperprior model: four stride-2
/// 5×5 convs with GDN between them.
pub fn reference_analysis_specs(n: usize, m: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::new(n, 5, 2, true), LayerSpec::new(n, 5, 2, true), LayerSpec::new(n, 5, 2, true), LayerSpec::new(m, 5, 2, false)]
}

/// Synthesis mirror: `ups` stride-2 5×5 transposed convs with IGDN between.
pub fn reference_synthesis_specs(n: usize, out_channels: usize, ups: usize) -> Vec<LayerSpec> {
    let mut v: Vec<LayerSpec> = (0..ups - 1).map(|_| LayerSpec::new(n, 5, 2, true)).collect();
    v.push(LayerSpec::new(out_channels, 5, 2, false));
    v
}
