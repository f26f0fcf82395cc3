use clap::ValueEnum;
use rawtobit::distillation::KdConfig;

/// Distillation variants of the RBN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    /// Rate-distortion loss only.
    NoKd,
    /// Compression-teacher pairs only.
    EncOnly,
    /// ISP-teacher pairs only.
    DecOnly,
    /// Both teachers, with absolute-value attention maps.
    AbsAttention,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::NoKd => "no-kd",
            Variant::EncOnly => "enc-only",
            Variant::DecOnly => "dec-only",
            Variant::AbsAttention => "abs-attention",
        }
    }

    pub fn apply(self, kd: &mut KdConfig) {
        match self {
            Variant::NoKd => {
                kd.encoder.enabled = false;
                kd.decoder.enabled = false;
            }
            Variant::EncOnly => kd.decoder.enabled = false,
            Variant::DecOnly => kd.encoder.enabled = false,
            Variant::AbsAttention => {
                kd.encoder.abs_mode = true;
                kd.decoder.abs_mode = true;
            }
        }
    }
}
