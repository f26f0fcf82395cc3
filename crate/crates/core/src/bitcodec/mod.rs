//! Lossless coding of quantized latents into the `.rbb` container.

mod cdf;
mod container;
mod latent;
mod range;

pub use cdf::{gaussian_pmf, gaussian_to_cdf, quantize_pmf, CdfTable, PRECISION, SUPPORT, TOTAL};
pub use container::{Bitstream, Header, ModelKind, HEADER_LEN, MAGIC};
pub use latent::{decode_latents, encode_latents, estimated_bits, hyper_tables, CodedLatents};
pub use range::{RangeDecoder, RangeEncoder, FLUSH_BYTES};
