//! Rate modeling: Gaussian conditionals, a factorized prior for the
//! hyper-latent, the hyperprior and causal context networks, and the
//! quantization proxies used during training.

mod factorized;
mod gaussian;
mod hyper;
mod quantize;

pub use factorized::FactorizedPrior;
pub use gaussian::{gaussian_bits, gaussian_rate, interval_likelihood, std_normal_cdf, symbol_bits, GaussianParams};
pub use hyper::{ContextHyperprior, EntropyConfig, PointwiseParams, RateOutput};
pub use quantize::{quantize, round_latent, QuantMode, QuantizedLatent};

/// Lower bound applied to every predicted scale.
pub const SIGMA_MIN: f64 = 0.11;

/// Lower bound on every symbol probability, so one symbol costs at most 16 bits.
pub const LIKELIHOOD_MIN: f64 = 1.0 / 65536.0;

/// Leaky ReLU slope inside the hyper networks.
pub(crate) const LEAKY_SLOPE: f64 = 0.01;
