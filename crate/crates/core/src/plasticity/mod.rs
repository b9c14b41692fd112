//! Weight-change rules.

pub mod adam;
pub mod eprop;
pub mod loss;
pub mod stdp;

pub use adam::{Adam, AdamParams};
pub use eprop::{surrogate, surrogates, EpropCoeffs, Eligibility};
pub use loss::{cross_entropy, learning_signal, output_error, softmax, OutputGrad};
pub use stdp::{Stdp, StdpParams};
