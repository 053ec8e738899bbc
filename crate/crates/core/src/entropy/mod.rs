//! Entropy coding: range coder, latent likelihood models, spike-and-slab
//! weight prior and the weight-delta payload body.

pub mod latent;
pub mod likelihood;
pub mod payload;
pub mod range_coder;
pub mod spike_slab;
pub mod tables;

pub use latent::{LatentCode, LatentModel};
pub use payload::{QuantizedTensor, WeightPayloadBody};
pub use range_coder::{FrequencyTable, RangeDecoder, RangeEncoder};
pub use spike_slab::SpikeSlabParams;
