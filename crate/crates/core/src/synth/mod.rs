//! Synthetic bridge-pier responses: enveloped band-limited ground motions exciting a
//! bilinear-hysteretic pier, recorded by accelerometers at the pier top and base.

mod dataset;
mod ground_motion;
mod pier;

pub use dataset::{
    derive_seed, generate_dataset, splitmix64, EventSample, SynthConfig, MAX_DRIFT,
};
pub use ground_motion::{generate_gm, rotate_gm, Envelope, SyntheticGM, GRAVITY};
pub use pier::{
    integrate_linear_sdof, integrate_sdof, simulate_response, Oscillator, PierModel,
    PierResponse, SdofResponse,
};
