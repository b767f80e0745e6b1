pub mod dataset;
pub mod error;
pub mod eval;
pub mod minphase;
pub mod nn;
pub mod reverb;
pub mod posterior;
pub mod room;
pub mod score;
pub mod stft;
pub mod util;
