pub mod common;
pub mod eval;
pub mod gen_synth;
pub mod ingest;
pub mod readout;
pub mod sample_episodes;
pub mod shot_sweep;
pub mod toy;
pub mod train;
pub mod transfer;
