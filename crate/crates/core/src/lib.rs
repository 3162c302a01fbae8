pub mod bench;
pub mod cli_io;
pub mod decoding;
pub mod fusion;
pub mod image;
pub mod ot;
pub mod rng;
pub mod scene_models;
pub mod views;
