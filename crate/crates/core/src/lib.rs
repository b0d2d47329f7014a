//! Latent space distribution matching (LSDM) for semi-supervised conditional
//! generation.
//!
//! Training runs in two steps: an autoencoder is fit on every available
//! response (paired and unpaired), then a latent generator is fit on the paired
//! data alone by matching joint distributions with a Wasserstein critic (or an
//! f-GAN critic, or a latent score model). Evaluation uses exact 1-Wasserstein
//! distances.

pub mod data;
pub mod diffusion;
pub mod engine;
pub mod harness;
pub mod lsdm;
pub mod ot;
pub mod rng;

pub use rng::Rng;
