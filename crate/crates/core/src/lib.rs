//! Training-free RGBA illustrations from a text-conditioned diffusion transformer.
//!
//! Generation runs two denoising branches from a shared latent: the subject
//! prompt inside a centred mask and a plain background prompt outside it, so
//! the subject lands in the middle of an empty canvas. The subject branch's
//! attention maps from the last steps give a coarse alpha, which a
//! trimap-seeded GrabCut then cleans.
//!
//! ```
//! use illumatte::generate::GenerationRequest;
//! use illumatte::pipeline::{toy_rgba, MattingOptions};
//!
//! let mut req = GenerationRequest::new("a red fox");
//! req.steps = 4;
//! req.keep_last_maps = 2;
//! req.out_size = (64, 64);
//! req.border_px = 16;
//! let (_, matte) = toy_rgba(&req, &MattingOptions::default()).unwrap();
//! assert_eq!(matte.rgba.height(), 64);
//! ```

pub mod attention;
pub mod dit;
pub mod error;
pub mod eval;
pub mod generate;
pub mod grabcut;
pub mod imaging;
pub mod pipeline;
pub mod prompt;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod trace_io;
pub mod trimap;

pub use error::{Error, Result};
