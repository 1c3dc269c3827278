//! Texture-atlas tooling for appearance-invariant action recognition data.
//!
//! The crate covers the whole data path around an external dense-correspondence
//! (IUV) model:
//!
//! - [`iuv`]: frames, IUV maps and masks, plus the `IUV1` container format
//! - [`atlas`]: 24-part texture look-up tables with exact integer accumulation,
//!   nearest-source inpainting and the 1200×800 grid layout
//! - [`render`]: re-rendering humans from an atlas, IUV visualisation and
//!   6-channel input assembly
//! - [`relevance`]: entropy, information gain, KL divergence and mutual information
//! - [`metrics`]: mesh geodesics, GPS scores, AUC, IoU, AP^r and PCP
//! - [`augment`]: pairing plans, paired batches and the re-render job
//! - [`probe`]: a softmax probe trained with paired-gradient averaging
//!
//! Everything that touches pixels is integer-exact so results do not depend on
//! thread count or merge order.

pub mod atlas;
pub mod augment;
pub mod iuv;
pub mod metrics;
pub mod probe;
pub mod relevance;
pub mod render;
pub mod rng;

pub use atlas::{TextureAtlas, TextureAtlasAccumulator};
pub use iuv::{BinaryMask, DenseCorrespondenceMap, Frame, IuvPixel};
