//! Prior-guided sparse mixture-of-experts point cloud registration.
//!
//! The pipeline, end to end:
//!
//! 1. [`scene`] builds a partially overlapping pair, downsamples each cloud
//!    to superpoints and computes training-free descriptors.
//! 2. [`prior`] measures patch overlap under a prior transform and keeps the
//!    pairs above `tau_o`.
//! 3. [`pce`] turns those pairs into per-superpoint prior embeddings.
//! 4. [`net`] runs attention and sparse mixture-of-experts layers whose
//!    routers see token + prior embedding.
//! 5. [`matching`] picks superpoint matches, then point matches inside them.
//! 6. [`register`] estimates the transform and iterates with the estimate as
//!    the next prior.

pub mod geom;
pub mod matching;
pub mod net;
pub mod pce;
pub mod prior;
pub mod register;
pub mod scene;
pub mod spatial;

pub use geom::{PointCloud, RigidTransform};

// The guide's snippets run as doctests of this crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenes.md")]
    mod scenes {}
    #[doc = include_str!("../../../book/src/prior.md")]
    mod prior {}
    #[doc = include_str!("../../../book/src/encoding.md")]
    mod encoding {}
    #[doc = include_str!("../../../book/src/routing.md")]
    mod routing {}
    #[doc = include_str!("../../../book/src/matching.md")]
    mod matching {}
    #[doc = include_str!("../../../book/src/registration.md")]
    mod registration {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
