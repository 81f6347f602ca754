//! Neural norms and metrics that satisfy the triangle inequality by
//! construction.
//!
//! Heads are described by [`norms::HeadSpec`] and built into
//! [`norms::NormModel`] (a bare norm) or, behind an embedding, into
//! [`metrics::DistanceModel`]. Training runs on the tape in [`diffcore`].
//! [`axioms`] checks the guarantees empirically, and the remaining modules
//! hold the experiments driven by the `triq` binary.
//!
//! ```
//! use rand::SeedableRng;
//! use triq::norms::{HeadSpec, NormModel, Pooling, WideNormSpec};
//!
//! let spec = HeadSpec::WideNorm(WideNormSpec {
//!     input_dim: 2, components: 8, component_dim: 4, asymmetric: false, pooling: Pooling::MaxMean,
//! });
//! let norm = NormModel::new(spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
//! let (x, y) = ([1.0, -2.0], [0.5, 3.0]);
//! let sum = [x[0] + y[0], x[1] + y[1]];
//! assert!(norm.eval(&sum).unwrap() <= norm.eval(&x).unwrap() + norm.eval(&y).unwrap() + 1e-12);
//! ```

pub mod axioms;
pub mod cli;
pub mod diffcore;
pub mod error;
pub mod figure1;
pub mod graphdist;
pub mod gvf;
pub mod metrics;
pub mod nearness;
pub mod norm2d;
pub mod norms;
pub mod seeds;

pub use error::{Error, Result};
