//! Position-sensitive Shapley attributions for sequence models.
//!
//! Features of a sequence are credited both for *what* they are (value
//! importance, VI) and for *where* they sit (position importance, PI). The
//! central object is an [`OrderedGame`] `ω(S, σ)`: the payoff when the
//! coalition `S` is kept and the sequence is rearranged by `σ`.
//!
//! All indices in the library API are zero-based.

pub mod approx;
pub mod error;
pub mod exact;
pub mod games;
pub mod gateway;
pub mod metrics;
pub mod perm;
pub mod position;
pub mod result;

pub use approx::{least_squares_estimate, sampling_estimate, LeastSquaresConfig, SamplingConfig};
pub use error::{Error, GatewayError, Result};
pub use exact::{exact_attribution, ordshap_exact, pi_exact, vi_exact, ExactReport, OrdShapMatrix};
pub use games::{OrderedGame, SyntheticModelConfig, SyntheticTokenModel, ToyItem, ToyOrderGame};
pub use gateway::{Gateway, GatewayConfig, MaskingPolicy, ModelGame, SequenceSample, Token};
pub use metrics::{EvalCurve, MetricConfig};
pub use perm::{OrderedCoalition, Permutation, SeededSampler, Subset};
pub use position::PositionIndex;
pub use result::{AttributionMeta, AttributionResult, Estimator};
