//! Product quantization with derived codebooks.
//!
//! Large (up to 16-bit) sub-quantizers give accurate compact codes but
//! their lookup tables are slow to build and scan. Each full codebook here
//! is trained together with a small *derived* codebook whose centroid `l`
//! summarizes every full centroid whose index has `l` as its low bits. A
//! query first scans the database with 8-bit quantized tables built from
//! the derived codebooks, keeping a candidate set in capped buckets, then
//! re-ranks the candidates with the full codebooks through lazily filled
//! lookup tables.
//!
//! Module map:
//!
//! * [`vecio`]: fvecs/bvecs/ivecs files and the model container format.
//! * [`clustering`]: k-means and same-size k-means.
//! * [`quantizer`]: codebooks, (O)PQ training, encoding, derived codebooks.
//! * [`search`]: conventional ADC scan and the two-pass derived search.
//! * [`ivf`]: inverted file index over residual codes.
//! * [`eval`]: ground truth, recall, r2 calibration and benchmarking.

pub mod clustering;
pub mod distance;
pub mod error;
pub mod eval;
pub mod ivf;
mod par;
pub mod quantizer;
pub mod search;
pub mod synth;
pub mod vecio;

pub use error::{Error, Result};
pub use ivf::{InvertedIndex, IvfParams};
pub use quantizer::{CodeStore, Codebook, CompactCode, PqParams, ProductQuantizer};
pub use search::{
    AnnBackend, FlatIndex, Neighbor, QueryParams, ResultSet, SearchMode, SearchOutput,
};
pub use vecio::{Dataset, ElementKind, GroundTruth};
