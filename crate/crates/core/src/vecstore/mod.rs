//! Token-level key/value datastore: half-precision keys, exact L2 search and
//! IVF-PQ approximate search.

pub mod fp16;
mod io;
pub mod ivfpq;
pub mod kmeans;
mod store;

pub use fp16::{fp16_decode, fp16_encode};
pub use io::{load, save};
pub use ivfpq::{IvfPqIndex, IvfPqParams};
pub use kmeans::{kmeans, KMeans};
pub use store::{Datastore, ExampleRecord, Neighbor, RecordId, SearchIndex};
