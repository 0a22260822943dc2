//! Cold-start recommendation toolkit.
//!
//! Warm users and tracks live in a learned embedding space (implicit ALS or SVD of
//! shifted PMI co-occurrences). Warm users are segmented with k-means, and a neural
//! regressor maps registration-day features of new users into the same space so they
//! can be assigned to a segment and served its most popular tracks.

pub mod catalog;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod features;
pub mod ids;
pub mod interactions;
pub mod lineage;
pub mod par;
pub mod pipeline;
pub mod recommend;
pub mod regressor;
pub mod segmentation;
pub mod sparse;
pub mod stages;
pub mod trainers;

pub use catalog::{Catalog, Split, TrackMeta, UserProfile, UserUniverse};
pub use embedding::{EmbeddingTable, MeanEmbedding, Similarity};
pub use error::{Error, Result};
pub use ids::{AlbumId, ArtistId, PlaylistId, TrackId, UserId};
pub use interactions::{EntityKind, Event, InteractionLog, Signal};
