//! Knowledge base construction, exact cosine top-K search, and the on-disk
//! format.

pub mod kb;
pub mod persist;

pub use kb::{build_kb, rank_order, Embedder, KbEntry, KnowledgeBase, RetrievalResult};
pub use persist::{load_kb, save_kb, sidecar_path, KbManifest};
