//! Archive curation: prompt ensembling, top-k selection, and category grouping.

pub mod grouping;
pub mod prompts;
pub mod provider;
pub mod store;
pub mod topk;

pub use grouping::{group_categories, ExpertGroup};
pub use prompts::{default_templates, ensemble_prompts, load_templates, parse_templates};
pub use provider::EmbeddingProvider;
pub use store::{embed_collection, EmbeddingStore};
pub use topk::{brute_force_archive, build_archive};
