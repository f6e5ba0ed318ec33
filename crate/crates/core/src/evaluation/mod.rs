//! Probes, retrieval, embedding combination and t-SNE over the shared space.

pub mod combine;
pub mod export;
pub mod probe;
pub mod report;
pub mod retrieval;
pub mod tsne;

pub use combine::{combine_embeddings, combine_latents, combine_rows, CombinationWeights};
pub use export::{embedding_matrix, export_embeddings};
pub use probe::{concat_features, linear_probe, Modality, ProbeConfig, ProbeReport};
pub use report::{evaluate, probe_all, CombinationRow, EmbeddingSet, EvalReport, ReportConfig};
pub use retrieval::{batched_retrieval, rank_of, retrieval_accuracy, Direction, RetrievalReport};
pub use tsne::{affinities, kl_divergence, knn_purity, tsne_project, TsneConfig, TsneResult};
