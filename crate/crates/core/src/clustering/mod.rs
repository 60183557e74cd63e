//! k-means and normalized spectral clustering.

mod kmeans;
mod spectral;

pub use kmeans::{kmeans, kmeans_restarts, kmeans_run, purity, ClusterResult, KMeansRun, DEFAULT_RESTARTS};
pub use spectral::{
    median_gamma, rbf_affinity, rbf_affinity_with, spectral_cluster, spectral_embedding, SpectralConfig,
    SpectralResult, DEFAULT_MAX_POINTS,
};
