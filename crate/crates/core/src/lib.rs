pub mod diagnostics;
pub mod factors;
pub mod graph;
pub mod manifold;
pub mod metrics;
pub mod photometry;
pub mod reconstruction;
pub mod scene;
pub mod sfm;
