//! Evaluation bench: synthetic direction dataset, stratified k-fold
//! cross-validation, PCA and t-SNE projections, and FLOP/runtime
//! benchmarking.

mod bench;
mod cv;
mod kfold;
mod pca;
mod plot;
mod synthetic;
mod tsne;

pub use bench::{benchmark_layer, benchmark_net, write_bench_csv, BenchRow};
pub use cv::{
    evaluate_cv, write_report_csv, write_summary_txt, CvSummary, FoldReport, PredRecord,
};
pub use kfold::kfold_split;
pub use pca::{jacobi_eigen_sym, project_pca, PcaResult};
pub use plot::{write_embedding_csv, write_embedding_svg};
pub use synthetic::{
    generate_synthetic, generate_videos, render_video, square_column, Direction, MotionParams,
    SyntheticSpec,
};
pub use tsne::{project_tsne, tsne_affinities, TsneAffinities, TsneConfig};
