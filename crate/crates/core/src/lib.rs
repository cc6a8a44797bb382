//! Distances between learned representations.
//!
//! The centerpiece is the GULP family: for a ridge strength `lambda`, the largest
//! gap between the predictions of `lambda`-regularized linear probes trained on two
//! representations, uniformly over all unit-norm regression targets. It has a
//! closed form in the covariances of the two representations and their
//! cross-covariance, is invariant to orthogonal transformations, satisfies the
//! triangle inequality, and interpolates between CCA (`lambda = 0`) and a
//! CKA-like quantity (`lambda -> infinity`).
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`repdata`] | representation matrices, CSV/REPM I/O, synthetic generators |
//! | [`moments`] | covariances and spectral (pseudo-)inverses |
//! | [`distances`] | GULP (three routes), CCA, ridge-CCA, CKA, PWCCA, Procrustes |
//! | [`probes`] | ridge probes, uniform-bound check, generalization study |
//! | [`analysis`] | distance matrices, MDS, clustering, convergence curves |
//!
//! ```
//! use repsim::{gulp, synthesize, MomentSet, Synth, SynthFamily, SynthSpec};
//!
//! let spec = SynthSpec::new(SynthFamily::RotatedCopy, 200, 5, 7);
//! let Synth::Pair(a, b) = synthesize(&spec).unwrap() else { unreachable!() };
//! let d = gulp(&MomentSet::new(&a, &b).unwrap(), 1e-2).unwrap();
//! assert!(d.value < 1e-8);
//! ```

pub mod analysis;
pub mod distances;
pub mod error;
pub mod moments;
pub mod probes;
pub mod repdata;

pub use analysis::{
    classical_mds, cluster_average_linkage, convergence_curve, distance_matrices, distance_matrix,
    std_ratio, std_ratio_by_name, ConvergenceCurve, Dendrogram, DistanceMatrix, Embedding, Merge,
};
pub use distances::{
    cca, cka, compute, gulp, gulp_kernel, gulp_pairwise, procrustes, pwcca, ridge_cca_inner,
    DistanceRecord, Flag, Kernel, MetricId, MetricKind,
};
pub use error::{Error, Result};
pub use moments::{covariance, cross_covariance, regularized_inverse, MomentSet};
pub use probes::{
    generalization_experiment, prediction_gap, ridge_fit, spearman_rho, uniform_bound_check,
    BoundReport, ExperimentConfig, GeneralizationReport, ProbeTask, RidgeProbe,
};
pub use repdata::{
    decode_repm, encode_csv, encode_repm, load_any, load_csv, load_repm, save_csv, save_repm,
    synthesize, RepState, Representation, Synth, SynthFamily, SynthSpec,
};
