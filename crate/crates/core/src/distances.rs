//! GULP distances and the classical similarity baselines.
//!
//! Three routes compute the plug-in GULP distance and must agree:
//!
//! * [`gulp`] evaluates the trace formula on a [`MomentSet`] in the eigenbases of
//!   the two covariances (no explicit inverse of an ill-conditioned matrix);
//! * [`gulp_pairwise`] averages squared differences of the two regularized-whitened
//!   `n x n` Gram matrices;
//! * [`gulp_kernel`] works from kernel Gram matrices only, so any PSD kernel on the
//!   rows can stand in for the linear one.
//!
//! Baselines ([`cca`], [`cka`], [`procrustes`], [`pwcca`]) and the ridge-CCA inner
//! product share the same moment machinery.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{check_lambda, MomentSet, Spectrum};
use crate::repdata::Representation;

/// Squared values below `ROUNDOFF_FLOOR * scale` are indistinguishable from zero
/// for a quantity formed as a difference of terms of size `scale`.
pub const ROUNDOFF_FLOOR: f64 = 64.0 * f64::EPSILON;

/// Tolerated negative eigenvalue (relative) of a centered kernel Gram matrix.
pub const GRAM_PSD_TOL: f64 = 1e-8;

const PAIRWISE_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Gulp,
    GulpPairwise,
    GulpKernel,
    Cca,
    RidgeCcaInner,
    Cka,
    Pwcca,
    Procrustes,
}

impl MetricKind {
    pub const ALL: [MetricKind; 8] = [
        MetricKind::Gulp,
        MetricKind::GulpPairwise,
        MetricKind::GulpKernel,
        MetricKind::Cca,
        MetricKind::RidgeCcaInner,
        MetricKind::Cka,
        MetricKind::Pwcca,
        MetricKind::Procrustes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Gulp => "gulp",
            MetricKind::GulpPairwise => "gulp_pairwise",
            MetricKind::GulpKernel => "gulp_kernel",
            MetricKind::Cca => "cca",
            MetricKind::RidgeCcaInner => "ridge_cca_inner",
            MetricKind::Cka => "cka",
            MetricKind::Pwcca => "pwcca",
            MetricKind::Procrustes => "procrustes",
        }
    }

    pub fn uses_lambda(self) -> bool {
        matches!(
            self,
            MetricKind::Gulp
                | MetricKind::GulpPairwise
                | MetricKind::GulpKernel
                | MetricKind::RidgeCcaInner
        )
    }

    /// Whether `d(a, b) = d(b, a)` holds by construction.
    pub fn is_symmetric(self) -> bool {
        self != MetricKind::Pwcca
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric {s:?}")))
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf { bandwidth: f64 },
}

impl Kernel {
    fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Linear => Ok(()),
            Kernel::Rbf { bandwidth } if bandwidth > 0.0 && bandwidth.is_finite() => Ok(()),
            Kernel::Rbf { bandwidth } => Err(Error::InvalidArgument(format!(
                "rbf bandwidth must be finite and > 0, got {bandwidth}"
            ))),
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    /// `linear` or `rbf:<bandwidth>`.
    fn from_str(s: &str) -> Result<Self> {
        let k = match s.split_once(':') {
            None if s == "linear" => Kernel::Linear,
            Some(("rbf", bw)) => Kernel::Rbf {
                bandwidth: bw
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad bandwidth {bw:?}")))?,
            },
            _ => return Err(Error::InvalidArgument(format!("unknown kernel {s:?}"))),
        };
        k.validate()?;
        Ok(k)
    }
}

/// A metric together with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricId {
    pub kind: MetricKind,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Kernel>,
}

impl MetricId {
    pub fn new(kind: MetricKind) -> Self {
        Self {
            kind,
            lambda: 0.0,
            kernel: (kind == MetricKind::GulpKernel).then_some(Kernel::Linear),
        }
    }

    pub fn gulp(lambda: f64) -> Self {
        Self::new(MetricKind::Gulp).with_lambda(lambda)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = Some(kernel);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if let Some(k) = &self.kernel {
            k.validate()?;
        }
        Ok(())
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if self.kind.uses_lambda() {
            write!(f, "(lambda={:e})", self.lambda)?;
        }
        Ok(())
    }
}

/// Non-fatal conditions attached to a result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flag {
    /// `lambda = 0` with a singular covariance: the pseudo-inverse was used.
    #[serde(rename = "rank-deficient lambda=0")]
    RankDeficientLambdaZero,
    /// Canonical directions with zero variance were dropped.
    #[serde(rename = "dropped canonical directions")]
    DroppedCanonicalDirections,
    /// An asymmetric metric was symmetrized by averaging both orders.
    #[serde(rename = "symmetrized")]
    Symmetrized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    pub name_a: String,
    pub name_b: String,
    pub metric: MetricId,
    pub value: f64,
    pub squared_value: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<Flag>,
}

impl DistanceRecord {
    fn from_squared(names: (&str, &str), metric: MetricId, squared: f64) -> Self {
        let squared = squared.max(0.0);
        Self {
            name_a: names.0.to_string(),
            name_b: names.1.to_string(),
            metric,
            value: squared.sqrt(),
            squared_value: squared,
            flags: Vec::new(),
        }
    }

    fn flag_if(mut self, cond: bool, flag: Flag) -> Self {
        if cond && !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
        self
    }
}

/// Zeroes a difference-of-terms result that is within round-off of zero.
fn floor_roundoff(squared: f64, scale: f64) -> f64 {
    if squared <= ROUNDOFF_FLOOR * scale.abs() {
        0.0
    } else {
        squared
    }
}

fn names(m: &MomentSet) -> (&str, &str) {
    (&m.name_a, &m.name_b)
}

fn require_pair(a: &Representation, b: &Representation) -> Result<()> {
    for r in [a, b] {
        if !r.is_normalized() {
            return Err(Error::NotNormalized(r.name().to_string()));
        }
    }
    if a.n() != b.n() {
        return Err(Error::SampleMismatch(a.n(), b.n()));
    }
    Ok(())
}

/// Plug-in GULP distance from the trace formula.
///
/// `d^2 = tr(S_a A S_a A) + tr(S_b B S_b B) - 2 tr(S_a C S_b C^T)` with
/// `S = (Sigma + lambda I)^-1`. The first two terms are sums of squared shrinkage
/// factors in each covariance's eigenbasis; the cross term is the squared Frobenius
/// norm of the whitened cross-covariance.
pub fn gulp(moments: &MomentSet, lambda: f64) -> Result<DistanceRecord> {
    check_lambda(lambda)?;
    let self_a = moments.spectrum_phi().shrinkage_energy(lambda);
    let self_b = moments.spectrum_psi().shrinkage_energy(lambda);
    let cross = moments.whitened_cross(lambda).norm_squared();
    let sq = floor_roundoff(self_a + self_b - 2.0 * cross, self_a + self_b);
    Ok(
        DistanceRecord::from_squared(names(moments), MetricId::gulp(lambda), sq).flag_if(
            moments.rank_deficient(lambda),
            Flag::RankDeficientLambdaZero,
        ),
    )
}

/// `tr(C_lambda)` with `C_lambda = S_a C S_b C^T`: the inner product whose
/// induced distance is GULP.
pub fn ridge_cca_inner(moments: &MomentSet, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(moments.whitened_cross(lambda).norm_squared())
}

/// Plug-in GULP from the pairwise form
/// `(1/n^2) sum_ij (a_i^T S_a a_j - b_i^T S_b b_j)^2`.
///
/// Costs `O(n^2 (k + l))` time; rows are processed in blocks so memory stays
/// `O(n * block)`.
pub fn gulp_pairwise(
    a: &Representation,
    b: &Representation,
    lambda: f64,
) -> Result<DistanceRecord> {
    check_lambda(lambda)?;
    require_pair(a, b)?;
    let moments = MomentSet::new(a, b)?;
    let pa = a.data() * moments.inv_phi(lambda);
    let pb = b.data() * moments.inv_psi(lambda);
    let n = a.n();
    let at = a.data().transpose();
    let bt = b.data().transpose();

    let starts: Vec<usize> = (0..n).step_by(PAIRWISE_BLOCK).collect();
    let partials: Vec<f64> = starts
        .par_iter()
        .map(|&s| {
            let len = PAIRWISE_BLOCK.min(n - s);
            let ga = pa.rows(s, len) * &at;
            let gb = pb.rows(s, len) * &bt;
            (ga - gb).norm_squared()
        })
        .collect();
    let sq = partials.iter().sum::<f64>() / (n as f64 * n as f64);
    let metric = MetricId::new(MetricKind::GulpPairwise).with_lambda(lambda);
    Ok(
        DistanceRecord::from_squared((a.name(), b.name()), metric, sq).flag_if(
            moments.rank_deficient(lambda),
            Flag::RankDeficientLambdaZero,
        ),
    )
}

/// Kernel Gram matrix of the rows of `data`, before centering.
fn gram(data: &DMatrix<f64>, kernel: Kernel) -> DMatrix<f64> {
    match kernel {
        Kernel::Linear => data * data.transpose(),
        Kernel::Rbf { bandwidth } => {
            let n = data.nrows();
            let sq: Vec<f64> = data.row_iter().map(|r| r.norm_squared()).collect();
            let inner = data * data.transpose();
            let scale = -0.5 / (bandwidth * bandwidth);
            // exp(x) - 1 instead of exp(x): the constant is removed by double
            // centering and expm1 keeps precision for wide bandwidths.
            DMatrix::from_fn(n, n, |i, j| {
                let d2 = (sq[i] + sq[j] - 2.0 * inner[(i, j)]).max(0.0);
                (scale * d2).exp_m1()
            })
        }
    }
}

/// `H G H` with `H = I - 11^T/n`.
fn double_center(g: &mut DMatrix<f64>) {
    let n = g.nrows() as f64;
    let row_means: Vec<f64> = g.row_iter().map(|r| r.sum() / n).collect();
    let col_means: Vec<f64> = g.column_iter().map(|c| c.sum() / n).collect();
    let grand = row_means.iter().sum::<f64>() / n;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            g[(i, j)] += grand - row_means[i] - col_means[j];
        }
    }
    let sym = (&*g + g.transpose()) * 0.5;
    *g = sym;
}

/// Centered, trace-normalized kernel operator `K = HGH / tr(HGH)` (so `tr K = 1`).
fn kernel_operator(rep: &Representation, kernel: Kernel) -> Result<DMatrix<f64>> {
    let mut g = gram(rep.data(), kernel);
    double_center(&mut g);
    let tr = g.trace();
    if tr <= 0.0 {
        return Err(Error::Degenerate(format!(
            "{}: centered Gram matrix has zero trace",
            rep.name()
        )));
    }
    g.unscale_mut(tr);
    Ok(g)
}

/// Resolvent product `R = K (K + lambda I)^-1`.
fn kernel_resolvent(k: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    if lambda > 0.0 {
        let shifted = k + DMatrix::identity(n, n) * lambda;
        if let Some(chol) = shifted.cholesky() {
            let cols: Vec<usize> = (0..n).step_by(64).collect();
            let blocks: Vec<DMatrix<f64>> = cols
                .par_iter()
                .map(|&s| chol.solve(&k.columns(s, 64.min(n - s)).into_owned()))
                .collect();
            let mut r = DMatrix::zeros(n, n);
            for (&s, blk) in cols.iter().zip(&blocks) {
                r.columns_mut(s, blk.ncols()).copy_from(blk);
            }
            return Ok(r);
        }
    }
    // Pseudo-inverse route (lambda = 0) or a failed factorization.
    let spec = Spectrum::of(k)?;
    let raw = k.symmetric_eigenvalues();
    let min = raw.min();
    if min < -GRAM_PSD_TOL * raw.amax().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd(min));
    }
    let weights = spec
        .values()
        .zip_map(&spec.inverse_values(lambda), |e, w| e * w);
    Ok(spec.compose(&weights))
}

/// `tr(X Y)` without forming the product.
fn trace_of_product(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    x.component_mul(&y.transpose()).sum()
}

/// GULP computed from kernel Gram matrices of the rows only.
///
/// Gram matrices are double-centered and scaled to unit trace, mirroring the
/// centering and normalization of feature-space representations. With the linear
/// kernel this reproduces [`gulp`].
pub fn gulp_kernel(
    a: &Representation,
    b: &Representation,
    lambda: f64,
    kernel: Kernel,
) -> Result<DistanceRecord> {
    check_lambda(lambda)?;
    kernel.validate()?;
    require_pair(a, b)?;
    let ra = kernel_resolvent(&kernel_operator(a, kernel)?, lambda)?;
    let rb = kernel_resolvent(&kernel_operator(b, kernel)?, lambda)?;
    let self_a = trace_of_product(&ra, &ra);
    let self_b = trace_of_product(&rb, &rb);
    let cross = trace_of_product(&ra, &rb);
    let sq = floor_roundoff(self_a + self_b - 2.0 * cross, self_a + self_b);
    let metric = MetricId::new(MetricKind::GulpKernel)
        .with_lambda(lambda)
        .with_kernel(kernel);
    Ok(DistanceRecord::from_squared(
        (a.name(), b.name()),
        metric,
        sq,
    ))
}

/// Mean-squared CCA distance `1 - tr(C) / min(k, l)`.
pub fn cca(moments: &MomentSet) -> Result<DistanceRecord> {
    let tr_c = moments.whitened_cross(0.0).norm_squared();
    let m = moments.k().min(moments.l()) as f64;
    let sq = floor_roundoff((1.0 - tr_c / m).clamp(0.0, 1.0), 1.0);
    Ok(
        DistanceRecord::from_squared(names(moments), MetricId::new(MetricKind::Cca), sq)
            .flag_if(moments.rank_deficient(0.0), Flag::RankDeficientLambdaZero),
    )
}

/// Linear CKA distance `1 - |C|_F^2 / (|A|_F |B|_F)` from covariances.
pub fn cka(moments: &MomentSet) -> Result<DistanceRecord> {
    let denom = moments.sigma_phi.norm() * moments.sigma_psi.norm();
    if denom <= 0.0 {
        return Err(Error::Degenerate("cka: zero covariance norm".to_string()));
    }
    let rho = moments.sigma_cross.norm_squared() / denom;
    let sq = floor_roundoff((1.0 - rho).clamp(0.0, 1.0), 1.0);
    Ok(DistanceRecord::from_squared(
        names(moments),
        MetricId::new(MetricKind::Cka),
        sq,
    ))
}

/// Procrustes discrepancy `tr A + tr B - 2 |C|_*`. The squared value carries the
/// discrepancy itself.
pub fn procrustes(moments: &MomentSet) -> Result<DistanceRecord> {
    let nuclear: f64 = moments.sigma_cross.singular_values().sum();
    let traces = moments.sigma_phi.trace() + moments.sigma_psi.trace();
    let sq = floor_roundoff(traces - 2.0 * nuclear, traces);
    Ok(DistanceRecord::from_squared(
        names(moments),
        MetricId::new(MetricKind::Procrustes),
        sq,
    ))
}

/// Canonical correlations of a moment set (descending), restricted to directions
/// with nonzero variance in both views.
pub fn canonical_correlations(moments: &MomentSet) -> Vec<f64> {
    let r = moments
        .spectrum_phi()
        .rank()
        .min(moments.spectrum_psi().rank());
    let mut rho: Vec<f64> = moments
        .whitened_cross(0.0)
        .singular_values()
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    rho.sort_by(|x, y| y.total_cmp(x));
    rho.truncate(r);
    rho
}

/// Projection-weighted CCA distance `1 - sum_i w_i rho_i`, with `a` as the base view.
///
/// Weights are the summed absolute inner products of each canonical variable of
/// `a` with the columns of `a`, normalized to sum one. Not symmetric.
pub fn pwcca(a: &Representation, b: &Representation) -> Result<DistanceRecord> {
    require_pair(a, b)?;
    if a.n() <= a.k().max(b.k()) {
        return Err(Error::InvalidArgument(format!(
            "pwcca needs n > max(k, l); got n = {}, k = {}, l = {}",
            a.n(),
            a.k(),
            b.k()
        )));
    }
    let moments = MomentSet::new(a, b)?;
    let spec_a = moments.spectrum_phi();
    let rank = spec_a.rank().min(moments.spectrum_psi().rank());
    let svd = moments.whitened_cross(0.0).svd(true, false);
    let u = svd.u.expect("left singular vectors requested");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    order.truncate(rank);

    // Canonical direction w = V_a D_a^{1/2} u; <h, a_col_j> is proportional to
    // (Sigma_a w)_j = (V_a D_a^{1/2} diag(e) u)_j.
    let half = spec_a.inverse_values(0.0).map(f64::sqrt);
    let scale = spec_a.values().component_mul(&half);
    let mut weights = Vec::with_capacity(rank);
    let mut rhos = Vec::with_capacity(rank);
    for &i in &order {
        let coeffs = u.column(i).component_mul(&scale);
        let proj = spec_a.vectors() * coeffs;
        weights.push(proj.iter().map(|v| v.abs()).sum::<f64>());
        rhos.push(svd.singular_values[i].clamp(0.0, 1.0));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate(
            "pwcca: no canonical directions with nonzero variance".to_string(),
        ));
    }
    let similarity: f64 = weights.iter().zip(&rhos).map(|(w, r)| w / total * r).sum();
    let dist = floor_roundoff((1.0 - similarity).clamp(0.0, 1.0), 1.0);
    let dropped = rank < a.k().min(b.k());
    Ok(DistanceRecord::from_squared(
        (a.name(), b.name()),
        MetricId::new(MetricKind::Pwcca),
        dist * dist,
    )
    .flag_if(dropped, Flag::DroppedCanonicalDirections))
}

/// Evaluates a moment-based metric. Returns `None` for metrics that need the raw
/// representations (pairwise, kernel, pwcca).
pub fn evaluate_moments(moments: &MomentSet, metric: &MetricId) -> Option<Result<DistanceRecord>> {
    let out = match metric.kind {
        MetricKind::Gulp => gulp(moments, metric.lambda),
        MetricKind::Cca => cca(moments),
        MetricKind::Cka => cka(moments),
        MetricKind::Procrustes => procrustes(moments),
        MetricKind::RidgeCcaInner => ridge_cca_inner(moments, metric.lambda).map(|v| {
            let mut r = DistanceRecord::from_squared(names(moments), *metric, v);
            r.metric = *metric;
            r
        }),
        MetricKind::GulpPairwise | MetricKind::GulpKernel | MetricKind::Pwcca => return None,
    };
    Some(out)
}

/// Computes any metric between two normalized representations of the same samples.
///
/// For `ridge_cca_inner` the record's `squared_value` holds `tr(C_lambda)`.
pub fn compute(
    a: &Representation,
    b: &Representation,
    metric: &MetricId,
) -> Result<DistanceRecord> {
    metric.validate()?;
    require_pair(a, b)?;
    match metric.kind {
        MetricKind::GulpPairwise => gulp_pairwise(a, b, metric.lambda),
        MetricKind::GulpKernel => {
            gulp_kernel(a, b, metric.lambda, metric.kernel.unwrap_or(Kernel::Linear))
        }
        MetricKind::Pwcca => pwcca(a, b),
        _ => {
            let m = MomentSet::new(a, b)?;
            evaluate_moments(&m, metric).expect("moment-based metric")
        }
    }
}
