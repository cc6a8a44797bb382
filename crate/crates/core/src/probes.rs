//! Ridge-regression probes on frozen representations and the experiments built
//! on them: the empirical uniform-bound check and the probe-generalization
//! correlation study.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distances::{compute, evaluate_moments, gulp, DistanceRecord, MetricId};
use crate::error::{Error, Result};
use crate::moments::{check_lambda, MomentSet, Spectrum};
use crate::repdata::Representation;

/// Slack allowed when comparing a prediction gap with the squared GULP distance.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeProbe {
    pub lambda: f64,
    pub beta: DVector<f64>,
    /// Set when `lambda = 0` met a singular covariance and the pseudo-inverse was used.
    pub rank_deficient: bool,
}

/// Labels over all samples plus a disjoint train/test split of sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTask {
    labels: DVector<f64>,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl ProbeTask {
    pub fn new(labels: DVector<f64>, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        if train.is_empty() || test.is_empty() {
            return Err(Error::InvalidArgument(
                "train and test index sets must be nonempty".to_string(),
            ));
        }
        let n = labels.len();
        let mut seen = vec![0u8; n];
        for &i in train.iter().chain(&test) {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range for {n} labels"
                )));
            }
            seen[i] += 1;
            if seen[i] > 1 {
                return Err(Error::InvalidArgument(format!(
                    "index {i} appears twice or in both train and test"
                )));
            }
        }
        Ok(Self {
            labels,
            train,
            test,
        })
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }
}

/// Ridge coefficients for every label column at once:
/// `(Sigma_rows + lambda I)^-1 (1/|rows|) A_rows^T Y_rows`.
fn fit_columns(
    data: &DMatrix<f64>,
    labels: &DMatrix<f64>,
    rows: &[usize],
    lambda: f64,
) -> Result<(DMatrix<f64>, bool)> {
    let m = rows.len() as f64;
    let a = data.select_rows(rows);
    let y = labels.select_rows(rows);
    let sigma = a.tr_mul(&a) / m;
    let spec = Spectrum::of(&((&sigma + sigma.transpose()) * 0.5))?;
    let rank_deficient = lambda == 0.0 && spec.rank() < spec.dim();
    let rhs = a.tr_mul(&y) / m;
    Ok((spec.regularized_inverse(lambda) * rhs, rank_deficient))
}

pub fn ridge_fit(rep: &Representation, task: &ProbeTask, lambda: f64) -> Result<RidgeProbe> {
    check_lambda(lambda)?;
    if !rep.is_normalized() {
        return Err(Error::NotNormalized(rep.name().to_string()));
    }
    if task.labels.len() != rep.n() {
        return Err(Error::SampleMismatch(rep.n(), task.labels.len()));
    }
    let y = DMatrix::from_column_slice(task.labels.len(), 1, task.labels.as_slice());
    let (beta, rank_deficient) = fit_columns(rep.data(), &y, &task.train, lambda)?;
    Ok(RidgeProbe {
        lambda,
        beta: beta.column(0).into_owned(),
        rank_deficient,
    })
}

/// Mean squared difference of the two probes' predictions over `test` rows.
pub fn prediction_gap(
    probe_a: &RidgeProbe,
    rep_a: &Representation,
    probe_b: &RidgeProbe,
    rep_b: &Representation,
    test: &[usize],
) -> Result<f64> {
    if rep_a.n() != rep_b.n() {
        return Err(Error::SampleMismatch(rep_a.n(), rep_b.n()));
    }
    if probe_a.beta.len() != rep_a.k() || probe_b.beta.len() != rep_b.k() {
        return Err(Error::InvalidArgument(
            "probe width does not match representation".to_string(),
        ));
    }
    if test.is_empty() || test.iter().any(|&i| i >= rep_a.n()) {
        return Err(Error::InvalidArgument("invalid test indices".to_string()));
    }
    let pa = rep_a.data().select_rows(test) * &probe_a.beta;
    let pb = rep_b.data().select_rows(test) * &probe_b.beta;
    Ok((pa - pb).norm_squared() / test.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n_tasks: usize,
    pub max_gap: f64,
    pub gulp_sq: f64,
    pub violations: usize,
}

/// Draws i.i.d. standard normal labels, rescaled so `(1/n) sum y_i^2 = 1`.
fn unit_tasks(rng: &mut ChaCha8Rng, n: usize, n_tasks: usize) -> DMatrix<f64> {
    let mut y = DMatrix::<f64>::zeros(n, n_tasks);
    for t in 0..n_tasks {
        for i in 0..n {
            y[(i, t)] = StandardNormal.sample(rng);
        }
        let scale = (y.column(t).norm_squared() / n as f64).sqrt();
        y.column_mut(t).unscale_mut(scale);
    }
    y
}

/// Fits both probes on the full sample for `n_tasks` random unit-norm tasks and
/// counts tasks whose prediction gap exceeds the squared GULP distance.
pub fn uniform_bound_check(
    a: &Representation,
    b: &Representation,
    lambda: f64,
    n_tasks: usize,
    seed: u64,
) -> Result<BoundReport> {
    check_lambda(lambda)?;
    if n_tasks == 0 {
        return Err(Error::InvalidArgument("n_tasks must be >= 1".to_string()));
    }
    let moments = MomentSet::new(a, b)?;
    let gulp_sq = gulp(&moments, lambda)?.squared_value;
    let n = a.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = unit_tasks(&mut rng, n, n_tasks);
    let all: Vec<usize> = (0..n).collect();
    let (beta_a, _) = fit_columns(a.data(), &labels, &all, lambda)?;
    let (beta_b, _) = fit_columns(b.data(), &labels, &all, lambda)?;
    let diff = a.data() * beta_a - b.data() * beta_b;
    let gaps: Vec<f64> = diff
        .column_iter()
        .map(|c| c.norm_squared() / n as f64)
        .collect();
    Ok(BoundReport {
        n_tasks,
        max_gap: gaps.iter().copied().fold(0.0, f64::max),
        gulp_sq,
        violations: gaps.iter().filter(|&&g| g > gulp_sq + BOUND_SLACK).count(),
    })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN in input".to_string()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::UndefinedCorrelation("constant input vector".to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Ridge strength of the downstream probes.
    pub task_lambda: f64,
    pub n_tasks: usize,
    pub seed: u64,
    /// Fraction of samples used to fit probes; the rest measure prediction gaps.
    pub train_fraction: f64,
    /// Distances whose pairwise values are correlated with the prediction gaps.
    pub metrics: Vec<MetricId>,
}

impl ExperimentConfig {
    pub fn new(task_lambda: f64, n_tasks: usize, seed: u64, metrics: Vec<MetricId>) -> Self {
        Self {
            task_lambda,
            n_tasks,
            seed,
            train_fraction: 0.625,
            metrics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCorrelation {
    pub metric: MetricId,
    /// Mean Spearman rho over tasks where it is defined; `None` when undefined for all.
    pub mean_rho: Option<f64>,
    pub defined_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub task_lambda: f64,
    pub n_tasks: usize,
    pub n_pairs: usize,
    pub correlations: Vec<MetricCorrelation>,
}

impl GeneralizationReport {
    /// Metric with the highest defined mean correlation (first wins ties).
    pub fn best(&self) -> Option<&MetricCorrelation> {
        self.correlations
            .iter()
            .filter(|c| c.mean_rho.is_some())
            .fold(None, |best: Option<&MetricCorrelation>, c| match best {
                Some(b) if b.mean_rho >= c.mean_rho => Some(b),
                _ => Some(c),
            })
    }
}

pub(crate) fn pair_indices(m: usize) -> Vec<(usize, usize)> {
    (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect()
}

/// True when `a` sorts before (or equal to) `b` by name, shape, then data.
fn canonical_order(a: &Representation, b: &Representation) -> bool {
    let key = |r: &Representation| (r.name().to_string(), r.n(), r.k());
    match key(a).cmp(&key(b)) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => {
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                match x.total_cmp(y) {
                    std::cmp::Ordering::Less => return true,
                    std::cmp::Ordering::Greater => return false,
                    std::cmp::Ordering::Equal => {}
                }
            }
            true
        }
    }
}

/// Pairwise values of several metrics over one list of representations, pairs in
/// `(0,1), (0,2), ..., (m-2,m-1)` order. Moment sets are shared across metrics.
pub(crate) fn pairwise_records(
    reps: &[Representation],
    metrics: &[MetricId],
) -> Result<Vec<Vec<DistanceRecord>>> {
    let pairs = pair_indices(reps.len());
    let per_pair: Vec<Result<Vec<DistanceRecord>>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (&reps[i], &reps[j]);
            let wrap = |e: Error| Error::Pair {
                a: a.name().to_string(),
                b: b.name().to_string(),
                source: Box::new(e),
            };
            // Symmetric metrics are evaluated in a content-defined order so the
            // value of a pair does not depend on where it sits in `reps`.
            let (p, q) = if canonical_order(a, b) {
                (a, b)
            } else {
                (b, a)
            };
            let moments = MomentSet::new(p, q).map_err(wrap)?;
            metrics
                .iter()
                .map(|m| {
                    m.validate().map_err(wrap)?;
                    let mut rec = if m.kind.is_symmetric() {
                        match evaluate_moments(&moments, m) {
                            Some(r) => r.map_err(wrap)?,
                            None => compute(p, q, m).map_err(wrap)?,
                        }
                    } else {
                        compute(a, b, m).map_err(wrap)?
                    };
                    rec.name_a = a.name().to_string();
                    rec.name_b = b.name().to_string();
                    Ok(rec)
                })
                .collect()
        })
        .collect();
    let per_pair: Vec<Vec<DistanceRecord>> = per_pair.into_iter().collect::<Result<_>>()?;
    Ok((0..metrics.len())
        .map(|mi| per_pair.iter().map(|recs| recs[mi].clone()).collect())
        .collect())
}

/// Correlates per-task prediction gaps between all probe pairs with each metric's
/// pairwise distances.
///
/// For every task, labels are i.i.d. standard normal; probes are fit on the train
/// rows at `task_lambda` and gaps are measured on the test rows.
pub fn generalization_experiment(
    reps: &[Representation],
    config: &ExperimentConfig,
) -> Result<GeneralizationReport> {
    let m = reps.len();
    if m < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 representations, got {m}"
        )));
    }
    check_lambda(config.task_lambda)?;
    if config.n_tasks == 0 {
        return Err(Error::InvalidArgument("n_tasks must be >= 1".to_string()));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must lie in (0, 1), got {}",
            config.train_fraction
        )));
    }
    let n = reps[0].n();
    for r in reps {
        if !r.is_normalized() {
            return Err(Error::NotNormalized(r.name().to_string()));
        }
        if r.n() != n {
            return Err(Error::SampleMismatch(n, r.n()));
        }
    }
    let n_train = ((n as f64) * config.train_fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidArgument(format!(
            "split leaves an empty side (n = {n})"
        )));
    }

    let distances = pairwise_records(reps, &config.metrics)?;
    let distance_vectors: Vec<Vec<f64>> = distances
        .iter()
        .map(|recs| recs.iter().map(|r| r.squared_value).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (train, test) = order.split_at(n_train);
    let mut labels = DMatrix::<f64>::zeros(n, config.n_tasks);
    for t in 0..config.n_tasks {
        for i in 0..n {
            labels[(i, t)] = StandardNormal.sample(&mut rng);
        }
    }

    // Test-set predictions of every probe: one n_test x n_tasks matrix per rep.
    let predictions: Vec<DMatrix<f64>> = reps
        .par_iter()
        .map(|r| {
            let (beta, _) = fit_columns(r.data(), &labels, train, config.task_lambda)?;
            Ok(r.data().select_rows(test) * beta)
        })
        .collect::<Result<_>>()?;

    let pairs = pair_indices(m);
    let mut sums = vec![0.0; config.metrics.len()];
    let mut counts = vec![0usize; config.metrics.len()];
    for t in 0..config.n_tasks {
        let tau: Vec<f64> = pairs
            .iter()
            .map(|&(i, j)| {
                let d = predictions[i].column(t) - predictions[j].column(t);
                d.norm_squared() / test.len() as f64
            })
            .collect();
        for (mi, dv) in distance_vectors.iter().enumerate() {
            if let Ok(rho) = spearman_rho(&tau, dv) {
                sums[mi] += rho;
                counts[mi] += 1;
            }
        }
    }

    let correlations = config
        .metrics
        .iter()
        .zip(sums.iter().zip(&counts))
        .map(|(metric, (&s, &c))| MetricCorrelation {
            metric: *metric,
            mean_rho: (c > 0).then(|| s / c as f64),
            defined_tasks: c,
        })
        .collect();
    Ok(GeneralizationReport {
        task_lambda: config.task_lambda,
        n_tasks: config.n_tasks,
        n_pairs: pairs.len(),
        correlations,
    })
}
