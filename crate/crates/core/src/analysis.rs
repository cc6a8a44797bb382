//! Collections of representations: distance matrices, classical MDS, average-linkage
//! clustering, cluster-compactness ratios, and plug-in convergence curves.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::distances::{compute, gulp, DistanceRecord, Flag, MetricId, MetricKind};
use crate::error::{Error, Result};
use crate::moments::MomentSet;
use crate::probes::pairwise_records;
use crate::repdata::Representation;

/// Tolerance for symmetry and zero diagonal of a [`DistanceMatrix`].
pub const MATRIX_TOL: f64 = 1e-10;

/// Value placed in a distance matrix: the unsquared distance, except for
/// Procrustes where the discrepancy itself is reported.
pub fn reported_value(rec: &DistanceRecord) -> f64 {
    match rec.metric.kind {
        MetricKind::Procrustes => rec.squared_value,
        _ => rec.value,
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DistanceMatrix {
    pub names: Vec<String>,
    pub metric: MetricId,
    #[serde(rename = "matrix", deserialize_with = "de_rows")]
    pub values: DMatrix<f64>,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

impl Serialize for DistanceMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("DistanceMatrix", 4)?;
        st.serialize_field("names", &self.names)?;
        st.serialize_field("metric", &self.metric)?;
        st.serialize_field("matrix", &rows(&self.values))?;
        if !self.flags.is_empty() {
            st.serialize_field("flags", &self.flags)?;
        }
        st.end()
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn de_rows<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
    let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(serde::de::Error::custom("matrix must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl DistanceMatrix {
    /// Wraps a matrix after checking the distance-matrix invariants.
    pub fn new(names: Vec<String>, metric: MetricId, values: DMatrix<f64>) -> Result<Self> {
        let dm = Self {
            names,
            metric,
            values,
            flags: Vec::new(),
        };
        dm.validate()?;
        Ok(dm)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.names.len();
        if self.values.shape() != (m, m) {
            return Err(Error::InvalidArgument(format!(
                "matrix is {:?} for {m} names",
                self.values.shape()
            )));
        }
        for i in 0..m {
            if self.values[(i, i)].abs() > MATRIX_TOL {
                return Err(Error::InvalidArgument(format!(
                    "nonzero diagonal entry at {i}"
                )));
            }
            for j in 0..m {
                let v = self.values[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "entry ({i}, {j}) = {v} is not a finite nonnegative distance"
                    )));
                }
                if (v - self.values[(j, i)]).abs() > MATRIX_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }
}

fn assemble(
    reps: &[Representation],
    metric: MetricId,
    records: &[DistanceRecord],
) -> DistanceMatrix {
    let m = reps.len();
    let mut values = DMatrix::zeros(m, m);
    for (rec, (i, j)) in records.iter().zip(crate::probes::pair_indices(m)) {
        values[(i, j)] = reported_value(rec);
        values[(j, i)] = values[(i, j)];
    }
    DistanceMatrix {
        names: reps.iter().map(|r| r.name().to_string()).collect(),
        metric,
        values,
        flags: Vec::new(),
    }
}

/// All pairwise distances for one metric. Pairs are evaluated concurrently; an
/// asymmetric metric is averaged over both orders and flagged.
pub fn distance_matrix(reps: &[Representation], metric: MetricId) -> Result<DistanceMatrix> {
    Ok(distance_matrices(reps, &[metric])?.remove(0))
}

/// Distance matrices for several metrics, sharing per-pair moments.
pub fn distance_matrices(
    reps: &[Representation],
    metrics: &[MetricId],
) -> Result<Vec<DistanceMatrix>> {
    if reps.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 representations, got {}",
            reps.len()
        )));
    }
    if let Some(m) = metrics.iter().find(|m| m.kind == MetricKind::RidgeCcaInner) {
        return Err(Error::InvalidArgument(format!(
            "{m} is a similarity, not a distance"
        )));
    }
    let forward = pairwise_records(reps, metrics)?;
    let mut out = Vec::with_capacity(metrics.len());
    for (metric, recs) in metrics.iter().zip(&forward) {
        let mut dm = assemble(reps, *metric, recs);
        if !metric.kind.is_symmetric() {
            let pairs = crate::probes::pair_indices(reps.len());
            let backward: Vec<Result<f64>> = pairs
                .par_iter()
                .map(|&(i, j)| {
                    compute(&reps[j], &reps[i], metric)
                        .map(|r| reported_value(&r))
                        .map_err(|e| Error::Pair {
                            a: reps[j].name().to_string(),
                            b: reps[i].name().to_string(),
                            source: Box::new(e),
                        })
                })
                .collect();
            for (&(i, j), back) in pairs.iter().zip(backward) {
                let avg = 0.5 * (dm.values[(i, j)] + back?);
                dm.values[(i, j)] = avg;
                dm.values[(j, i)] = avg;
            }
            dm.flags.push(Flag::Symmetrized);
        }
        for rec in recs {
            for f in &rec.flags {
                if !dm.flags.contains(f) {
                    dm.flags.push(f.clone());
                }
            }
        }
        out.push(dm);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub names: Vec<String>,
    /// `m x dims` coordinates.
    pub coords: DMatrix<f64>,
    /// Eigenvalues of the doubly-centered squared-distance matrix, descending and
    /// unclamped (negative values signal a non-Euclidean input).
    pub eigenvalues: Vec<f64>,
}

impl Serialize for Embedding {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Embedding", 3)?;
        st.serialize_field("names", &self.names)?;
        st.serialize_field("coords", &rows(&self.coords))?;
        st.serialize_field("eigenvalues", &self.eigenvalues)?;
        st.end()
    }
}

/// Torgerson MDS: `B = -1/2 H D^2 H`, coordinates from the top eigenpairs scaled
/// by the square roots of the (clamped) eigenvalues.
pub fn classical_mds(dm: &DistanceMatrix, dims: usize) -> Result<Embedding> {
    let m = dm.len();
    if m < 3 {
        return Err(Error::InvalidArgument(format!(
            "MDS needs at least 3 points, got {m}"
        )));
    }
    if dims == 0 || dims > m {
        return Err(Error::InvalidArgument(format!(
            "dims must lie in [1, {m}], got {dims}"
        )));
    }
    let d2 = dm.values.map(|v| v * v);
    let mf = m as f64;
    let row_means: Vec<f64> = d2.row_iter().map(|r| r.sum() / mf).collect();
    let grand = row_means.iter().sum::<f64>() / mf;
    let b = DMatrix::from_fn(m, m, |i, j| {
        -0.5 * (d2[(i, j)] - row_means[i] - row_means[j] + grand)
    });
    let eig = SymmetricEigen::new((&b + b.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut coords = DMatrix::zeros(m, dims);
    for (c, &idx) in order.iter().take(dims).enumerate() {
        let scale = eig.eigenvalues[idx].max(0.0).sqrt();
        let v = eig.eigenvectors.column(idx);
        let sign = v
            .iter()
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, |x| x.signum());
        for i in 0..m {
            coords[(i, c)] = sign * scale * v[i];
        }
    }
    Ok(Embedding {
        names: dm.names.clone(),
        coords,
        eigenvalues: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Cluster ids: leaves are `0..m`, the cluster formed by merge `t` is `m + t`.
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn leaves(&self) -> usize {
        self.merges.len() + 1
    }
}

/// Agglomerative clustering merging the pair of clusters with the smallest mean
/// inter-cluster distance. Ties go to the lexicographically smallest id pair.
pub fn cluster_average_linkage(dm: &DistanceMatrix) -> Result<Dendrogram> {
    let m = dm.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "clustering needs at least 2 points, got {m}"
        )));
    }
    // Active clusters: (id, size). `sums[a][b]` holds the summed leaf distances.
    let mut active: Vec<(usize, usize)> = (0..m).map(|i| (i, 1)).collect();
    let mut sums: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| dm.values[(i, j)]).collect())
        .collect();
    let mut merges = Vec::with_capacity(m - 1);

    while active.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for p in 0..active.len() {
            for q in p + 1..active.len() {
                let (ip, sp) = active[p];
                let (iq, sq) = active[q];
                let avg = sums[p][q] / (sp * sq) as f64;
                let better = match best {
                    None => true,
                    Some((h, bp, bq)) => {
                        avg < h || (avg == h && (ip, iq) < (active[bp].0, active[bq].0))
                    }
                };
                if better {
                    best = Some((avg, p, q));
                }
            }
        }
        let (height, p, q) = best.expect("at least two active clusters");
        let (ip, sp) = active[p];
        let (iq, sq) = active[q];
        let id = m + merges.len();
        merges.push(Merge {
            left: ip.min(iq),
            right: ip.max(iq),
            height,
            size: sp + sq,
        });
        // Fold q into p, then drop q.
        let row_q = sums[q].clone();
        for (r, sq_r) in row_q.into_iter().enumerate() {
            if r != p && r != q {
                let s = sums[p][r] + sq_r;
                sums[p][r] = s;
                sums[r][p] = s;
            }
        }
        active[p] = (id, sp + sq);
        active.remove(q);
        sums.remove(q);
        for row in sums.iter_mut() {
            row.remove(q);
        }
    }
    Ok(Dendrogram { merges })
}

/// Ratio of the overall root-mean-square distance to the within-class one, per
/// class. Classes are lists of point indices. A class with zero internal spread
/// yields `f64::INFINITY`.
pub fn std_ratio(dm: &DistanceMatrix, classes: &[Vec<usize>]) -> Result<Vec<f64>> {
    let m = dm.len();
    let mut seen = vec![false; m];
    for class in classes {
        if class.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "class {class:?} has fewer than 2 members"
            )));
        }
        for &i in class {
            if i >= m || seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "index {i} is out of range or in two classes"
                )));
            }
            seen[i] = true;
        }
    }
    let mean_sq = |idx: &[usize]| {
        let mut total = 0.0;
        for &i in idx {
            for &j in idx {
                if i != j {
                    total += dm.values[(i, j)].powi(2);
                }
            }
        }
        total / (idx.len() * (idx.len() - 1)) as f64
    };
    let all: Vec<usize> = (0..m).collect();
    let overall = mean_sq(&all);
    Ok(classes
        .iter()
        .map(|c| {
            let within = mean_sq(c);
            if within > 0.0 {
                (overall / within).sqrt()
            } else {
                f64::INFINITY
            }
        })
        .collect())
}

/// Same as [`std_ratio`] with classes given by member names.
pub fn std_ratio_by_name(dm: &DistanceMatrix, classes: &[Vec<String>]) -> Result<Vec<f64>> {
    let idx = classes
        .iter()
        .map(|c| {
            c.iter()
                .map(|name| {
                    dm.names
                        .iter()
                        .position(|n| n == name)
                        .ok_or_else(|| Error::InvalidArgument(format!("unknown name {name:?}")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    std_ratio(dm, &idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub sizes: Vec<usize>,
    pub rel_errors: Vec<f64>,
    pub slope: f64,
}

/// Least-squares slope of `ln(err)` against `ln(size)`.
pub fn loglog_slope(sizes: &[usize], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = sizes.iter().map(|&s| (s as f64).ln()).collect();
    let ys: Vec<f64> = errors
        .iter()
        .map(|&e| e.max(f64::MIN_POSITIVE).ln())
        .collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Relative error of the plug-in GULP estimate on row subsamples of each size
/// against the full-sample estimate.
pub fn convergence_curve(
    a: &Representation,
    b: &Representation,
    lambda: f64,
    sizes: &[usize],
    seed: u64,
) -> Result<ConvergenceCurve> {
    if sizes.len() < 3 {
        return Err(Error::GridTooSmall(sizes.len()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "sizes must be strictly increasing".to_string(),
        ));
    }
    let n = a.n();
    if sizes[0] < 2 || *sizes.last().unwrap() > n {
        return Err(Error::InvalidArgument(format!(
            "sizes must lie in [2, {n}]"
        )));
    }
    let reference = gulp(&MomentSet::new(a, b)?, lambda)?.squared_value;
    if reference <= 1e-12 {
        return Err(Error::PairTooClose(reference));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsets: Vec<Vec<usize>> = sizes
        .iter()
        .map(|&s| sample(&mut rng, n, s).into_vec())
        .collect();
    let rel_errors = subsets
        .par_iter()
        .map(|rows| {
            let sa = a.select_rows(rows)?.normalize()?;
            let sb = b.select_rows(rows)?.normalize()?;
            let est = gulp(&MomentSet::new(&sa, &sb)?, lambda)?.squared_value;
            Ok((est - reference).abs() / reference)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ConvergenceCurve {
        sizes: sizes.to_vec(),
        slope: loglog_slope(sizes, &rel_errors),
        rel_errors,
    })
}
