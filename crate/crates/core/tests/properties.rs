use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use repsim::analysis::reported_value;
use repsim::repdata::haar_orthogonal;
use repsim::*;

const GRID: [f64; 5] = [0.0, 1e-6, 1e-4, 1e-2, 1.0];

fn gaussian(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(rng))
}

fn rep(name: &str, data: DMatrix<f64>) -> Representation {
    Representation::new(name, data)
        .unwrap()
        .normalize()
        .unwrap()
}

/// Views of a shared latent through random maps plus noise.
fn views(seed: u64, n: usize, widths: &[usize], noise: f64) -> Vec<Representation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = gaussian(&mut rng, n, 6);
    widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let m = gaussian(&mut rng, 6, w);
            rep(&format!("v{i}"), &z * m + gaussian(&mut rng, n, w) * noise)
        })
        .collect()
}

fn rotate(r: &Representation, u: &DMatrix<f64>) -> Representation {
    r.map_features(r.name(), u).unwrap().normalize().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn distances_are_orthogonally_invariant(
        seed in 0u64..1000, k in 1usize..7, l in 1usize..7, noise in 0.1f64..2.0,
    ) {
        let v = views(seed, 120, &[k, l], noise);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let (u, w) = (haar_orthogonal(&mut rng, k), haar_orthogonal(&mut rng, l));
        let (a, b) = (&v[0], &v[1]);
        let (ua, wb) = (rotate(a, &u), rotate(b, &w));
        let mut metrics: Vec<MetricId> = GRID.iter().map(|&x| MetricId::gulp(x)).collect();
        metrics.extend(GRID.iter().map(|&x| MetricId::new(MetricKind::GulpPairwise).with_lambda(x)));
        metrics.extend([MetricKind::Cca, MetricKind::Cka, MetricKind::Procrustes].map(MetricId::new));
        for m in &metrics {
            let d0 = reported_value(&compute(a, b, m).unwrap());
            let d1 = reported_value(&compute(&ua, &wb, m).unwrap());
            prop_assert!((d0 - d1).abs() <= 1e-8, "{m}: {d0} vs {d1}");
        }
        let p0 = pwcca(a, b).unwrap().value;
        let p1 = pwcca(a, &wb).unwrap().value;
        prop_assert!((p0 - p1).abs() <= 1e-8, "pwcca: {p0} vs {p1}");
    }

    #[test]
    fn gulp_vanishes_on_rotated_copies(seed in 0u64..1000, k in 1usize..8) {
        let a = &views(seed, 80, &[k], 0.5)[0];
        let u = haar_orthogonal(&mut ChaCha8Rng::seed_from_u64(seed), k);
        let ua = rotate(a, &u);
        let m = MomentSet::new(a, &ua).unwrap();
        for &lambda in &GRID[1..] {
            prop_assert!(gulp(&m, lambda).unwrap().value <= 1e-8);
        }
    }

    #[test]
    fn gulp_is_a_pseudometric(
        seed in 0u64..1000, w in proptest::array::uniform3(1usize..6), lambda in 1e-6f64..10.0,
    ) {
        let v = views(seed, 100, &w, 0.8);
        let d = |i: usize, j: usize| gulp(&MomentSet::new(&v[i], &v[j]).unwrap(), lambda).unwrap().value;
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((d(i, j) - d(j, i)).abs() <= 1e-10);
                for m in 0..3 {
                    prop_assert!(d(i, j) <= d(i, m) + d(m, j) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn three_routes_agree(
        seed in 0u64..1000, k in 1usize..6, l in 1usize..6, idx in 0usize..5,
    ) {
        let lambda = GRID[idx];
        let v = views(seed, 60, &[k, l], 0.6);
        let g = gulp(&MomentSet::new(&v[0], &v[1]).unwrap(), lambda).unwrap().squared_value;
        let p = gulp_pairwise(&v[0], &v[1], lambda).unwrap().squared_value;
        let kr = gulp_kernel(&v[0], &v[1], lambda, Kernel::Linear).unwrap().squared_value;
        prop_assert!((g - p).abs() <= 1e-6 * g.max(1e-12), "{g} vs {p}");
        prop_assert!((g - kr).abs() <= 1e-6 * g.max(1e-12), "{g} vs {kr}");
    }

    #[test]
    fn covariance_has_unit_trace(seed in 0u64..1000, n in 2usize..50, k in 1usize..8) {
        let r = rep("r", gaussian(&mut ChaCha8Rng::seed_from_u64(seed), n, k));
        prop_assert!((covariance(&r).unwrap().trace() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn ridge_probe_is_equivariant(seed in 0u64..1000, k in 1usize..7, lambda in 1e-4f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rep("a", gaussian(&mut rng, 50, k));
        let u = haar_orthogonal(&mut rng, k);
        let ua = rotate(&a, &u);
        let y = DVector::from_fn(50, |_, _| StandardNormal.sample(&mut rng));
        let task = ProbeTask::new(y, (0..35).collect(), (35..50).collect()).unwrap();
        let beta = ridge_fit(&a, &task, lambda).unwrap().beta;
        let beta_u = ridge_fit(&ua, &task, lambda).unwrap().beta;
        prop_assert!((beta_u - &u * beta).amax() <= 1e-10);
    }

    #[test]
    fn prediction_gaps_respect_the_bound(seed in 0u64..1000, k in 1usize..6, l in 1usize..6) {
        let v = views(seed, 70, &[k, l], 1.0);
        for &lambda in &GRID {
            let r = uniform_bound_check(&v[0], &v[1], lambda, 200, seed).unwrap();
            prop_assert_eq!(r.violations, 0);
        }
    }

    #[test]
    fn distance_matrix_is_permutation_equivariant(seed in 0u64..1000, perm_seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let v = views(seed, 60, &[2, 3, 4, 3], 0.7);
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let permuted: Vec<Representation> = order.iter().map(|&i| v[i].clone()).collect();
        for metric in [MetricId::gulp(1e-2), MetricId::new(MetricKind::Cka), MetricId::new(MetricKind::Pwcca)] {
            let d = distance_matrix(&v, metric).unwrap();
            let dp = distance_matrix(&permuted, metric).unwrap();
            for i in 0..v.len() {
                for j in 0..v.len() {
                    prop_assert_eq!(dp.get(i, j), d.get(order[i], order[j]));
                }
            }
        }
    }

    #[test]
    fn mds_recovers_planar_configurations(seed in 0u64..1000, m in 3usize..12) {
        let pts = gaussian(&mut ChaCha8Rng::seed_from_u64(seed), m, 2);
        let d = DMatrix::from_fn(m, m, |i, j| (pts.row(i) - pts.row(j)).norm());
        let names = (0..m).map(|i| i.to_string()).collect();
        let dm = DistanceMatrix::new(names, MetricId::gulp(0.0), d.clone()).unwrap();
        let e = classical_mds(&dm, 2).unwrap();
        let back = DMatrix::from_fn(m, m, |i, j| (e.coords.row(i) - e.coords.row(j)).norm());
        prop_assert!((back - d).amax() <= 1e-8);
    }

    #[test]
    fn linkage_heights_never_decrease(
        m in 2usize..14, entries in proptest::collection::vec(0.0f64..5.0, 91),
    ) {
        let mut v = DMatrix::zeros(m, m);
        let mut it = entries.iter();
        for i in 0..m {
            for j in i + 1..m {
                v[(i, j)] = *it.next().unwrap();
                v[(j, i)] = v[(i, j)];
            }
        }
        let names = (0..m).map(|i| i.to_string()).collect();
        let dm = DistanceMatrix::new(names, MetricId::gulp(0.0), v).unwrap();
        let tree = cluster_average_linkage(&dm).unwrap();
        prop_assert_eq!(tree.leaves(), m);
        prop_assert!(tree.merges.windows(2).all(|w| w[0].height <= w[1].height));
        prop_assert_eq!(tree.merges.last().unwrap().size, m);
        if m >= 2 && v_is_nonzero(&dm) {
            prop_assert_eq!(std_ratio(&dm, &[(0..m).collect()]).unwrap(), vec![1.0]);
        }
    }
}

fn v_is_nonzero(dm: &DistanceMatrix) -> bool {
    dm.values.amax() > 0.0
}
