use evmod_core::baselines::{gmm_em, GmmParams};
use evmod_core::clustering::{kmeans, KMeansParams};
use evmod_core::knn::SpatioTemporalPoint;
use proptest::prelude::*;

fn points(coords: &[[f64; 3]]) -> Vec<SpatioTemporalPoint> {
    coords
        .iter()
        .enumerate()
        .map(|(i, c)| SpatioTemporalPoint::new(c[0], c[1], c[2], i))
        .collect()
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn distinct(coords: &[[f64; 3]]) -> usize {
    let mut v: Vec<[u64; 3]> = coords.iter().map(|c| c.map(f64::to_bits)).collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// Gaussian-ish blobs: a few centres with uniform jitter, plus integer
/// duplicates now and then.
fn cloud() -> impl Strategy<Value = Vec<[f64; 3]>> {
    (
        prop::collection::vec(prop::array::uniform3(-30.0f64..30.0), 1..5),
        prop::collection::vec((0usize..5, prop::array::uniform3(-4.0f64..4.0), prop::bool::weighted(0.1)), 8..120),
    )
        .prop_map(|(centres, offsets)| {
            offsets
                .into_iter()
                .map(|(c, o, snap)| {
                    let c = centres[c % centres.len()];
                    let p = [c[0] + o[0], c[1] + o[1], c[2] + o[2]];
                    if snap {
                        p.map(f64::round)
                    } else {
                        p
                    }
                })
                .collect()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn lloyd_invariants(coords in cloud(), f in 2usize..7, seed in any::<u64>()) {
        prop_assume!(distinct(&coords) >= f);
        let c = kmeans(&points(&coords), f, seed, KMeansParams::default()).unwrap();
        let scale = 1e-9 * (1.0 + c.inertia_trace[0]);
        for w in c.inertia_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + scale, "inertia rose: {:?}", c.inertia_trace);
        }
        // every point sits with its nearest final centroid
        for (p, &l) in coords.iter().zip(&c.labels) {
            let own = d2(p, &c.centroids[l]);
            let best = c.centroids.iter().map(|m| d2(p, m)).fold(f64::INFINITY, f64::min);
            prop_assert!(own <= best + 1e-9 * (1.0 + best));
        }
        let inertia: f64 = coords.iter().zip(&c.labels).map(|(p, &l)| d2(p, &c.centroids[l])).sum();
        prop_assert!((inertia - c.inertia).abs() <= scale);
        prop_assert!(c.cluster_sizes().iter().all(|&s| s > 0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn em_log_likelihood_never_drops(coords in cloud(), f in 1usize..5, seed in any::<u64>()) {
        prop_assume!(distinct(&coords) >= f);
        let params = GmmParams { f, max_iter: 100, tol: 1e-8, reg_covar: 1e-3, seed };
        let fit = gmm_em(&points(&coords), params).unwrap();
        for w in fit.log_likelihood_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()), "log-likelihood fell: {:?}", fit.log_likelihood_trace);
        }
        let total: f64 = fit.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(fit.variances.iter().flatten().all(|&v| v >= 1e-3));
    }
}

#[test]
fn kmeans_is_seed_deterministic() {
    let coords: Vec<[f64; 3]> = (0..60).map(|i| [(i % 7) as f64, (i % 11) as f64 * 0.5, (i / 9) as f64]).collect();
    let a = kmeans(&points(&coords), 3, 5, KMeansParams::default()).unwrap();
    let b = kmeans(&points(&coords), 3, 5, KMeansParams::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn kmeans_rejects_too_few_distinct_points() {
    let coords = vec![[1.0; 3]; 10];
    assert!(kmeans(&points(&coords), 2, 0, KMeansParams::default()).is_err());
}
