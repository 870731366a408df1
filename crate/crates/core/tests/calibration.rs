use onion_core::calibration::{kmeans, pass_mask, pick_threshold, roc_curve, KMeansConfig, ThresholdSet};
use onion_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    // Few distinct score levels so ties are common.
    prop::collection::vec((0u8..12, any::<bool>()), 2..60)
        .prop_filter("both classes", |v| v.iter().any(|e| e.1) && v.iter().any(|e| !e.1))
        .prop_map(|v| v.into_iter().map(|(s, l)| (s as f64 / 11.0, l)).unzip())
}

proptest! {
    /// Every point equals a direct recount at its threshold, and the
    /// thresholds are exactly +∞ followed by the distinct scores.
    #[test]
    fn roc_matches_quadratic_recount((scores, labels) in scores_and_labels()) {
        let roc = roc_curve(&scores, &labels).unwrap();
        let mut distinct = scores.clone();
        distinct.sort_by(|a, b| b.partial_cmp(a).unwrap());
        distinct.dedup();
        prop_assert_eq!(roc.len(), distinct.len() + 1);
        prop_assert_eq!(roc[0].threshold, f64::INFINITY);
        let pos = labels.iter().filter(|&&l| l).count() as f64;
        let neg = labels.len() as f64 - pos;
        for (pt, &t) in roc[1..].iter().zip(&distinct) {
            prop_assert_eq!(pt.threshold, t);
            let tp = scores.iter().zip(&labels).filter(|(s, l)| **l && **s >= t).count() as f64;
            let fp = scores.iter().zip(&labels).filter(|(s, l)| !**l && **s >= t).count() as f64;
            prop_assert_eq!(pt.tpr, tp / pos);
            prop_assert_eq!(pt.fpr, fp / neg);
        }
    }

    #[test]
    fn pass_mask_is_or_of_threshold_tests(
        rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 0..30),
        thr in prop::collection::btree_map(0usize..4, 0.0f64..1.0, 1..4),
    ) {
        let n = rows.len();
        let probs = Tensor::new(vec![n, 4], rows.concat()).unwrap();
        let mut set = ThresholdSet::new();
        for (&u, &t) in &thr {
            set.insert(u, onion_core::calibration::ThresholdEntry {
                threshold: t,
                target_tpr: f64::NAN,
                achieved_tpr: f64::NAN,
                achieved_fpr: f64::NAN,
            });
        }
        let mask = pass_mask(&probs, &set).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let want = thr.iter().any(|(&u, &t)| row[u] >= t);
            prop_assert_eq!(mask.get(i), want);
        }
    }
}

/// 100 positives with scores 0.01..1.00: the threshold for a target TPR
/// `q` is the score of the `⌈100 q⌉`-th best positive.
#[test]
fn pick_threshold_on_a_ladder() {
    let mut scores: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
    let mut labels = vec![true; 100];
    scores.push(0.0);
    labels.push(false);
    let roc = roc_curve(&scores, &labels).unwrap();
    for (target, want) in [(0.01, 1.0), (0.5, 0.51), (0.95, 0.06), (0.951, 0.05), (1.0, 0.01)] {
        let p = pick_threshold(&roc, target).unwrap();
        assert_eq!(p.threshold, want, "target {target}");
        assert!(p.tpr >= target);
        assert_eq!(p.fpr, 0.0);
    }
}

fn inertia(points: &[Vec<f64>], assignment: &[usize], k: usize) -> f64 {
    let dim = points[0].len();
    (0..k)
        .map(|g| {
            let members: Vec<&Vec<f64>> = points.iter().zip(assignment).filter(|(_, &a)| a == g).map(|(p, _)| p).collect();
            if members.is_empty() {
                return 0.0;
            }
            let centre: Vec<f64> =
                (0..dim).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
            members.iter().map(|p| p.iter().zip(&centre).map(|(a, c)| (a - c) * (a - c)).sum::<f64>()).sum()
        })
        .sum()
}

/// k-means is never worse than the best of 1000 random partitions.
#[test]
fn kmeans_beats_random_partitions() {
    let mut r = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..10 {
        let k = r.random_range(2..5);
        let n = r.random_range(k + 2..16);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
        let res = kmeans(&points, &KMeansConfig::new(k, trial)).unwrap();
        assert!((inertia(&points, &res.assignment, k) - res.inertia).abs() < 1e-9);
        let best_random = (0..1000)
            .map(|_| {
                let a: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
                inertia(&points, &a, k)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(res.inertia <= best_random + 1e-9, "trial {trial}: {} > {best_random}", res.inertia);
    }
}
