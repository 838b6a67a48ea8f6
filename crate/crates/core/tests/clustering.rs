mod common;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use recdiff::dataio::{InteractionDataset, UserSequence};
use recdiff::intent::{assign_intent, kmeans_fit, segment_prefixes, silhouette_score, IntentModel, IntentPrototypes};
use recdiff::tensor::{squared_distance, Matrix};

fn blobs(centres: &[Vec<f64>], per: usize, sd: f64, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = common::rng(seed);
    let noise = Normal::new(0.0, sd).unwrap();
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (k, c) in centres.iter().enumerate() {
        for _ in 0..per {
            rows.push(c.iter().map(|v| v + noise.sample(&mut rng)).collect::<Vec<_>>());
            truth.push(k);
        }
    }
    (Matrix::from_rows(&rows).unwrap(), truth)
}

/// Direct O(n²) silhouette: (b − a) / max(a, b), singletons score 0.
fn silhouette_oracle(x: &Matrix, labels: &[usize]) -> f64 {
    let n = x.rows();
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += squared_distance(x.row(i), x.row(j)).sqrt();
                counts[labels[j]] += 1;
            }
        }
        if counts[labels[i]] == 0 {
            continue;
        }
        let a = sums[labels[i]] / counts[labels[i]] as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

#[test]
fn inertia_never_increases() {
    let start = std::time::Instant::now();
    let mut rng = common::rng(0);
    for inst in 0..100 {
        let n = rng.gen_range(10..80);
        let d = rng.gen_range(1..6);
        let k = rng.gen_range(2..6.min(n));
        let x = common::randn(n, d, 1000 + inst);
        let fit = kmeans_fit(&x, k, 100, inst).unwrap();
        for w in fit.inertia_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "instance {inst}: {} -> {}", w[0], w[1]);
        }
        // every cluster is non-empty and labels are nearest-centroid
        for c in 0..k {
            assert!(fit.labels.contains(&c), "instance {inst}: cluster {c} empty");
        }
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn separable_blobs_recover_means() {
    for seed in 0..10 {
        let centres = vec![vec![-10.0, 0.0, 5.0], vec![10.0, 3.0, -5.0]];
        let (x, truth) = blobs(&centres, 40, 1.0, seed);
        let fit = kmeans_fit(&x, 2, 100, seed).unwrap();
        assert!(fit.converged);
        for blob in 0..2 {
            let rows: Vec<usize> = (0..x.rows()).filter(|&r| truth[r] == blob).collect();
            let mean: Vec<f64> = (0..3).map(|c| rows.iter().map(|&r| x.get(r, c)).sum::<f64>() / rows.len() as f64).collect();
            let label = fit.labels[rows[0]];
            assert!(rows.iter().all(|&r| fit.labels[r] == label));
            for (a, b) in fit.prototypes.centroids.row(label).iter().zip(&mean) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn silhouette_far_blobs_and_random_labels() {
    let (x, truth) = blobs(&[vec![0.0, 0.0], vec![50.0, 50.0]], 30, 1.0, 1);
    let s = silhouette_score(&x, &truth).unwrap();
    assert!(s > 0.9, "{s}");
    for seed in 0..20 {
        let (x, _) = blobs(&[vec![0.0, 0.0, 0.0]], 200, 1.0, 100 + seed);
        let mut rng = common::rng(200 + seed);
        let labels: Vec<usize> = (0..200).map(|_| rng.gen_range(0..3)).collect();
        let s = silhouette_score(&x, &labels).unwrap();
        assert!(s.abs() <= 0.1, "seed {seed}: {s}");
    }
}

#[test]
fn silhouette_matches_direct_oracle() {
    let mut rng = common::rng(3);
    for inst in 0..30 {
        let n = rng.gen_range(4..40);
        let k = rng.gen_range(2..4);
        let x = common::randn(n, 3, 500 + inst);
        let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        for l in labels.iter_mut() {
            if rng.gen_bool(0.5) {
                *l = rng.gen_range(0..k);
            }
        }
        let got = silhouette_score(&x, &labels).unwrap();
        let want = silhouette_oracle(&x, &labels);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    let x = common::randn(5, 2, 9);
    assert!(silhouette_score(&x, &[0; 5]).is_err());
}

#[test]
fn assignment_picks_nearest_prototype() {
    let protos = IntentPrototypes {
        centroids: Matrix::from_rows(&[vec![0.0, 0.0], vec![4.0, 0.0], vec![0.0, 4.0]]).unwrap(),
        fit_step: 0,
    };
    let mut rng = common::rng(4);
    for _ in 0..500 {
        let h = vec![rng.gen_range(-2.0..6.0), rng.gen_range(-2.0..6.0)];
        let (k, c) = assign_intent(&h, &protos).unwrap();
        let brute = (0..3)
            .min_by(|&a, &b| {
                squared_distance(&h, protos.centroids.row(a)).partial_cmp(&squared_distance(&h, protos.centroids.row(b))).unwrap()
            })
            .unwrap();
        assert_eq!(k, brute);
        assert_eq!(c, protos.centroids.row(k));
    }
    assert!(assign_intent(&[1.0], &protos).is_err());
    assert!(IntentModel::default().assign(&[0.0, 0.0]).is_err());
}

#[test]
fn prefixes_are_every_head_of_the_training_sequence() {
    let ds = InteractionDataset {
        items: (0..6).map(|i| format!("i{i}")).collect(),
        users: vec![
            UserSequence { user: "a".into(), train: vec![0, 1, 2, 3], valid: 4, test: 5 },
            UserSequence { user: "b".into(), train: vec![5], valid: 1, test: 2 },
        ],
    };
    let p = segment_prefixes(&ds, 2).unwrap();
    let lens: Vec<(usize, usize)> = p.prefixes.iter().map(|q| (q.user, q.len)).collect();
    assert_eq!(lens, vec![(0, 2), (0, 3), (0, 4)]);
    assert_eq!(p.items(&ds, p.prefixes[1]), &[0, 1, 2]);
    assert_eq!(segment_prefixes(&ds, 1).unwrap().len(), 5);
    assert!(segment_prefixes(&ds, 0).is_err());
}
