use coldstart_core::sparse::CsrMatrix;
use coldstart_core::trainers::{
    build_sppmi, randomized_svd, train_als, train_svd_embeddings, AffinityMatrix, AlsConfig,
    CooccurrenceCounts, SvdConfig,
};
use coldstart_core::{TrackId, UserId};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn affinity(scores: &DMatrix<f64>) -> AffinityMatrix {
    AffinityMatrix {
        users: (0..scores.nrows() as u64).map(UserId).collect(),
        tracks: (0..scores.ncols() as u64).map(TrackId).collect(),
        scores: CsrMatrix::from_dense(scores),
    }
}

/// Each half-step solves its ridge systems exactly up to rounding; confidence weights
/// reach 1e4 here, so the slack is scaled by the starting objective.
fn assert_monotone(objective: &[f64]) {
    let slack = 1e-12 * objective[0];
    for w in objective.windows(2) {
        assert!(w[1] <= w[0] + slack, "objective rose {} -> {}", w[0], w[1]);
    }
}

/// Block of ones inside a 20x20 matrix: preference is the rank-1 product of two
/// indicator vectors.
#[test]
fn als_recovers_rank_one_preferences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<bool> = (0..20).map(|i| i % 3 != 0).collect();
    let cols: Vec<bool> = (0..20).map(|j| j % 4 != 1).collect();
    let scores = DMatrix::from_fn(20, 20, |i, j| {
        if rows[i] && cols[j] {
            rng.random_range(1.0..5.0)
        } else {
            0.0
        }
    });
    let m = affinity(&scores);
    let cfg = AlsConfig {
        dim: 1,
        lambda: 1e-6,
        alpha: 1e4,
        iterations: 60,
        seed: 3,
        ..AlsConfig::default()
    };
    let fit = train_als(&m, &cfg).unwrap();
    assert_monotone(&fit.objective);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        for j in 0..20 {
            let p = if scores[(i, j)] > 0.0 { 1.0 } else { 0.0 };
            let x = fit.users.get(i as u64).unwrap()[0];
            let y = fit.tracks.get(j as u64).unwrap()[0];
            worst = worst.max((x * y - p).abs());
        }
    }
    assert!(worst < 1e-3, "max reconstruction error {worst}");
}

#[test]
fn als_objective_never_increases_on_random_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scores = DMatrix::from_fn(30, 25, |_, _| {
        if rng.random_bool(0.2) {
            rng.random_range(1..6) as f64
        } else {
            0.0
        }
    });
    let fit = train_als(
        &affinity(&scores),
        &AlsConfig {
            dim: 4,
            iterations: 10,
            ..AlsConfig::default()
        },
    )
    .unwrap();
    assert_eq!(fit.objective.len(), 21);
    assert_monotone(&fit.objective);
}

fn random_sppmi(seed: u64, n: usize) -> (CsrMatrix, Vec<TrackId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dense = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            if rng.random_bool(0.3) {
                let c = rng.random_range(1..20) as f64;
                dense[(i, j)] = c;
                dense[(j, i)] = c;
            }
        }
    }
    let tracks: Vec<TrackId> = (0..n as u64).map(TrackId).collect();
    let counts = CooccurrenceCounts::from_counts(tracks.clone(), CsrMatrix::from_dense(&dense)).unwrap();
    (build_sppmi(&counts, 1.0).unwrap(), tracks)
}

/// `U_d Σ_d U_dᵀ` from a dense SVD, the Gram matrix of rows `U_d Σ_d^½`.
fn dense_oracle_gram(s: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let svd = s.clone().svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let u = svd.u.unwrap();
    let mut gram = DMatrix::zeros(s.nrows(), s.nrows());
    for &k in order.iter().take(d) {
        let col = u.column(k);
        gram += &col * col.transpose() * svd.singular_values[k];
    }
    gram
}

#[test]
fn svd_gram_matches_dense_oracle() {
    for seed in 0..5 {
        let (s, tracks) = random_sppmi(seed, 30);
        let dense = s.to_dense();
        assert!(dense.iter().all(|v| *v >= 0.0));
        assert!((&dense - dense.transpose()).norm() == 0.0);
        for d in [3, 8] {
            let emb = train_svd_embeddings(
                &s,
                &tracks,
                &SvdConfig {
                    dim: d,
                    seed,
                    ..SvdConfig::default()
                },
            )
            .unwrap();
            let e = DMatrix::from_row_slice(30, d, emb.as_flat());
            let gram = &e * e.transpose();
            let err = (gram - dense_oracle_gram(&dense, d)).norm();
            assert!(err < 1e-6, "seed {seed} d {d}: frobenius gap {err:e}");
        }
    }
}

#[test]
fn exact_rank_psd_matrix_is_reconstructed() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = DMatrix::from_fn(30, 4, |_, _| rng.random_range(0.0..1.0));
    let s = &a * a.transpose();
    let tracks: Vec<TrackId> = (0..30u64).map(TrackId).collect();
    let emb = train_svd_embeddings(
        &CsrMatrix::from_dense(&s),
        &tracks,
        &SvdConfig {
            dim: 4,
            ..SvdConfig::default()
        },
    )
    .unwrap();
    let e = DMatrix::from_row_slice(30, 4, emb.as_flat());
    let err = (&e * e.transpose() - &s).norm();
    assert!(err < 1e-6, "frobenius gap {err:e}");
}

#[test]
fn singular_values_match_dense_decomposition() {
    let (s, _) = random_sppmi(11, 30);
    let fit = randomized_svd(
        &s,
        &SvdConfig {
            dim: 5,
            ..SvdConfig::default()
        },
    )
    .unwrap();
    let mut reference: Vec<f64> = s.to_dense().singular_values().iter().copied().collect();
    reference.sort_by(|a, b| b.total_cmp(a));
    for (a, b) in fit.sigma.iter().zip(&reference) {
        assert!((a - b).abs() < 1e-8 * reference[0], "{a} vs {b}");
    }
    assert!(fit.converged);
}

#[test]
fn embeddings_are_seed_deterministic() {
    let (s, tracks) = random_sppmi(2, 30);
    let cfg = SvdConfig {
        dim: 6,
        seed: 5,
        ..SvdConfig::default()
    };
    let a = train_svd_embeddings(&s, &tracks, &cfg).unwrap();
    let b = train_svd_embeddings(&s, &tracks, &cfg).unwrap();
    let (mut ba, mut bb) = (Vec::new(), Vec::new());
    a.write_binary(&mut ba).unwrap();
    b.write_binary(&mut bb).unwrap();
    assert_eq!(ba, bb);
}
