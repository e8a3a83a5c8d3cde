mod common;

use common::{rel_diff, Dense, TestRng};
use csbg::{compress, DesignMatrix, FrameVector};
use proptest::prelude::*;

#[test]
fn full_size_matrix_is_normalized() {
    let (s, n) = (2000usize, 16384usize);
    let phi = DesignMatrix::generate(s, n, 1).unwrap();
    let values = phi.to_row_major();
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
    let sd_mean = (var / count).sqrt();
    assert!(mean.abs() <= 3.0 * sd_mean, "mean {mean}");
    assert!((var * s as f64 - 1.0).abs() <= 0.05, "variance {var}");
}

#[test]
fn column_second_moments_match_row_count() {
    let (s, n) = (400usize, 2000usize);
    let phi = DesignMatrix::generate(s, n, 9).unwrap();
    let target = 1.0 / s as f64;
    // Each column moment averages s squared normals: sd = target * sqrt(2/s).
    let stderr = target * (2.0 / s as f64).sqrt();
    let outside = (0..n)
        .filter(|&c| {
            let moment = (0..s).map(|r| phi.get(r, c).powi(2)).sum::<f64>() / s as f64;
            (moment - target).abs() > 3.0 * stderr
        })
        .count();
    // About 0.27% of columns fall outside 3 standard errors by chance.
    assert!(outside <= n / 100, "{outside} of {n} columns outside 3 standard errors");
}

#[test]
fn seeds_select_independent_streams() {
    let a = DesignMatrix::generate(1, 2, 7).unwrap();
    assert_eq!(a, DesignMatrix::generate(1, 2, 7).unwrap());
    assert_ne!(a, DesignMatrix::generate(1, 2, 8).unwrap());
}

#[test]
fn compress_matches_matrix_vector_oracle() {
    let mut rng = TestRng::new(3);
    let phi = DesignMatrix::generate(10, 50, 3).unwrap();
    let v: Vec<f64> = (0..50).map(|_| rng.range(0.0, 255.0)).collect();
    let b: Vec<f64> = (0..50).map(|_| rng.range(0.0, 255.0)).collect();
    let diff: Vec<f64> = v.iter().zip(&b).map(|(x, y)| x - y).collect();
    let dense = Dense {
        rows: 10,
        cols: 50,
        data: phi.to_row_major(),
    };
    let g = compress(&phi, &FrameVector::frame(v).unwrap(), &FrameVector::background(b).unwrap(), 0).unwrap();
    assert!(rel_diff(g.as_slice(), &dense.matvec(&diff)) < 1e-9);
}

#[test]
fn saved_matrix_reloads_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("phi.sbsm");
    let phi = DesignMatrix::generate(30, 70, 12).unwrap();
    phi.save(&path).unwrap();
    let back = DesignMatrix::load(&path).unwrap();
    let bits = |m: &DesignMatrix| m.to_row_major().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&phi), bits(&back));
    assert_eq!(back.seed(), 12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compression_is_antisymmetric(seed in 0u64..1000, s in 1usize..20, extra in 1usize..30) {
        let n = s + extra;
        let mut rng = TestRng::new(seed);
        let phi = DesignMatrix::generate(s, n, seed).unwrap();
        let v: Vec<f64> = (0..n).map(|_| rng.range(0.0, 255.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.range(0.0, 255.0)).collect();
        let forward = compress(&phi, &FrameVector::frame(v.clone()).unwrap(), &FrameVector::background(b.clone()).unwrap(), 0).unwrap();
        let backward = compress(&phi, &FrameVector::frame(b).unwrap(), &FrameVector::background(v).unwrap(), 0).unwrap();
        for (x, y) in forward.as_slice().iter().zip(backward.as_slice()) {
            prop_assert!((x + y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn compression_is_deterministic(seed in 0u64..1000) {
        let phi = DesignMatrix::generate(8, 20, seed).unwrap();
        let v = FrameVector::frame((0..20).map(|i| i as f64 * 3.0).collect()).unwrap();
        let b = FrameVector::background(vec![10.0; 20]).unwrap();
        prop_assert_eq!(compress(&phi, &v, &b, 0).unwrap(), compress(&phi, &v, &b, 0).unwrap());
    }
}
