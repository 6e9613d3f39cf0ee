//! Property checks shared by the `properties` and `acceptance` targets.
//! Every property runs through a fixed-seed runner so failures reproduce.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mtot::metrics::smspe;
use mtot::simgen::{bspline_basis, GpSampler, Kernel};
use mtot::solver::update_basis;
use mtot::tensor::{fold, fold_general, tucker, ModeSplit, Tensor};
use mtot::{fit, Dataset, FitConfig, Matrix};

pub type Property = (&'static str, fn() -> Result<(), String>);

pub const PROPERTIES: &[Property] = &[
    ("orthonormal tucker factors", tucker_factors_are_orthonormal),
    ("orthonormal basis updates", basis_updates_are_orthonormal),
    ("orthonormal fitted bases", fitted_bases_are_orthonormal),
    ("b-spline partition of unity", bspline_partition_of_unity),
    ("smspe scale invariance", smspe_scale_invariance),
    ("fold/unfold round trip", fold_unfold_round_trip),
    ("gp covariance monte carlo", gp_covariance_monte_carlo),
];

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..Config::default()
    })
}

fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn gaussian_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn shape(max_order: usize, max_extent: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=max_extent, 1..=max_order)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

pub fn tucker_factors_are_orthonormal() -> Result<(), String> {
    let strategy = (shape(4, 6), any::<u64>(), any::<u64>());
    check(64, strategy, |(shape, seed, rank_seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = gaussian_tensor(&shape, &mut rng);
        let mut pick = ChaCha8Rng::seed_from_u64(rank_seed);
        let ranks: Vec<usize> = shape.iter().map(|&n| pick.random_range(1..=n)).collect();
        let dec = tucker(&t, &ranks).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for (k, u) in dec.factors.iter().enumerate() {
            let err = u.orthonormality_error();
            ensure(err <= 1e-10, || format!("factor {k} of {shape:?}: {err:e}"))?;
        }
        Ok(())
    })
}

pub fn basis_updates_are_orthonormal() -> Result<(), String> {
    let strategy = (
        2usize..8,
        prop::collection::vec(1usize..5, 1..=3),
        1usize..3,
        any::<u64>(),
    );
    check(64, strategy, |(m, q, inputs, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reduced: Vec<usize> = q.iter().map(|&n| rng.random_range(1..=n)).collect();
        let v: Vec<Matrix> = q
            .iter()
            .zip(&reduced)
            .map(|(&n, &r)| gaussian_matrix(n, r, &mut rng).orthonormalize_columns().unwrap())
            .collect();
        let mut y_shape = vec![m];
        y_shape.extend(&q);
        let y = gaussian_tensor(&y_shape, &mut rng);
        let mut cores = Vec::new();
        let mut zs = Vec::new();
        for _ in 0..inputs {
            let p = rng.random_range(1..4);
            let mut core_shape = vec![p];
            core_shape.extend(&reduced);
            cores.push(gaussian_tensor(&core_shape, &mut rng));
            zs.push(gaussian_matrix(m, p, &mut rng));
        }
        for i in 0..q.len() {
            let update = update_basis(&y, &cores, &zs, &v, i).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let err = update.basis.orthonormality_error();
            ensure(err <= 1e-10, || format!("mode {i}: {err:e}"))?;
        }
        Ok(())
    })
}

pub fn fitted_bases_are_orthonormal() -> Result<(), String> {
    let strategy = (6usize..12, 2usize..6, 2usize..5, 2usize..5, any::<u64>());
    check(16, strategy, |(m, p, q1, q2, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian_tensor(&[m, p], &mut rng);
        let y = gaussian_tensor(&[m, q1, q2], &mut rng);
        let data = Dataset::new(y, vec![x]).unwrap();
        let rank = rng.random_range(1..=q1.min(q2));
        let model =
            fit(&data, &FitConfig::new(vec![p.min(2)], rank)).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for (i, v) in model.v.iter().enumerate() {
            let err = v.orthonormality_error();
            ensure(err <= 1e-10, || format!("output basis {i}: {err:e}"))?;
        }
        Ok(())
    })
}

pub fn bspline_partition_of_unity() -> Result<(), String> {
    let strategy = (1usize..6, 0usize..20, prop::collection::vec(0.0..=1.0f64, 1..50));
    check(128, strategy, |(order, interior, mut grid)| {
        grid.push(0.0);
        grid.push(1.0);
        let b = bspline_basis(order, interior, &grid).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for (i, &t) in grid.iter().enumerate() {
            let row = b.row(i);
            let sum: f64 = row.iter().sum();
            ensure((sum - 1.0).abs() <= 1e-12, || format!("row at {t} sums to {sum}"))?;
            ensure(row.iter().all(|&v| v >= 0.0), || format!("negative value at {t}"))?;
        }
        Ok(())
    })
}

pub fn smspe_scale_invariance() -> Result<(), String> {
    let strategy = (shape(3, 5), any::<u64>(), -20i32..20, 1e-3..1e3f64, any::<bool>());
    check(128, strategy, |(shape, seed, power, alpha, negate)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = gaussian_tensor(&shape, &mut rng);
        let y_hat = gaussian_tensor(&shape, &mut rng);
        let base = smspe(&y, &y_hat).unwrap();
        let sign = if negate { -1.0 } else { 1.0 };
        // powers of two scale without rounding, so the ratio is unchanged bit for bit
        let two = sign * 2f64.powi(power);
        let exact = smspe(&y.scale(two), &y_hat.scale(two)).unwrap();
        ensure(exact == base, || format!("{exact} != {base} at {two}"))?;
        let alpha = sign * alpha;
        let scaled = smspe(&y.scale(alpha), &y_hat.scale(alpha)).unwrap();
        ensure((scaled - base).abs() <= 1e-12 * base, || {
            format!("{scaled} vs {base} at {alpha}")
        })
    })
}

pub fn fold_unfold_round_trip() -> Result<(), String> {
    let strategy = (shape(5, 5), any::<u64>(), any::<u64>());
    check(128, strategy, |(shape, seed, split_seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = gaussian_tensor(&shape, &mut rng);
        let norm = t.frobenius_norm();
        for j in 0..shape.len() {
            let m = t.unfold(j).unwrap();
            ensure(m.rows() == shape[j], || format!("mode {j} rows"))?;
            ensure(fold(&m, j, &shape).unwrap() == t, || format!("mode {j} of {shape:?}"))?;
            let n = m.frobenius_norm();
            ensure((n - norm).abs() <= 1e-12 * norm, || {
                format!("mode {j} norm {n} vs {norm}")
            })?;
        }
        if shape.len() >= 2 {
            let mut pick = ChaCha8Rng::seed_from_u64(split_seed);
            let mut modes: Vec<usize> = (0..shape.len()).collect();
            for k in (1..modes.len()).rev() {
                modes.swap(k, pick.random_range(0..=k));
            }
            let cut = pick.random_range(1..modes.len());
            let split = ModeSplit::new(modes[..cut].to_vec(), modes[cut..].to_vec());
            let m = t.unfold_general(&split).unwrap();
            ensure(fold_general(&m, &split, &shape).unwrap() == t, || {
                format!("{split:?} of {shape:?}")
            })?;
        }
        Ok(())
    })
}

pub fn gp_covariance_monte_carlo() -> Result<(), String> {
    const DRAWS: usize = 5000;
    let kernels = [
        Kernel::ROUGH,
        Kernel::SMOOTH,
        Kernel::SCALAR_COEFFICIENT,
        Kernel::Matern52 { rate: 3.0 },
    ];
    let strategy = (
        0..kernels.len(),
        prop::collection::vec(0.0..=1.0f64, 2..8),
        any::<u64>(),
    );
    check(12, strategy, |(k, mut grid, seed)| {
        grid.sort_by(f64::total_cmp);
        let kernel = kernels[k];
        let sampler = GpSampler::new(kernel, &grid).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.len();
        let mut cov = vec![0.0; n * n];
        for _ in 0..DRAWS {
            let s = sampler.sample(&mut rng);
            for a in 0..n {
                for b in 0..n {
                    cov[a * n + b] += s[a] * s[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                let empirical = cov[a * n + b] / DRAWS as f64;
                let expected = kernel.eval(grid[a] - grid[b]);
                // one standard error is at most sqrt(2 / DRAWS) ≈ 0.02
                ensure((empirical - expected).abs() <= 0.1, || {
                    format!("{kernel:?} at ({}, {}): {empirical} vs {expected}", grid[a], grid[b])
                })?;
            }
        }
        Ok(())
    })
}
