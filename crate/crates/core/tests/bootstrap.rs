//! Properties of the stationary block bootstrap.

use decumulate::data::{
    load_series, path_month_indices, read_series, resample_months, stationary_block_bootstrap, write_series,
    BlockLength, BootstrapConfig, ReturnSeries,
};
use decumulate::rng;
use rand_distr::{Distribution, StandardNormal};

/// Monthly series with serial correlation in stock returns and contemporaneous
/// stock/bond correlation.
fn ar_series(n: usize, seed: u64) -> ReturnSeries {
    let mut r = rng::stream(seed, 1, 0);
    let (mut s, mut b, mut prev) = (Vec::new(), Vec::new(), 0.0);
    for _ in 0..n {
        let z1: f64 = StandardNormal.sample(&mut r);
        let z2: f64 = StandardNormal.sample(&mut r);
        let x = 0.6 * prev + 0.04 * z1;
        prev = x;
        s.push((0.006 + x).exp());
        b.push((0.002 + 0.01 * (0.5 * z1 + 0.866 * z2)).exp());
    }
    ReturnSeries::new((0..n as u32).collect(), s, b).unwrap()
}

fn resampled_logs(s: &ReturnSeries, c: &BootstrapConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    (0..c.n_paths)
        .map(|j| {
            let idx = path_month_indices(s.len(), c, j).unwrap();
            (
                idx.iter().map(|k| s.stock_gross[*k].ln()).collect(),
                idx.iter().map(|k| s.bond_gross[*k].ln()).collect(),
            )
        })
        .unzip()
}

fn lag1(paths: &[Vec<f64>]) -> (f64, usize) {
    let all: Vec<f64> = paths.iter().flatten().copied().collect();
    let m = all.iter().sum::<f64>() / all.len() as f64;
    let v = all.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / all.len() as f64;
    let (mut c, mut n) = (0.0, 0);
    for p in paths {
        for w in p.windows(2) {
            c += (w[0] - m) * (w[1] - m);
            n += 1;
        }
    }
    (c / n as f64 / v, n)
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let c: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    c / (va * vb).sqrt()
}

#[test]
fn unit_blocks_destroy_serial_correlation() {
    let s = ar_series(1128, 1);
    let c = BootstrapConfig { expected_block_months: 1.0, n_paths: 300, periods_per_rebalance: 12, n_rebalances: 30, seed: 4 };
    let (stock, _) = resampled_logs(&s, &c);
    let (rho, n) = lag1(&stock);
    assert!(rho.abs() < 3.0 / (n as f64).sqrt(), "lag-1 autocorrelation {rho}");
}

#[test]
fn long_blocks_retain_serial_correlation() {
    let s = ar_series(1128, 1);
    let (source, _) = lag1(&[s.stock_gross.iter().map(|r| r.ln()).collect()]);
    let c = BootstrapConfig { expected_block_months: 12.0, n_paths: 300, periods_per_rebalance: 12, n_rebalances: 30, seed: 4 };
    let (stock, _) = resampled_logs(&s, &c);
    let (rho, _) = lag1(&stock);
    assert!(rho > 0.5 * source && rho < source + 0.05, "resampled {rho}, source {source}");
}

#[test]
fn mean_block_length_is_geometric_mean() {
    let b = BlockLength::new(3.0).unwrap();
    let mut r = rng::stream(3, 0, 0);
    let n = 100_000;
    let lens: Vec<f64> = (0..n).map(|_| b.sample(&mut r) as f64).collect();
    let mean = lens.iter().sum::<f64>() / n as f64;
    let v: f64 = 1.0 / 3.0;
    let se = ((1.0 - v) / (v * v)).sqrt() / (n as f64).sqrt();
    assert!((mean - 3.0).abs() < 3.0 * se, "mean block {mean}");
    assert!(lens.iter().all(|l| *l >= 1.0));
}

#[test]
fn paired_sampling_preserves_cross_correlation_and_marginals() {
    let s = ar_series(1128, 2);
    let src_s: Vec<f64> = s.stock_gross.iter().map(|r| r.ln()).collect();
    let src_b: Vec<f64> = s.bond_gross.iter().map(|r| r.ln()).collect();
    let target = corr(&src_s, &src_b);
    let c = BootstrapConfig { expected_block_months: 3.0, n_paths: 3000, periods_per_rebalance: 12, n_rebalances: 30, seed: 8 };
    let (stock, bond) = resampled_logs(&s, &c);
    let fs: Vec<f64> = stock.into_iter().flatten().collect();
    let fb: Vec<f64> = bond.into_iter().flatten().collect();
    assert!(fs.len() >= 1_000_000);
    let got = corr(&fs, &fb);
    let n_eff = src_s.len() as f64;
    let tol = 3.0 * (1.0 - target * target) / n_eff.sqrt();
    assert!((got - target).abs() < tol, "cross-correlation {got} vs {target}");
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let sd = |x: &[f64]| {
        let m = mean(x);
        (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
    };
    let se_mean = sd(&src_s) / n_eff.sqrt() * 2.5;
    assert!((mean(&fs) - mean(&src_s)).abs() < 3.0 * se_mean);
    assert!((sd(&fs) / sd(&src_s) - 1.0).abs() < 3.0 * 2.0 / (2.0 * n_eff).sqrt());
}

#[test]
fn output_compounds_groups_of_months() {
    let s = ar_series(240, 5);
    let c = BootstrapConfig { expected_block_months: 4.0, n_paths: 7, periods_per_rebalance: 12, n_rebalances: 5, seed: 2 };
    let p = stationary_block_bootstrap(&s, &c).unwrap();
    assert_eq!((p.n_paths(), p.n_periods()), (7, 5));
    for j in 0..7 {
        let idx = path_month_indices(s.len(), &c, j).unwrap();
        for i in 0..5 {
            let g: f64 = idx[12 * i..12 * (i + 1)].iter().map(|k| s.stock_gross[*k]).product();
            let (rs, _) = p.get(j, i);
            assert!((rs - g).abs() <= 1e-12 * g);
        }
    }
}

#[test]
fn deterministic_and_thread_independent() {
    let s = ar_series(300, 6);
    let c = BootstrapConfig { expected_block_months: 3.0, n_paths: 500, periods_per_rebalance: 12, n_rebalances: 30, seed: 9 };
    let a = stationary_block_bootstrap(&s, &c).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let b = pool.install(|| stationary_block_bootstrap(&s, &c).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.source_tag.as_str(), "bootstrap");
}

#[test]
fn wraparound_reaches_series_start() {
    let b = BlockLength::new(50.0).unwrap();
    let mut r = rng::stream(1, 2, 3);
    let idx = resample_months(20, 10_000, &b, &mut r);
    assert!(idx.windows(2).any(|w| w[0] == 19 && w[1] == 0));
    assert!(idx.iter().all(|k| *k < 20));
}

#[test]
fn csv_file_roundtrip_and_missing_file() {
    let s = ar_series(30, 7);
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("m.csv");
    write_series(&s, std::fs::File::create(&f).unwrap()).unwrap();
    assert_eq!(load_series(&f).unwrap(), s);
    let err = load_series(&dir.path().join("absent.csv")).unwrap_err();
    assert!(matches!(err, decumulate::Error::Io(_)));
    assert!(read_series("date,x,y\n".as_bytes()).is_err());
}
