//! Statistical and format properties of the synthetic market.

use decumulate::market::{simulate_path_range, simulate_paths, AssetJumpParams};
use decumulate::paths::SourceTag;
use decumulate::{MarketParams, PathSet};
use proptest::prelude::*;

fn log_moments(p: &AssetJumpParams, dt: f64) -> (f64, f64) {
    let mean_jump = p.u_up / p.eta1 - (1.0 - p.u_up) / p.eta2;
    let second_jump = 2.0 * p.u_up / (p.eta1 * p.eta1) + 2.0 * (1.0 - p.u_up) / (p.eta2 * p.eta2);
    let mean = p.log_drift().unwrap() * dt + p.lambda * dt * mean_jump;
    let var = p.sigma * p.sigma * dt + p.lambda * dt * second_jump;
    (mean, var)
}

fn column(paths: &PathSet, asset: usize) -> Vec<f64> {
    paths.returns().iter().skip(asset).step_by(2).copied().collect()
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn gross_returns_have_compensated_mean() {
    let m = MarketParams::crsp_calibrated();
    let paths = simulate_paths(&m, 100_000, 2, 1.0, 11).unwrap();
    for (asset, p) in [(0, m.stock), (1, m.bond)] {
        let (mean, se) = mean_se(&column(&paths, asset));
        let target = p.mu.exp();
        assert!((mean - target).abs() < 4.0 * se, "asset {asset}: {mean} vs {target} (se {se})");
    }
}

#[test]
fn log_return_moments_and_correlation() {
    let m = MarketParams::crsp_calibrated();
    let dt = 0.5;
    let paths = simulate_paths(&m, 200_000, 1, dt, 12).unwrap();
    let ls: Vec<f64> = column(&paths, 0).iter().map(|r| r.ln()).collect();
    let lb: Vec<f64> = column(&paths, 1).iter().map(|r| r.ln()).collect();
    let (ms, vs) = log_moments(&m.stock, dt);
    let (mb, vb) = log_moments(&m.bond, dt);
    let (es, ses) = mean_se(&ls);
    let (eb, seb) = mean_se(&lb);
    assert!((es - ms).abs() < 4.0 * ses, "stock log mean {es} vs {ms}");
    assert!((eb - mb).abs() < 4.0 * seb, "bond log mean {eb} vs {mb}");
    let n = ls.len() as f64;
    let cov = ls.iter().zip(&lb).map(|(a, b)| (a - es) * (b - eb)).sum::<f64>() / (n - 1.0);
    let var_s = ls.iter().map(|a| (a - es) * (a - es)).sum::<f64>() / (n - 1.0);
    let var_b = lb.iter().map(|b| (b - eb) * (b - eb)).sum::<f64>() / (n - 1.0);
    assert!((var_s / vs - 1.0).abs() < 0.03, "stock log variance {var_s} vs {vs}");
    assert!((var_b / vb - 1.0).abs() < 0.03, "bond log variance {var_b} vs {vb}");
    let corr = cov / (var_s * var_b).sqrt();
    let target = m.rho_sb * m.stock.sigma * m.bond.sigma * dt / (vs * vb).sqrt();
    let se = (1.0 - target * target) / n.sqrt();
    assert!((corr - target).abs() < 4.0 * se, "correlation {corr} vs {target}");
}

#[test]
fn pure_diffusion_is_lognormal() {
    let mut m = MarketParams::crsp_calibrated();
    m.stock.lambda = 0.0;
    m.bond.lambda = 0.0;
    let paths = simulate_paths(&m, 100_000, 1, 1.0, 13).unwrap();
    let ls: Vec<f64> = column(&paths, 0).iter().map(|r| r.ln()).collect();
    let (mean, se) = mean_se(&ls);
    let target = m.stock.mu - 0.5 * m.stock.sigma * m.stock.sigma;
    assert!((mean - target).abs() < 4.0 * se);
    let skew = ls.iter().map(|x| ((x - mean) / m.stock.sigma).powi(3)).sum::<f64>() / ls.len() as f64;
    assert!(skew.abs() < 0.05, "skew {skew}");
}

#[test]
fn seeded_runs_are_bit_identical_and_thread_independent() {
    let m = MarketParams::crsp_calibrated();
    let a = simulate_paths(&m, 5000, 30, 1.0, 42).unwrap();
    let b = simulate_paths(&m, 5000, 30, 1.0, 42).unwrap();
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c = pool.install(|| simulate_paths(&m, 5000, 30, 1.0, 42).unwrap());
    assert_eq!(a, c);
    let d = simulate_paths(&m, 5000, 30, 1.0, 43).unwrap();
    assert_ne!(a, d);
    let mut joined = simulate_path_range(&m, 0, 2000, 30, 1.0, 42).unwrap();
    joined.extend(&simulate_path_range(&m, 2000, 3000, 30, 1.0, 42).unwrap()).unwrap();
    assert_eq!(joined.returns(), a.returns());
}

#[test]
fn path_file_roundtrip_is_bit_exact() {
    let m = MarketParams::crsp_calibrated();
    let a = simulate_paths(&m, 777, 30, 1.0, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.dpth");
    a.save(&file).unwrap();
    let b = PathSet::load(&file, SourceTag::Synthetic).unwrap();
    assert!(a.returns().iter().zip(b.returns()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!((b.n_paths(), b.n_periods()), (777, 30));
    let bytes = std::fs::read(&file).unwrap();
    assert_eq!(&bytes[..4], b"DPTH");
    assert_eq!(bytes.len(), 24 + 777 * 30 * 2 * 8);
}

#[test]
fn invalid_parameters_are_rejected() {
    let mut m = MarketParams::crsp_calibrated();
    m.rho_sb = 1.5;
    assert!(simulate_paths(&m, 1, 1, 1.0, 0).is_err());
    let mut m = MarketParams::crsp_calibrated();
    m.stock.u_up = 1.2;
    assert!(simulate_paths(&m, 1, 1, 1.0, 0).is_err());
    let m = MarketParams::crsp_calibrated();
    assert!(simulate_paths(&m, 0, 1, 1.0, 0).is_err());
    assert!(simulate_paths(&m, 1, 1, 0.0, 0).is_err());
}

fn asset() -> impl Strategy<Value = AssetJumpParams> {
    (-0.2..0.3f64, 0.01..0.6f64, 0.0..3.0f64, 0.0..=1.0f64, 1.05..40.0f64, 0.1..40.0f64).prop_map(
        |(mu, sigma, lambda, u_up, eta1, eta2)| AssetJumpParams { mu, sigma, lambda, u_up, eta1, eta2 },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn returns_are_positive_and_finite(stock in asset(), bond in asset(), rho in -1.0..=1.0f64, seed in any::<u64>(), dt in 0.05..2.0f64) {
        let m = MarketParams { stock, bond, rho_sb: rho, borrow_spread: 0.0 };
        let p = simulate_paths(&m, 50, 4, dt, seed).unwrap();
        prop_assert!(p.returns().iter().all(|r| r.is_finite() && *r > 0.0));
    }

    #[test]
    fn compensator_closed_form(p in asset()) {
        let g = p.jump_compensator().unwrap();
        let direct = p.u_up * p.eta1 / (p.eta1 - 1.0) + (1.0 - p.u_up) * p.eta2 / (p.eta2 + 1.0) - 1.0;
        prop_assert!((g - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        prop_assert!(g > -1.0);
    }
}
