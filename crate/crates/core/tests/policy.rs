//! Admissibility of network controls, reference statistics and checkpoints.

use decumulate::market::simulate_paths;
use decumulate::objective::Policy;
use decumulate::policy::{
    load_checkpoint, read_checkpoint, reference_stats, save_checkpoint, write_checkpoint, Net, NetSpec, PolicyPair,
    StandardizationStats,
};
use decumulate::{Error, Kappa, MarketParams, ScenarioConfig};
use proptest::prelude::*;

fn stats(n: usize, mean: f64, sd: f64) -> StandardizationStats {
    StandardizationStats { mean: vec![mean; n], sd: vec![sd; n] }
}

fn pair(seed: u64, kappa: Kappa) -> PolicyPair {
    let sc = ScenarioConfig { kappa, ..ScenarioConfig::default() };
    let mut p = PolicyPair::cold(sc, stats(31, 900.0, 300.0), NetSpec::withdrawal(), NetSpec::allocation(), seed).unwrap();
    p.w_star = 57.25;
    p
}

fn scaled_net(spec: NetSpec, params: &[f64]) -> Net {
    Net::from_params(spec, params[..spec.n_params()].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn controls_are_always_admissible(
        params in prop::collection::vec(-40.0..40.0f64, 200),
        mean in -1e3..1e4f64,
        sd in 1e-6..1e4f64,
        w in -1e5..1e6f64,
        i in 0usize..31,
    ) {
        let sc = ScenarioConfig::default();
        let q_net = scaled_net(NetSpec::withdrawal(), &params);
        let p_net = scaled_net(NetSpec::allocation(), &params[1..]);
        let pol = PolicyPair::new(q_net, p_net, stats(31, mean, sd), 0.0, sc).unwrap();
        let q = pol.withdrawal(w, i);
        let (lo, hi) = sc.withdrawal_bounds(w);
        prop_assert!(q >= lo && q <= hi, "q {} outside [{}, {}] at w {}", q, lo, hi, w);
        if w <= sc.q_min {
            prop_assert_eq!(q, sc.q_min);
        }
        let p = pol.allocation(w, i);
        prop_assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn duplicate_inputs_give_duplicate_outputs() {
    let p = pair(3, Kappa::Finite(1.0));
    for (w, i) in [(1000.0, 0), (412.5, 17), (-30.0, 30)] {
        assert_eq!(p.withdrawal(w, i).to_bits(), p.withdrawal(w, i).to_bits());
        assert_eq!(p.allocation(w, i).to_bits(), p.allocation(w, i).to_bits());
    }
}

#[test]
fn reference_stats_match_first_period_moments() {
    let m = MarketParams::crsp_calibrated();
    let sc = ScenarioConfig::default();
    let paths = simulate_paths(&m, 100_000, 30, 1.0, 77).unwrap();
    let st = reference_stats(&paths, &sc).unwrap();
    assert_eq!(st.mean[0], 1000.0);
    assert!(st.sd[0] > 0.0 && st.sd[0] < 1e-4);
    let (es, eb) = (m.stock.mu.exp(), m.bond.mu.exp());
    let target = 960.0 * 0.5 * (es + eb);
    let se = st.sd[1] / (100_000f64).sqrt();
    assert!((st.mean[1] - target).abs() < 4.0 * se, "{} vs {target}", st.mean[1]);
    assert!(st.mean.iter().chain(&st.sd).all(|v| v.is_finite()));
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let p = pair(9, Kappa::Finite(0.5));
    let mut buf = Vec::new();
    write_checkpoint(&p, 1234, &mut buf).unwrap();
    let (q, meta) = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(q, p);
    assert_eq!(meta.rng_seed, 1234);
    assert_eq!(meta.kappa, Kappa::Finite(0.5));
    for k in 0..100 {
        let w = -500.0 + 37.3 * k as f64;
        let i = k % 31;
        assert_eq!(p.withdrawal(w, i).to_bits(), q.withdrawal(w, i).to_bits());
        assert_eq!(p.allocation(w, i).to_bits(), q.allocation(w, i).to_bits());
    }
}

#[test]
fn infinite_kappa_checkpoint_roundtrips() {
    let p = pair(4, Kappa::Infinite);
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("inf.json");
    save_checkpoint(&p, 0, &f).unwrap();
    assert!(std::fs::read_to_string(&f).unwrap().contains("\"inf\""));
    assert_eq!(load_checkpoint(&f).unwrap().0, p);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let p = pair(5, Kappa::Finite(1.0));
    let mut buf = Vec::new();
    write_checkpoint(&p, 1, &mut buf).unwrap();
    let truncated = &buf[..buf.len() / 2];
    assert!(matches!(read_checkpoint(truncated), Err(Error::Corrupt(_))));

    let text = String::from_utf8(buf.clone()).unwrap();
    let tampered = text.replacen("57.25", "57.5", 1);
    assert_ne!(tampered, text);
    assert!(matches!(read_checkpoint(tampered.as_bytes()), Err(Error::Corrupt(_))));

    let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    v["format_version"] = 99.into();
    let future = serde_json::to_vec(&v).unwrap();
    assert!(matches!(read_checkpoint(future.as_slice()), Err(Error::Version { found: 99, .. })));

    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint(&dir.path().join("missing.json")), Err(Error::Io(_))));
}
