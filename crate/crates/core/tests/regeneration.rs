use ldlab_core::exec::Serial;
use ldlab_core::models::{garch_calibrated, simulate};
use ldlab_core::regen::{
    build_minorization, check_drift, default_small_set, simulate_split_chain, DriftParams, SmallSet, GRID_CELLS,
};
use ldlab_core::stats::{ks_two_sample, ljung_box};
use ldlab_core::{ALaw, ModelSpec, NoiseLaw, TailSpec, Variant};

fn ar1_gauss() -> ModelSpec {
    Variant::Ar1 { phi: 0.5, noise: NoiseLaw::Gaussian { sd: 1.0 } }.into()
}

fn sre() -> ModelSpec {
    Variant::SreAffine {
        a: ALaw::lognormal_with_root(1.5, 0.5),
        b: NoiseLaw::Uniform { lo: 0.0, hi: 1.0 },
        alpha: 1.5,
    }
    .into()
}

fn kesten_models() -> Vec<ModelSpec> {
    vec![
        sre(),
        Variant::SreMax {
            a: ALaw::lognormal_with_root(1.5, 0.5),
            b: NoiseLaw::Uniform { lo: 0.5, hi: 1.5 },
            alpha: 1.5,
        }
        .into(),
        Variant::Letac {
            a: ALaw::lognormal_with_root(1.5, 0.5),
            c: NoiseLaw::Uniform { lo: 0.0, hi: 1.0 },
            d: NoiseLaw::Uniform { lo: 0.0, hi: 1.0 },
            alpha: 1.5,
        }
        .into(),
    ]
}

#[test]
fn cycle_sums_are_uncorrelated() {
    let m = ar1_gauss();
    let mi = build_minorization(&m, SmallSet::symmetric(1.0), GRID_CELLS).unwrap();
    let cs = simulate_split_chain(&m, &mi, 400_000, 3, 0).unwrap();
    let sums: Vec<f64> = cs.cycles.iter().map(|c| c.sum).collect();
    assert!(sums.len() > 10_000);
    let (_, p) = ljung_box(&sums, 10).unwrap();
    assert!(p > 1e-3, "p = {p}");
}

#[test]
fn split_marginal_matches_plain_marginal() {
    for m in [ar1_gauss(), sre()] {
        let set = default_small_set(&m, 1).unwrap();
        let mi = build_minorization(&m, set, 1024).unwrap();
        let split = simulate_split_chain(&m, &mi, 50_000, 4, 0).unwrap();
        let plain = simulate(&m, 50_000, 5, 0).unwrap();
        // thin to reduce serial dependence
        let a: Vec<f64> = split.path.iter().step_by(10).copied().collect();
        let b: Vec<f64> = plain.values.iter().step_by(10).copied().collect();
        let (_, p) = ks_two_sample(&a, &b).unwrap();
        assert!(p > 1e-3, "{}: p = {p}", m.name());
    }
}

#[test]
fn regeneration_frequency_settles() {
    let m = ar1_gauss();
    let mi = build_minorization(&m, SmallSet::symmetric(1.0), GRID_CELLS).unwrap();
    let n = 1_000_000;
    let cs = simulate_split_chain(&m, &mi, n, 8, 0).unwrap();
    let mut starts: Vec<usize> = cs.cycles.iter().map(|c| c.start).collect();
    starts.push(cs.residual.start);
    let rate_at = |t: usize| starts.partition_point(|s| *s < t) as f64 / t as f64;
    let tail: Vec<f64> = (0..=10).map(|i| rate_at(n / 2 + i * n / 20)).collect();
    let (lo, hi) = tail.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    assert!((hi - lo) / hi < 0.02, "{tail:?}");
}

#[test]
fn garch_split_chain_reconstructs() {
    let g = garch_calibrated(1e-5, 0.12, 0.85, NoiseLaw::StudentT { dof: 6 }).unwrap();
    let set = default_small_set(&g, 1).unwrap();
    let mi = build_minorization(&g, set, 1024).unwrap();
    assert_eq!(mi.lag, 1);
    let cs = simulate_split_chain(&g, &mi, 100_000, 1, 0).unwrap();
    assert!(cs.verify());
    assert!(cs.regenerations > 100);
}

#[test]
fn kesten_drift_is_monotone_and_critical_at_alpha() {
    let params = DriftParams { probe_reps: 20_000, ..DriftParams::default() };
    for m in kesten_models() {
        let alpha = m.alpha().unwrap();
        let grid = [alpha / 2.0, 0.75 * alpha, alpha];
        let r = check_drift(&m, &grid, &params, &Serial).unwrap();
        assert!(r[0].report.pass, "{}: {:?}", m.name(), r[0]);
        for w in r.windows(2) {
            assert!(w[0].beta <= w[1].beta + 3.0 * (w[0].beta_se + w[1].beta_se), "{}", m.name());
        }
        assert!(r[2].ci_contains(1.0, 3.0), "{}: beta {} se {}", m.name(), r[2].beta, r[2].beta_se);
    }
}

#[test]
fn small_p_drift_approaches_one_from_below() {
    let m = sre();
    let params = DriftParams { probe_reps: 20_000, ..DriftParams::default() };
    let r = check_drift(&m, &[0.05, 0.2], &params, &Serial).unwrap();
    let a = ALaw::lognormal_with_root(1.5, 0.5);
    for (rep, p) in r.iter().zip([0.05, 0.2]) {
        let oracle = a.moment(p);
        assert!(oracle < 1.0);
        assert!(rep.beta < 1.0 && (rep.beta - oracle).abs() < 3.0 * rep.beta_se + 0.02, "{p}: {rep:?} vs {oracle}");
    }
}

#[test]
fn pareto_noise_set_has_positive_epsilon() {
    let noise = NoiseLaw::SmoothedPareto(TailSpec::pareto(1.5, 0.5).unwrap());
    let m: ModelSpec = Variant::Ar1 { phi: 0.5, noise }.into();
    let mi = build_minorization(&m, SmallSet::symmetric(0.5), GRID_CELLS).unwrap();
    assert!(mi.epsilon > 0.1 && mi.epsilon < 1.0);
}
