use kyle_infoacq::dist::{ks_statistic, DiscreteDist, GridDist, NormalLaw};
use kyle_infoacq::infoacq::{solve_equilibrium, ModelParams, Prior};
use kyle_infoacq::kylesim::{simulate_equilibrium, SimConfig};
use kyle_infoacq::sinkhorn::{solve, Init, SinkhornOptions};
use kyle_infoacq::transport::{cross_profit_integral, pricing_map, w2_squared, QuantileFn};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn discrete() -> impl Strategy<Value = DiscreteDist> {
    (2usize..7)
        .prop_flat_map(|n| (prop::collection::vec(0.1f64..1.5, n), prop::collection::vec(0.05f64..1.0, n), -3.0f64..1.0))
        .prop_map(|(gaps, weights, start)| {
            let atoms = gaps
                .iter()
                .scan(start, |x, g| {
                    let a = *x;
                    *x += g;
                    Some(a)
                })
                .collect();
            let total: f64 = weights.iter().sum();
            DiscreteDist::new(atoms, weights.iter().map(|w| w / total).collect()).unwrap()
        })
}

fn quantile() -> impl Strategy<Value = QuantileFn> {
    prop_oneof![
        discrete().prop_map(|d| QuantileFn::from_discrete(&d)),
        (-1.0f64..1.0, 0.1f64..2.0).prop_map(|(m, s)| QuantileFn::normal(NormalLaw::new(m, s).unwrap())),
        (-1.0f64..1.0, 0.3f64..1.5)
            .prop_map(|(m, b)| QuantileFn::from_grid(&GridDist::double_exponential(m, b, 801).unwrap())),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn polarization(f in quantile(), g in quantile()) {
        let w2 = w2_squared(&f, &g).unwrap();
        let rhs = f.second_moment().unwrap() + g.second_moment().unwrap() - 2.0 * cross_profit_integral(&f, &g).unwrap();
        prop_assert!((w2 - rhs).abs() < 1e-9, "{w2} vs {rhs}");
    }

    #[test]
    fn pricing_map_is_nondecreasing(d in discrete(), s in 0.2f64..3.0) {
        let map = pricing_map(&QuantileFn::from_discrete(&d), NormalLaw::new(0.0, s).unwrap());
        let mut last = f64::NEG_INFINITY;
        for i in 0..=2000 {
            let y = -10.0 * s + 0.01 * s * i as f64;
            let p = map.apply(y);
            prop_assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn multipliers_do_not_depend_on_the_start(d in discrete(), lambda in 0.3f64..5.0) {
        let p = ModelParams::new(lambda, 1.0, 1.0, Prior::Discrete(d)).unwrap();
        let spec = p.kernel_spec().unwrap();
        let rule = p.default_rule();
        let a = solve(&spec, &rule, &SinkhornOptions::default().with_init(Init::Uniform)).unwrap();
        let b = solve(&spec, &rule, &SinkhornOptions::default().with_init(Init::Prior)).unwrap();
        for (x, y) in a.mu.iter().zip(&b.mu) {
            prop_assert!((x - y).abs() < 1e-8, "{:?} vs {:?}", a.mu, b.mu);
        }
    }

    #[test]
    fn symmetric_priors_have_mirrored_multipliers(
        half in prop::collection::vec((0.2f64..2.0, 0.05f64..1.0), 1..4),
        lambda in 0.3f64..5.0,
    ) {
        let mut atoms: Vec<f64> = Vec::new();
        let mut x = 0.0;
        for (g, _) in &half {
            x += g;
            atoms.push(x);
        }
        let mut w: Vec<f64> = half.iter().map(|h| h.1).collect();
        let all: Vec<f64> = atoms.iter().rev().map(|a| -a).chain(atoms.iter().copied()).collect();
        let mut probs: Vec<f64> = w.iter().rev().copied().collect();
        probs.append(&mut w);
        let total: f64 = probs.iter().sum();
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        let p = ModelParams::new(lambda, 1.0, 1.0, Prior::Discrete(DiscreteDist::new(all, probs).unwrap())).unwrap();
        let mu = solve(&p.kernel_spec().unwrap(), &p.default_rule(), &SinkhornOptions::default()).unwrap().mu;
        let n = mu.len();
        for i in 0..n / 2 {
            prop_assert!((mu[i] - mu[n - 1 - i]).abs() < 1e-10, "{mu:?}");
        }
    }
}

#[test]
fn pushforward_matches_target_law() {
    let g = NormalLaw::new(0.0, 1.3).unwrap();
    let grid = GridDist::double_exponential(0.2, 0.8, 2001).unwrap();
    let f = QuantileFn::from_grid(&grid);
    let map = pricing_map(&f, g);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(g.mean, g.std).unwrap();
    let sample: Vec<f64> = (0..100_000).map(|_| map.apply(normal.sample(&mut rng))).collect();
    let ks = ks_statistic(&sample, |x| f.cdf(x));
    assert!(ks < 0.01, "KS {ks}");
}

#[test]
fn prices_are_martingales_and_the_bridge_closes() {
    let p = ModelParams::two_state(2.0, 1.0, 1.0, -2.0, 2.0, 0.7).unwrap();
    let eq = solve_equilibrium(&p, &p.default_rule(), &SinkhornOptions::default()).unwrap();
    let cfg = SimConfig::new(&p, 20_000, 4_000, 1e-3, 3).unwrap();
    let r = simulate_equilibrium(&cfg, &eq.kernel).unwrap();
    assert!(!r.price_increments.is_empty());
    for inc in &r.price_increments {
        assert!(inc.mean.abs() < 3.0 * inc.std_error + 1e-12, "{inc:?}");
    }
    let b = &r.bridge;
    assert!(b.deviation_fine < b.deviation_coarse, "{b:?}");
    let ratio = b.rate_ratio();
    assert!((0.7..1.4).contains(&ratio), "{b:?} ratio {ratio}");
}
