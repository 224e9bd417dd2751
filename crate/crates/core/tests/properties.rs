use std::collections::BTreeMap;

use maharam_core::cocycle::{gibbs_cocycle, gibbs_general, rn_cocycle, CocycleEstimate};
use maharam_core::construction::{build_schedule, PhiMap, SwapSchedule};
use maharam_core::family::{eta_from, EtaWeights};
use maharam_core::maharam::{maharam_preservation_check, ratio_hist, ProductSystem};
use maharam_core::rng::sub_seed;
use maharam_core::*;
use proptest::prelude::*;

fn z(n: i64) -> GroupElement {
    GroupElement::Z(n)
}

fn models() -> Vec<GroupModel> {
    vec![GroupModel::z(), GroupModel::z2(), GroupModel::lamplighter(), GroupModel::f2()]
}

/// Finitely perturbed family on Z with support inside ball(4).
fn oracle_family() -> impl Strategy<Value = FinitelyPerturbedFamily> {
    prop::collection::btree_map(-4i64..=4, 0.15f64..0.85, 1..6).prop_map(|m| {
        let values: BTreeMap<_, _> = m.into_iter().map(|(k, v)| (z(k), v)).collect();
        FinitelyPerturbedFamily::new(GroupModel::z(), 0.5, 0.1, values).unwrap()
    })
}

fn flips() -> impl Strategy<Value = Vec<(i64, u8)>> {
    prop::collection::vec((-8i64..=8, 0u8..2), 0..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_laws(m in 0usize..4, i in 0u64..2000, j in 0u64..2000, k in 0u64..2000) {
        let model = &models()[m];
        let (a, b, c) = (model.element_at(i).unwrap(), model.element_at(j).unwrap(), model.element_at(k).unwrap());
        let ab_c = model.mul(&model.mul(&a, &b).unwrap(), &c).unwrap();
        let a_bc = model.mul(&a, &model.mul(&b, &c).unwrap()).unwrap();
        prop_assert_eq!(ab_c, a_bc);
        let e = model.identity();
        prop_assert_eq!(model.mul(&a, &e).unwrap(), a.clone());
        prop_assert_eq!(model.mul(&e, &a).unwrap(), a.clone());
        let ai = model.inv(&a).unwrap();
        prop_assert!(model.mul(&a, &ai).unwrap().is_identity());
        prop_assert_eq!(model.inv(&ai).unwrap(), a.clone());
        prop_assert_eq!(model.index_of(&a).unwrap(), i);
        prop_assert_eq!(ai.word_length(), a.word_length());
    }

    #[test]
    fn normal_forms_round_trip(m in 0usize..4, i in 0u64..5000) {
        let model = &models()[m];
        let a = model.element_at(i).unwrap();
        prop_assert_eq!(model.parse_element(&a.normal_form()).unwrap(), a);
    }

    #[test]
    fn eta_inequalities(mu in 0.05f64..0.95, lam in 0.05f64..0.95) {
        let e = eta_from(mu, lam);
        for (p, q) in [(mu, lam), (1.0 - mu, 1.0 - lam)] {
            let t = p / q - 1.0;
            let l = (1.0 + t).ln();
            prop_assert!(t / (1.0 + t) <= l + 1e-15 && l <= t + 1e-15);
        }
        let spread = e.eta0 - e.eta1;
        prop_assert!(spread >= (1.0 / mu + 1.0 / (1.0 - lam)) * (mu - lam) - 1e-12);
        prop_assert_eq!(spread > 0.0, mu > lam);
        prop_assert_eq!(spread < 0.0, mu < lam);
    }

    #[test]
    fn relabeling_swaps_classes(n in -3000i64..3000) {
        let f = MarginalFamily::z_demo(0.1, 0.5).unwrap();
        let r = f.relabeled();
        let want = match f.classify(&z(n)) {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
            Sign::Neutral => Sign::Neutral,
        };
        prop_assert_eq!(r.classify(&z(n)), want);
    }

    #[test]
    fn cocycle_identity_on_oracles(o in oracle_family(), g in -6i64..=6, h in -6i64..=6, seed in any::<u64>()) {
        let x = sample(o.family(), seed);
        let gh = z(g + h);
        let lhs = exact_rn(&o, &gh, &x).unwrap();
        let rhs = exact_rn(&o, &z(h), &x).unwrap() + exact_rn(&o, &z(g), &x.act(&z(h)).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
        let est = rn_cocycle(o.family(), &gh, &x, 20).unwrap();
        prop_assert!((est.value - lhs).abs() < 1e-12);
        prop_assert_eq!((est.tail_mean_bound, est.tail_std_bound), (0.0, 0.0));
        prop_assert_eq!(exact_rn(&o, &z(0), &x).unwrap(), 0.0);
    }

    #[test]
    fn gibbs_chain_rule_and_antisymmetry(o in oracle_family(), seed in any::<u64>(), a in flips(), b in flips()) {
        let f = o.family();
        let x = sample(f, seed);
        let to = |v: &[(i64, u8)]| v.iter().map(|&(k, s)| (z(k), s)).collect::<Vec<_>>();
        let x1 = x.with_values(to(&a));
        let x2 = x1.with_values(to(&b));
        let c01 = gibbs_cocycle(f, &x, &x1).unwrap();
        let c12 = gibbs_cocycle(f, &x1, &x2).unwrap();
        let c02 = gibbs_cocycle(f, &x, &x2).unwrap();
        prop_assert!((c02 - c01 - c12).abs() < 1e-12);
        prop_assert!((gibbs_cocycle(f, &x1, &x).unwrap() + c01).abs() < 1e-15);
        prop_assert_eq!(gibbs_cocycle(f, &x, &x).unwrap(), 0.0);
        let zero = |_: &GroupElement| EtaWeights { eta0: 0.0, eta1: 0.0 };
        prop_assert_eq!(gibbs_general(zero, &x, &x2).unwrap(), 0.0);
    }

    #[test]
    fn shift_composes(g in -50i64..50, h in -50i64..50, seed in any::<u64>()) {
        let f = MarginalFamily::z_demo(0.1, 0.5).unwrap();
        let x = sample(&f, seed);
        let lhs = x.act(&z(h)).unwrap().act(&z(g)).unwrap();
        let rhs = x.act(&z(g + h)).unwrap();
        for k in -3..=3 {
            prop_assert_eq!(lhs.value(&z(k)), rhs.value(&z(k)));
            prop_assert_eq!(rhs.value(&z(k)), x.value(&z(k - g - h)));
        }
    }

    #[test]
    fn cylinder_measure_is_multiplicative(a in prop::collection::btree_map(-10i64..0, 0u8..2, 0..5),
                                          b in prop::collection::btree_map(0i64..10, 0u8..2, 0..5)) {
        let f = MarginalFamily::z_demo(0.1, 0.5).unwrap();
        let ca = CylinderSet::new(a.iter().map(|(&k, &s)| (z(k), s))).unwrap();
        let cb = CylinderSet::new(b.iter().map(|(&k, &s)| (z(k), s))).unwrap();
        let cab = CylinderSet::new(a.iter().chain(b.iter()).map(|(&k, &s)| (z(k), s))).unwrap();
        let lhs = cylinder_measure(&f, &cab);
        prop_assert!((lhs - cylinder_measure(&f, &ca) * cylinder_measure(&f, &cb)).abs() < 1e-15);
    }

    #[test]
    fn preservation_on_oracles(o in oracle_family(), g in -4i64..=4, pattern in prop::collection::btree_map(-3i64..=3, 0u8..2, 0..4),
                               lo in -1.0f64..1.0, len in 0.0f64..2.0) {
        let a = CylinderSet::new(pattern.iter().map(|(&k, &s)| (z(k), s))).unwrap();
        let err = maharam_preservation_check(&o, &z(g), &a, (lo, lo + len)).unwrap();
        prop_assert!(err < 1e-12, "{}", err);
    }

    #[test]
    fn product_cocycle_ignores_y(n in -20i64..20, seed in any::<u64>()) {
        let f = MarginalFamily::z_demo(0.1, 0.5).unwrap();
        let sys = ProductSystem::new(&f, maharam_core::maharam::YModel::Bernoulli { zeta0: 0.3 }).unwrap();
        let (x, y) = sys.sample_point(seed, 0);
        prop_assert!(y.is_some());
        let r = sys.rn(&z(n), &x, y.as_ref(), 200).unwrap();
        let direct = rn_cocycle(&f, &z(n), &x, 200).unwrap();
        prop_assert_eq!(r.value, direct.value);
    }

    #[test]
    fn ratio_coverage_monotone_in_eps(values in prop::collection::vec(-2.0f64..2.0, 0..30), eps in 0.01f64..0.5, more in 0.0f64..0.5) {
        let events: Vec<CocycleEstimate> = values.iter().map(|&v| CocycleEstimate::exact(v, 0)).collect();
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        let a = ratio_hist(&events, &grid, eps);
        let b = ratio_hist(&events, &grid, eps + more);
        prop_assert!(b.coverage >= a.coverage);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            prop_assert!(!ra.covered || rb.covered);
        }
    }

    #[test]
    fn phi_rn_equals_gibbs_on_image(o in oracle_family(), seed in any::<u64>(), t in 0.0f64..0.1) {
        let f = o.family();
        let pairs: Vec<(GroupElement, GroupElement)> = (-4i64..=4)
            .filter(|k| (f.mu0(&z(*k)) - 0.5).abs() > 0.0 && f.eta(&z(*k)).spread().abs() < 0.5)
            .map(|k| (z(100 + k), z(k)))
            .collect();
        prop_assume!(!pairs.is_empty());
        let s = SwapSchedule::from_pairs(f, &[], 1.0, &pairs).unwrap();
        let phi = PhiMap::with_horizon(&s, t, Sign::Plus, pairs.len()).unwrap();
        let x = sample(f, seed);
        if let Ok(rn) = phi.rn(&x) {
            let y = phi.apply(&x).unwrap();
            prop_assert!((rn - gibbs_cocycle(f, &x, &y).unwrap()).abs() < 1e-12);
            prop_assert!(rn > t);
            prop_assert!(rn < t + 1.0);
            prop_assert_eq!(phi.preimage(&y).map(|p| p.restrict(&phi.support())), Some(x.restrict(&phi.support())));
            // swapping the same pairs again restores x
            let back = y.with_values(phi.support().iter().map(|g| (g.clone(), x.value(g))));
            prop_assert_eq!(back.restrict(&phi.support()), x.restrict(&phi.support()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn schedules_respect_invariants(eps in 0.05f64..1.0, k in prop::collection::vec(-30i64..30, 0..5), budget in 50usize..400) {
        let f = MarginalFamily::z_demo(0.1, 0.5).unwrap();
        let window: Vec<GroupElement> = k.iter().map(|&n| z(n)).collect();
        let s = build_schedule(&f, &window, eps, budget).unwrap();
        prop_assert_eq!(s.active_count(), budget);
        let mut seen = std::collections::BTreeSet::new();
        let delta = f.delta();
        for p in s.pairs() {
            prop_assert!(seen.insert(p.pin.clone()) && seen.insert(p.site.clone()));
            prop_assert!(!window.contains(&p.pin) && !window.contains(&p.site));
            prop_assert_eq!(f.mu0(&p.pin), f.lambda0());
            prop_assert!(p.d.abs() < eps / 2.0);
            let (m, v) = p.moments(f.lambda0());
            prop_assert!(v + m * m >= delta * p.d * p.d);
        }
        for &m in s.excluded() {
            prop_assert!(s.pair(m).is_err());
        }
        let mut prev = s.walk_stats(0).unwrap();
        for n in 1..=budget {
            let w = s.walk_stats(n).unwrap();
            prop_assert!(w.b_n >= prev.b_n);
            // every active site of the demo family lies in G⁺
            prop_assert!(w.a_n > prev.a_n);
            prev = w;
        }
    }

    #[test]
    fn partial_sums_monotone_in_radius(g in 1i64..50, r in 1u32..3000, extra in 1u32..3000) {
        let f = MarginalFamily::z_demo(0.1, 0.5).unwrap();
        prop_assert!(f.kakutani_partial(&z(g), r + extra).unwrap() >= f.kakutani_partial(&z(g), r).unwrap());
        prop_assert!(f.divergence_partial(r + extra, Side::All).unwrap() >= f.divergence_partial(r, Side::All).unwrap());
        prop_assert!(f.divergence_partial(r + extra, Side::Plus).unwrap() >= f.divergence_partial(r, Side::Plus).unwrap());
    }

    #[test]
    fn tail_bounds_shrink_with_radius(g in 1i64..30, seed in any::<u64>(), r in 200u32..2000) {
        let f = MarginalFamily::z_demo(0.1, 0.5).unwrap();
        let x = sample(&f, sub_seed(seed, 0));
        let a = rn_cocycle(&f, &z(g), &x, r).unwrap();
        let b = rn_cocycle(&f, &z(g), &x, 2 * r).unwrap();
        prop_assert!(b.tail_mean_bound <= a.tail_mean_bound);
        prop_assert!(b.tail_std_bound <= a.tail_std_bound);
    }
}

#[test]
fn eta_sup_norm_small_on_far_spheres() {
    let f = MarginalFamily::z_demo(0.1, 0.5).unwrap();
    for r in [500i64, 1000, 5000, 100_000] {
        let m = [z(r), z(-r)].iter().map(|g| f.eta(g).sup_norm()).fold(0.0, f64::max);
        assert!(m < 0.05, "R = {r}: {m}");
    }
}

#[test]
fn eta_lower_bound_on_demo_families() {
    for f in [
        MarginalFamily::z_demo(0.1, 0.5).unwrap(),
        MarginalFamily::z2_demo(0.1, 0.5).unwrap(),
        MarginalFamily::f2_radial(2.0, 0.1, 0.5).unwrap(),
        MarginalFamily::lamplighter_folner(0.1, 0.5).unwrap(),
    ] {
        for g in f.model().enumerate(2000).unwrap() {
            let mu = f.mu0(&g);
            assert!((0.1..=0.9).contains(&mu));
            let e = f.eta(&g);
            let lam = f.lambda0();
            assert!(e.eta0 - e.eta1 >= (1.0 / mu + 1.0 / (1.0 - lam)) * (mu - lam) - 1e-12);
        }
    }
}

#[test]
fn pinned_partial_sums_stay_below_declared_bound() {
    let f = MarginalFamily::z_demo(0.1, 0.5).unwrap();
    let bound = f.pinned_deviation_bound();
    let mut total = 0.0;
    for g in f.model().enumerate(200_001).unwrap() {
        if f.is_pinned(&g) {
            assert_eq!(f.mu0(&g), f.lambda0());
            total += (f.unpinned_mu0(&g) - f.lambda0()).powi(2);
        }
    }
    assert!(total <= bound, "{total} > {bound}");
}

#[test]
fn enumeration_is_a_prefix_ordered_by_length() {
    for model in models() {
        let big = model.enumerate(3000).unwrap();
        for n in [1, 10, 100, 1000] {
            assert_eq!(model.enumerate(n).unwrap()[..], big[..n]);
        }
        assert!(big.windows(2).all(|w| w[0].word_length() <= w[1].word_length() && w[0] != w[1]));
        let r = big.last().unwrap().word_length() as u32;
        let ball = model.ball(r - 1).unwrap();
        assert_eq!(ball[..], big[..ball.len()]);
    }
    let five: Vec<String> = GroupModel::z().enumerate(5).unwrap().iter().map(|g| g.normal_form()).collect();
    assert_eq!(five, ["0", "-1", "1", "-2", "2"]);
}
