use pfrc_core::experiment::ess_across_runs;
use pfrc_core::filters::{accept_log, run_alive, run_bpf, run_pfrc};
use pfrc_core::models::{hmm_model, normal_log_density, DiscreteHmm, LgssModel, LgssParams};
use pfrc_core::oracles::kalman_loglik;
use pfrc_core::ssm::{simulate, RandomStream};
use pfrc_core::thresholds::{load_schedule, save_schedule, Threshold, ThresholdSchedule};
use proptest::prelude::*;

/// Spacing between adjacent doubles at magnitude `x`.
fn ulp(x: f64) -> f64 {
    let x = x.abs();
    f64::from_bits(x.to_bits() + 1) - x
}

fn positive_real() -> impl Strategy<Value = f64> {
    (-300.0f64..300.0).prop_map(|e| 10f64.powf(e))
}

fn threshold() -> impl Strategy<Value = Threshold> {
    prop_oneof![
        positive_real().prop_map(Threshold::Value),
        Just(Threshold::AcceptAll),
    ]
}

fn schedule() -> impl Strategy<Value = ThresholdSchedule> {
    prop_oneof![
        positive_real().prop_map(ThresholdSchedule::Constant),
        prop::collection::vec(threshold(), 0..20).prop_map(ThresholdSchedule::PerStep),
        (1e-6f64..0.999_999).prop_map(ThresholdSchedule::DynamicQuantile),
        (0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            ThresholdSchedule::DynamicWeightedMma([lo, hi - lo, 1.0 - hi])
        }),
    ]
}

proptest! {
    #[test]
    fn lift_times_acceptance_recovers_weight(w in positive_real(), c in positive_real()) {
        let (lw, lc) = (w.ln(), c.ln());
        let lifted = lw.max(lc);
        let log_accept = (lw - lc).min(0.0);
        let err = (lifted + log_accept - lw).abs();
        prop_assert!(err <= ulp(lw.abs().max(lc.abs())), "w={w:e} c={c:e} err={err:e}");
    }

    #[test]
    fn accepted_weight_never_below_threshold(w in positive_real(), c in positive_real(), seed in any::<u64>()) {
        let mut rng = RandomStream::new(seed, 0);
        if let Some(lifted) = accept_log(w.ln(), c.ln(), &mut rng) {
            prop_assert!(lifted >= c.ln());
            prop_assert_eq!(lifted, w.ln().max(c.ln()));
        } else {
            prop_assert!(w < c);
        }
    }

    #[test]
    fn schedule_round_trip(s in schedule()) {
        let text = save_schedule(&s);
        let loaded = load_schedule(&text).unwrap();
        prop_assert_eq!(loaded, s);
    }

    #[test]
    fn ess_is_at_most_m(zs in prop::collection::vec(0.0f64..10.0, 1..50)) {
        prop_assume!(zs.iter().any(|z| *z > 0.0));
        let ess = ess_across_runs(&zs).unwrap();
        prop_assert!(ess <= zs.len() as f64 * (1.0 + 1e-12));
        prop_assert!(ess > 0.0);
    }

    #[test]
    fn ess_equals_m_for_equal_estimates(z in 1e-10f64..1e10, m in 1usize..100) {
        let ess = ess_across_runs(&vec![z; m]).unwrap();
        prop_assert!((ess - m as f64).abs() < 1e-9 * m as f64);
    }
}

fn hmm_with_zeros(rng: &mut RandomStream) -> DiscreteHmm {
    let mut hmm = DiscreteHmm::random(3, 3, rng);
    for row in &mut hmm.emission {
        let zeroed = (rng.uniform() * 3.0) as usize;
        row[zeroed] = 0.0;
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    hmm
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pfrc_floor_and_counts_hold_every_step(seed in any::<u64>(), c in 0.01f64..0.9, n in 1usize..20) {
        let mut rng = RandomStream::new(seed, u64::MAX);
        let hmm = DiscreteHmm::random(3, 2, &mut rng);
        let model = hmm_model(hmm, 5).unwrap();
        let ys = simulate(&model, &mut rng).unwrap().observations;
        let schedule = ThresholdSchedule::Constant(c);
        for t in 0..ys.len() {
            let prefix = &ys[..=t];
            let res = run_pfrc(&model, prefix, n, &schedule, &mut RandomStream::new(seed, 0), 1_000_000).unwrap();
            for p in res.final_particles.particles() {
                prop_assert!(p.log_weight >= c.ln());
            }
            let props = res.propagations.unwrap();
            prop_assert!(props.iter().all(|&p| p >= n as u64 + 1));
            prop_assert_eq!(res.total_propagations, props.iter().sum::<u64>());
        }
    }

    #[test]
    fn tiny_threshold_reproduces_alive_filter(seed in any::<u64>(), n in 1usize..16) {
        let mut rng = RandomStream::new(seed, u64::MAX);
        let hmm = hmm_with_zeros(&mut rng);
        let min_positive = hmm.emission.iter().flatten().copied().filter(|p| *p > 0.0).fold(f64::INFINITY, f64::min);
        let model = hmm_model(hmm, 4).unwrap();
        let ys = simulate(&model, &mut rng).unwrap().observations;
        let schedule = ThresholdSchedule::Constant(min_positive * 0.5);
        let rc = run_pfrc(&model, &ys, n, &schedule, &mut RandomStream::new(seed, 1), 1_000_000).unwrap();
        let alive = run_alive(&model, &ys, n, &mut RandomStream::new(seed, 1), 1_000_000).unwrap();
        prop_assert_eq!(rc.log_z.to_bits(), alive.log_z.to_bits());
        prop_assert_eq!(&rc.log_weight_sums, &alive.log_weight_sums);
        prop_assert_eq!(&rc.propagations, &alive.propagations);
        prop_assert_eq!(&rc.final_particles, &alive.final_particles);
        prop_assert_eq!(rc.total_propagations, alive.total_propagations);
    }

    #[test]
    fn sweeps_are_deterministic(seed in any::<u64>()) {
        let model = LgssModel::new(LgssParams::default(), 6).unwrap();
        let ys = simulate(&model, &mut RandomStream::new(seed, u64::MAX)).unwrap().observations;
        let a = run_bpf(&model, &ys, 16, &mut RandomStream::new(seed, 0)).unwrap();
        let b = run_bpf(&model, &ys, 16, &mut RandomStream::new(seed, 0)).unwrap();
        prop_assert_eq!(a, b);
        let s = ThresholdSchedule::Constant(1e-3);
        let a = run_pfrc(&model, &ys, 16, &s, &mut RandomStream::new(seed, 0), 100_000).unwrap();
        let b = run_pfrc(&model, &ys, 16, &s, &mut RandomStream::new(seed, 0), 100_000).unwrap();
        prop_assert_eq!(a, b);
    }
}

/// Trapezoid rule on a uniform grid; spectrally accurate for Gaussian
/// integrands that decay at both ends.
fn trapezoid(lo: f64, hi: f64, points: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (hi - lo) / (points - 1) as f64;
    let inner: f64 = (1..points - 1).map(|i| f(lo + i as f64 * h)).sum();
    h * (inner + 0.5 * (f(lo) + f(hi)))
}

#[test]
fn kalman_two_steps_matches_quadrature() {
    let params = LgssParams::clean();
    let ys = [0.4, -0.9];
    // x_1 ~ N(a·m0, a²·v0 + q) marginally.
    let m1 = params.a * params.m0;
    let v1 = params.a * params.a * params.v0 + params.q;
    let g = |y: f64, x: f64| normal_log_density(y, x, params.r).exp();
    let width = 12.0;
    let inner = |x1: f64| {
        let sd = params.q.sqrt();
        trapezoid(params.a * x1 - width * sd, params.a * x1 + width * sd, 801, |x2| {
            normal_log_density(x2, params.a * x1, params.q).exp() * g(ys[1], x2)
        })
    };
    let sd1 = v1.sqrt();
    let joint = trapezoid(m1 - width * sd1, m1 + width * sd1, 801, |x1| {
        normal_log_density(x1, m1, v1).exp() * g(ys[0], x1) * inner(x1)
    });
    let exact = kalman_loglik(&params, &ys).unwrap();
    assert!((joint.ln() - exact).abs() < 1e-8, "{} vs {exact}", joint.ln());
}
