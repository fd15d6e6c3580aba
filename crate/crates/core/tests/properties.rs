//! Randomized invariants of control sets, averaging, Jacobians and lifts.

mod common;

use common::{catalog_problem, pc, reached};
use nalgebra::DVector;
use proptest::prelude::*;
use sampled_ocp::partition::{average_onto, l1_distance, Interpolation, Partition, SampledControlSignal};
use sampled_ocp::pmp::Verdict;
use sampled_ocp::problem::{catalog, fd_jacobian, ControlFactor, ControlSet};

fn arb_set() -> impl Strategy<Value = ControlSet> {
    prop_oneof![
        (-3.0..0.0f64, 0.0..3.0f64, -3.0..0.0f64, 0.0..3.0f64)
            .prop_map(|(a, b, c, d)| ControlSet::new_box(vec![a, c], vec![b, d]).unwrap()),
        (-2.0..2.0f64, -2.0..2.0f64, 0.1..3.0f64).prop_map(|(a, b, r)| ControlSet::new_ball(vec![a, b], r).unwrap()),
        (-2.0..0.0f64, 0.0..2.0f64, 0.1..2.0f64).prop_map(|(a, b, r)| ControlSet::new_product(vec![
            ControlFactor::Interval { lower: a, upper: b },
            ControlFactor::Ball {
                center: vec![0.5],
                radius: r
            },
        ])
        .unwrap()),
    ]
}

fn arb_partition(horizon: f64) -> impl Strategy<Value = Partition> {
    proptest::collection::btree_set(1u32..9999, 0..12).prop_map(move |cuts| {
        let mut t = vec![0.0];
        t.extend(cuts.into_iter().map(|c| horizon * c as f64 / 10000.0));
        t.push(horizon);
        Partition::new(t).unwrap()
    })
}

fn signal_in(set: &ControlSet, raw: &[(f64, f64)], linear: bool) -> SampledControlSignal {
    let grid: Vec<f64> = (0..raw.len()).map(|k| k as f64 / (raw.len() - 1) as f64).collect();
    let values = raw.iter().map(|(a, b)| set.project(&DVector::from_vec(vec![*a, *b]))).collect();
    let interp = if linear {
        Interpolation::PiecewiseLinear
    } else {
        Interpolation::PiecewiseConstant
    };
    SampledControlSignal::new(grid, values, interp).unwrap()
}

fn as_signal(u: &sampled_ocp::partition::PiecewiseConstantControl) -> SampledControlSignal {
    let mut values = u.values().to_vec();
    values.push(values.last().unwrap().clone());
    SampledControlSignal::new(u.partition().times().to_vec(), values, Interpolation::PiecewiseConstant).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn averaging_preserves_membership(
        set in arb_set(),
        raw in proptest::collection::vec((-6.0..6.0f64, -6.0..6.0f64), 2..40),
        linear in any::<bool>(),
        part in arb_partition(1.0),
    ) {
        let u = signal_in(&set, &raw, linear);
        let avg = average_onto(&u, &part).unwrap();
        for v in avg.values() {
            prop_assert!(set.distance(v) <= 1e-12, "distance {}", set.distance(v));
        }
    }

    #[test]
    fn averaging_commutes_with_coarsening(
        values in proptest::collection::vec(-5.0..5.0f64, 16),
        keep in proptest::collection::vec(any::<bool>(), 15),
    ) {
        let fine = Partition::uniform(16, 1.0).unwrap();
        let u = sampled_ocp::partition::PiecewiseConstantControl::new(
            fine.clone(),
            values.iter().map(|v| DVector::from_element(1, *v)).collect(),
        ).unwrap();
        let mut coarse_times = vec![0.0];
        coarse_times.extend(keep.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| fine.times()[i + 1]));
        coarse_times.push(1.0);
        let coarse = Partition::new(coarse_times).unwrap();
        let direct = average_onto(&as_signal(&u), &coarse).unwrap();
        let via = average_onto(&as_signal(&average_onto(&as_signal(&u), &fine).unwrap()), &coarse).unwrap();
        for (a, b) in direct.values().iter().zip(via.values()) {
            prop_assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn dyadic_averages_approach_lipschitz_signals(
        start in -3.0..3.0f64,
        steps in proptest::collection::vec(-3.0..3.0f64, 1..12),
    ) {
        let mut raw = vec![start];
        for d in &steps {
            raw.push(raw.last().unwrap() + d);
        }
        let grid: Vec<f64> = (0..raw.len()).map(|k| k as f64 / (raw.len() - 1) as f64).collect();
        let signal = |vals: &[f64]| SampledControlSignal::new(grid.clone(), vals.iter().map(|v| DVector::from_element(1, *v)).collect(), Interpolation::PiecewiseLinear).unwrap();
        let dist = |u: &SampledControlSignal, n: usize| l1_distance(u, &average_onto(u, &Partition::uniform(n, 1.0).unwrap()).unwrap(), 1.0);
        // on an interval of length h, a signal with Lipschitz constant L
        // stays within L h^2 / 4 of its average in L1
        let u = signal(&raw);
        let lipschitz = steps.iter().map(|d| d.abs()).fold(0.0, f64::max) * steps.len() as f64;
        for k in 0..8 {
            let n = 1usize << k;
            prop_assert!(dist(&u, n) <= lipschitz / (4.0 * n as f64) + 1e-12);
        }
        // monotone signals: the L1 distance does not grow along dyadic refinement
        let mut mono = vec![start];
        for d in &steps {
            mono.push(mono.last().unwrap() + d.abs());
        }
        let m = signal(&mono);
        let dists: Vec<f64> = (0..8).map(|k| dist(&m, 1 << k)).collect();
        for w in dists.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", dists);
        }
    }

    #[test]
    fn normal_cone_residual_matches_variational_inequality(
        set in arb_set(),
        seed in (-6.0..6.0f64, -6.0..6.0f64),
        g in (-2.0..2.0f64, -2.0..2.0f64),
    ) {
        let u = set.project(&DVector::from_vec(vec![seed.0, seed.1]));
        let g = DVector::from_vec(vec![g.0, g.1]);
        let residual = set.normal_cone_residual(&u, &g).unwrap();
        let (lo, hi) = set.bounding_box();
        let mut worst = f64::NEG_INFINITY;
        for i in 0..=120 {
            for j in 0..=120 {
                let v = DVector::from_vec(vec![
                    lo[0] + (hi[0] - lo[0]) * i as f64 / 120.0,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / 120.0,
                ]);
                let v = set.project(&v);
                worst = worst.max(g.dot(&(v - &u)));
            }
        }
        for k in 1..=1000 {
            let v = set.project(&(&u + &g * (k as f64 * 0.01)));
            worst = worst.max(g.dot(&(v - &u)));
        }
        if residual <= 1e-12 {
            prop_assert!(worst <= 1e-9, "residual {residual}, worst {worst}");
        }
        if residual > 1e-3 {
            prop_assert!(worst > 0.0, "residual {residual}, worst {worst}");
        }
    }

    #[test]
    fn jacobians_agree_with_central_differences(
        x in proptest::collection::vec(-1.5..1.5f64, 2),
        u in -2.0..2.0f64,
        t in 0.0..1.0f64,
    ) {
        for entry in catalog() {
            let prob = entry.build_default().unwrap();
            let n = prob.state_dim();
            let x = DVector::from_iterator(n, x.iter().copied().take(n));
            let u = DVector::from_element(prob.control_dim(), u);
            let analytic = prob.f_x(&x, &u, t);
            let err = |h: f64| (fd_jacobian(|y| prob.f(y, &u, t), &x, h) - &analytic).norm();
            let (e1, e2) = (err(1e-2), err(5e-3));
            prop_assert!(e1 <= 1e-9 || (3.0..=5.0).contains(&(e1 / e2)), "{}: {e1} {e2}", entry.name);
        }
    }

    #[test]
    fn costate_scaling_scales_residual_profiles(lambda in 0.1..10.0f64, a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let prob = catalog_problem("affine_quadratic");
        let e = reached(&prob, pc(&prob, &[a, b, a - b]), -1.0, DVector::from_vec(vec![b, a]));
        let s = e.with_scaled_costate(lambda);
        for (x, y) in e.ae_profile().iter().zip(s.ae_profile()) {
            prop_assert!((x * lambda - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
        for (x, y) in e.ahg_integrals().unwrap().iter().zip(s.ahg_integrals().unwrap()) {
            prop_assert!((x * lambda - &y).norm() <= 1e-12 * (1.0 + y.norm()));
        }
    }

    #[test]
    fn verdicts_are_monotone(r in 0.0..1.0f64, s in 0.0..1.0f64) {
        let (lo, hi) = if r <= s { (r, s) } else { (s, r) };
        prop_assert!(Verdict::of(lo) <= Verdict::of(hi));
    }
}
