use proptest::prelude::*;

use s2dm::checkpoint::Checkpoint;
use s2dm::config::RunConfig;
use s2dm::difftrain::{TauConvention, TimePolicy, TrainConfig};
use s2dm::evalkit::{batch_from_csv, batch_to_csv, random_directions, sliced_wasserstein_with, DatasetKind};
use s2dm::model::ModelSpec;
use s2dm::par::ExecMode;
use s2dm::samplers::{interpolate, slerp, InterpMode};
use s2dm::schedule::ScheduleParams;
use s2dm::SampleBatch;

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn schedule_params() -> impl Strategy<Value = ScheduleParams> {
    (2usize..=64, 1e-5f64..0.05, 0.05f64..0.5).prop_map(|(steps, beta_start, beta_end)| ScheduleParams {
        steps,
        beta_start,
        beta_end,
    })
}

fn batch(n: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = SampleBatch> {
    n.prop_flat_map(move |n| {
        prop::collection::vec(-1e3f64..1e3, n * dim).prop_map(move |v| SampleBatch::new(n, dim, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn skip_products_compose(p in schedule_params(), a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let s = p.build().unwrap();
        let t_max = p.steps;
        let t = 1 + (a * (t_max - 1) as f64) as usize;
        let k = 1 + (b * (t_max - t) as f64) as usize;
        prop_assume!(t + k <= t_max);
        let m = 1 + (c * (t_max - t - k) as f64) as usize;
        prop_assume!(t + k + m - 1 <= t_max);
        let lhs = s.skip_product(t, k).unwrap() * s.skip_product(t + k, m).unwrap();
        prop_assert!(rel(lhs, s.skip_product(t, k + m).unwrap()) < 1e-12);
        prop_assert!(rel(s.skip_product(1, t).unwrap(), s.alpha_bar(t).unwrap()) < 1e-12);
    }

    #[test]
    fn alpha_bar_strictly_decreasing(p in schedule_params()) {
        let s = p.build().unwrap();
        prop_assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        prop_assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
    }

    #[test]
    fn slerp_endpoints_and_norm(
        z1 in prop::collection::vec(-3.0f64..3.0, 8),
        z2 in prop::collection::vec(-3.0f64..3.0, 8),
        alpha in 0.0f64..=1.0,
    ) {
        let n1 = z1.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n2 = z2.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(n1 > 1e-3 && n2 > 1e-3);
        prop_assert_eq!(slerp(&z1, &z2, 0.0).unwrap(), z1.clone());
        prop_assert_eq!(slerp(&z1, &z2, 1.0).unwrap(), z2.clone());
        let z2s: Vec<f64> = z2.iter().map(|x| x * n1 / n2).collect();
        let cos = z1.iter().zip(&z2s).map(|(a, b)| a * b).sum::<f64>() / (n1 * n1);
        prop_assume!(cos > -0.999);
        let m = slerp(&z1, &z2s, alpha).unwrap();
        let nm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(rel(nm, n1) < 1e-9);
        let lin = interpolate(&z1, &z2, alpha, InterpMode::Linear).unwrap();
        for ((l, a), b) in lin.iter().zip(&z1).zip(&z2) {
            prop_assert!((l - ((1.0 - alpha) * a + alpha * b)).abs() < 1e-12);
        }
    }

    #[test]
    fn swd_is_a_pseudometric(
        a in batch(5..6, 2), b in batch(5..6, 2), c in batch(5..6, 2), seed in any::<u64>(),
    ) {
        let dirs = random_directions(2, 16, seed);
        let d = |x: &SampleBatch, y: &SampleBatch| sliced_wasserstein_with(x, y, &dirs, ExecMode::Serial).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }

    #[test]
    fn csv_round_trip_is_bit_exact(b in batch(0..20, 3)) {
        let back = batch_from_csv(&batch_to_csv(&b).unwrap()).unwrap();
        prop_assert_eq!(back.n(), b.n());
        prop_assert!(back.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), tau in 0.0f64..=1.0, hidden in 1usize..12, affine in any::<bool>()) {
        let model_spec = if affine {
            ModelSpec::Affine
        } else {
            ModelSpec::Mlp { hidden: vec![hidden, hidden + 1], time_embed_dim: 4 }
        };
        let cfg = TrainConfig {
            schedule: ScheduleParams { steps: 30, beta_start: 1e-3, beta_end: 0.2 },
            model: model_spec.clone(),
            tau,
            skip: 3,
            seed,
            ..TrainConfig::default()
        };
        let model = model_spec.build(2, 30, seed).unwrap();
        let ck = Checkpoint::from_model(&model, &cfg, "abc123");
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.model().unwrap(), model);
    }

    #[test]
    fn config_round_trip(
        tau in 0.0f64..=1.0,
        skip in 1usize..20,
        lr in 1e-5f64..1e-1,
        seed in any::<u64>(),
        base in any::<bool>(),
        full in any::<bool>(),
        kind in 0usize..4,
        noise in 0.0f64..0.5,
    ) {
        let mut cfg = RunConfig::default();
        cfg.train.tau = tau;
        cfg.train.skip = skip;
        cfg.train.adam.lr = lr;
        cfg.train.seed = seed;
        cfg.train.tau_convention = if base { TauConvention::TauOnBase } else { TauConvention::TauOnSkip };
        cfg.train.time_policy = if full { TimePolicy::FullRange } else { TimePolicy::SkipRange };
        cfg.data.kind = match kind {
            0 => DatasetKind::circle_mixture(5, 1.5, noise + 0.01),
            1 => DatasetKind::Rings { radii: vec![0.5, 1.5], thickness: noise },
            2 => DatasetKind::SwissRoll { turns: 2.0, noise },
            _ => DatasetKind::TwoMoons { noise },
        };
        let text = cfg.to_text();
        prop_assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }
}
