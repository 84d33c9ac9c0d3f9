use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use proptest::prelude::*;

use mss_core::detect::{f_n, k_for_target, theoretical_threshold};
use mss_core::io::{decode_tensor, encode_tensor};
use mss_core::metric::{nu_at, ParamPoint};
use mss_core::pattern::builtin_dictionary;
use mss_core::simulate::noise_field;
use mss_core::stats;
use mss_core::{build_net, EngineConfig, Field, Geometry, NetSpec, Plan, Provenance};

fn geometry() -> impl Strategy<Value = Geometry> {
    (1usize..=3, 2u32..=6, 1u32..=4).prop_map(|(d, l, r)| {
        let l = if d == 3 { 2 } else { l };
        Geometry::new(d, l as f64, r).unwrap()
    })
}

fn field_bits() -> impl Strategy<Value = Field> {
    geometry().prop_flat_map(|g| {
        let finite = proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO;
        proptest::collection::vec(finite, g.len()).prop_map(move |vals| {
            let values = ArrayD::from_shape_vec(IxDyn(&g.shape()), vals).unwrap();
            Field::new(g, values, Provenance::External).unwrap()
        })
    })
}

fn point() -> impl Strategy<Value = ParamPoint> {
    (1.0f64..4.0, -3.0f64..3.0).prop_map(|(h, t)| ParamPoint::new(vec![t], vec![h]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_encoding_is_bit_exact(x in field_bits()) {
        let bytes = encode_tensor(&x);
        let y = decode_tensor(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(y.geometry, x.geometry);
        let a: Vec<u64> = x.as_slice().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = y.as_slice().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn truncated_files_are_rejected(x in field_bits(), cut in 1usize..64) {
        let bytes = encode_tensor(&x);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_tensor(&bytes[..keep], Path::new("mem")).is_err());
    }

    #[test]
    fn nu_is_a_bounded_pseudometric(a in point(), b in point(), c in point(), which in 0usize..4) {
        let geom = Geometry::new(1, 8.0, 16).unwrap();
        let f = &builtin_dictionary(1).unwrap()[which];
        let ab = nu_at(f, &a, &b, &geom).unwrap();
        let ba = nu_at(f, &b, &a, &geom).unwrap();
        let ac = nu_at(f, &a, &c, &geom).unwrap();
        let cb = nu_at(f, &c, &b, &geom).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(nu_at(f, &a, &a, &geom).unwrap() == 0.0);
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert!(ab <= 2.0 + 1e-12);
    }

    #[test]
    fn threshold_is_monotone(n in 1usize..200, size in 1usize..50, delta in 0.001f64..0.5, k in 0.1f64..20.0) {
        let base = f_n(n, size as f64, delta, k).value;
        prop_assert!(f_n(n, size as f64, delta / 2.0, k).value >= base);
        prop_assert!(f_n(n, (size + 1) as f64, delta, k).value >= base);
        prop_assert!(f_n(n, size as f64, delta, k * 1.5).value >= base);
    }

    #[test]
    fn k_for_target_inverts_the_threshold(n in 1usize..100, size in 1usize..20, delta in 0.01f64..0.2, target in 0.5f64..30.0) {
        let k = k_for_target(n, size, delta, 256.0, target);
        let t = theoretical_threshold(n, size, delta, 256.0, k).unwrap();
        prop_assert!((t - target).abs() <= 1e-9 * target);
    }

    #[test]
    fn upper_quantile_controls_exceedance(xs in proptest::collection::vec(-10.0f64..10.0, 20..400), delta in 0.01f64..0.5) {
        let s = stats::sorted(&xs);
        let q = stats::upper_quantile(&s, delta);
        let above = xs.iter().filter(|&&x| x > q).count() as f64;
        prop_assert!(above <= delta * (xs.len() as f64 + 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn refined_net_contains_coarse_net(eps in 0.2f64..0.8, s in 1u32..4, l in 1u32..4) {
        let config = EngineConfig::default();
        let coarse = build_net(&NetSpec::new(16.0, 1, eps), &config).unwrap();
        let fine = coarse.refine(s, l, eps / 2.0);
        let key = |t: &[f64], h: &[f64]| (t[0].to_bits(), h[0].to_bits());
        let fine_set: BTreeSet<_> = fine.entries().map(|(t, h)| key(&t.0, &h.0)).collect();
        prop_assert!(coarse.entries().all(|(t, h)| fine_set.contains(&key(&t.0, &h.0))));
        prop_assert!(fine.len() >= coarse.len());
    }

    #[test]
    fn finer_net_never_lowers_the_statistic(seed in any::<u64>()) {
        let config = EngineConfig::default();
        let geom = Geometry::new(1, 16.0, 8).unwrap();
        let dict = builtin_dictionary(1).unwrap();
        let coarse = build_net(&NetSpec::new(16.0, 1, 0.5), &config).unwrap();
        let fine = coarse.fine_net(4.0, &config).unwrap();
        let x = noise_field::<f64>(&geom, seed, 0, 0);
        let a = Plan::new(&geom, &dict, &coarse, &config).unwrap().scan(&x).unwrap();
        let b = Plan::new(&geom, &dict, &fine, &config).unwrap().scan(&x).unwrap();
        for (c, f) in a.iter().zip(&b) {
            prop_assert!(f.statistic >= c.statistic);
        }
    }
}
