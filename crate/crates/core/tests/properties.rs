use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;
use rwre_core::conditioned::h_transform_kernel;
use rwre_core::environment::{build_model, LawSpec, ModelSpec};
use rwre_core::harmonic::un_exact_units;
use rwre_core::lattice::evolve;
use rwre_core::limits::fkg_check;
use rwre_core::utable::default_ceiling;
use rwre_core::{build_utable, Environment, Exact, Scalar, StreamKey};

/// Centered two-point law on `{−a, b}`.
fn two_point(a: u8, b: u8) -> LawSpec {
    let (a, b) = (a as f64, b as f64);
    LawSpec::new(&[-a, b], &[b / (a + b), a / (a + b)])
}

fn laws() -> impl Strategy<Value = Vec<LawSpec>> {
    prop::collection::vec((1u8..4, 1u8..4).prop_map(|(a, b)| two_point(a, b)), 1..4)
}

fn model() -> impl Strategy<Value = ModelSpec> {
    laws().prop_flat_map(|alphabet| {
        let k = alphabet.len();
        let iid = prop::collection::vec(1u32..10, k).prop_map({
            let alphabet = alphabet.clone();
            move |w| {
                let s: u32 = w.iter().sum();
                ModelSpec::iid(alphabet.clone(), w.iter().map(|&x| x as f64 / s as f64).collect())
            }
        });
        let periodic = prop::collection::vec(0..k, 1..5)
            .prop_map({
                let alphabet = alphabet.clone();
                move |order| ModelSpec::periodic(alphabet.clone(), order)
            });
        prop_oneof![iid, periodic]
    })
}

fn realize(spec: &ModelSpec, seed: u64) -> Environment {
    Arc::new(build_model(spec).expect("centered model builds")).realize(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shifts_compose(spec in model(), seed in 0u64..1000, a in 0usize..40, b in 0usize..40) {
        let env = realize(&spec, seed);
        prop_assert_eq!(env.shift(a).shift(b).letters(30), env.shift(a + b).letters(30));
        prop_assert_eq!(env.shift(a).letters(1)[0], env.letter(a + 1));
    }

    #[test]
    fn killed_dp_conserves_mass(spec in model(), seed in 0u64..1000, y in 0i64..6, n in 1usize..60) {
        let env = realize(&spec, seed);
        let d = evolve::<f64>(&env, y, n).unwrap();
        let total = d.alive_total() + d.killed_total() + *d.pruned();
        prop_assert!((total - 1.0).abs() < 1e-12, "total {}", total);
        prop_assert!(d.alive().all(|(x, _)| x > 0));
        prop_assert!(d.killed().keys().all(|&x| x <= 0));
    }

    #[test]
    fn u_n_grows_from_y(spec in model(), seed in 0u64..1000, y in 0i64..6) {
        let env = realize(&spec, seed);
        let mut prev = y as f64;
        for n in 1..40 {
            let u = un_exact_units::<f64>(&env, y, n).unwrap();
            prop_assert!(u >= prev, "U_{} = {} < {}", n, u, prev);
            prev = u;
        }
    }

    #[test]
    fn float_dp_tracks_exact(spec in model(), seed in 0u64..1000, y in 0i64..4, n in 1usize..15) {
        let env = realize(&spec, seed);
        let exact = un_exact_units::<Exact>(&env, y, n).unwrap();
        let float = un_exact_units::<f64>(&env, y, n).unwrap();
        prop_assert!((exact.to_f64() - float).abs() < 1e-12);
    }

    #[test]
    fn fkg_slack_nonnegative(spec in model(), seed in 0u64..1000, y in 0i64..6, n in 1usize..40) {
        let env = realize(&spec, seed);
        let unit = env.lattice().unwrap().unit;
        let r = fkg_check(&env, y as f64 * unit, n, None).unwrap();
        prop_assert!(r.worst_slack >= -1e-12, "slack {}", r.worst_slack);
    }

    #[test]
    fn h_transform_kernels_are_laws(spec in model(), seed in 0u64..1000, z in 1i64..8, n in 0usize..10) {
        let env = realize(&spec, seed);
        let table = build_utable(&env, 10, default_ceiling(&env, z, 10, 300).unwrap(), 300).unwrap();
        let unit = env.lattice().unwrap().unit;
        let k = h_transform_kernel(&env, &table, n, z as f64 * unit).unwrap();
        let mass: f64 = k.atoms.iter().map(|a| a.1).sum();
        prop_assert!((mass - 1.0).abs() < 1e-12);
        prop_assert!(k.atoms.iter().all(|a| a.0 > 0.0 && a.1 > 0.0));
        let u = table.value(n, z).unwrap();
        prop_assert!((k.normalizer - u).abs() < 1e-9 * u.max(1.0), "{} vs {}", k.normalizer, u);
    }

    #[test]
    fn streams_are_reproducible(master in any::<u64>(), stream in any::<u64>(), i in any::<u64>()) {
        let key = StreamKey::new(master, stream);
        let a: [u64; 4] = key.rng(i).random();
        let b: [u64; 4] = key.rng(i).random();
        prop_assert_eq!(a, b);
        let c: [u64; 4] = key.rng(i.wrapping_add(1)).random();
        prop_assert_ne!(a, c);
    }
}
