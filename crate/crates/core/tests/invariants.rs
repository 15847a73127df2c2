use proptest::prelude::*;

use ric_core::attack::{margin_loss, margin_of};
use ric_core::codec::{dequantize, quantize_eval, quantize_train, srl_blend, srl_subtract};
use ric_core::keystream::{derive_stream, generate_rni, Purpose, SecretKey};
use ric_core::metrics::{adp, mse, psnr, psnr_from_mse, ssim};
use ric_core::security::{bound_probability, theorem_report, BoundMode};
use ric_core::threat::latent_variance_penalty;
use ric_core::{Image8, Tensor};

fn unit_vec(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(0.0f32..=1.0, n)
}

fn tensor(v: Vec<f32>) -> Tensor {
    let n = v.len();
    Tensor::new(&[1, 1, 1, n], v).unwrap()
}

proptest! {
    #[test]
    fn srl_subtract_inverts_blend(u in unit_vec(64), n in unit_vec(64), lambda in 0.05f32..0.95) {
        let x = srl_blend(&tensor(u.clone()), &tensor(n.clone()), lambda).unwrap();
        let back = srl_subtract(&x, &tensor(n), lambda).unwrap();
        for (a, b) in back.data().iter().zip(&u) {
            prop_assert!((a - b).abs() < 1e-4 / (1.0 - lambda));
        }
    }

    #[test]
    fn blend_stays_in_unit_range(u in unit_vec(32), n in unit_vec(32), lambda in 0.01f32..0.99) {
        let x = srl_blend(&tensor(u), &tensor(n), lambda).unwrap();
        prop_assert!(x.data().iter().all(|v| (0.0..=1.0 + 1e-6).contains(v)));
    }

    #[test]
    fn eval_quantisation_error_is_half_a_level(v in unit_vec(100)) {
        let t = tensor(v.clone());
        let q = dequantize(&quantize_eval(&t).unwrap());
        for (a, b) in q.data().iter().zip(&v) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn train_quantisation_noise_is_bounded(v in unit_vec(100), seed in any::<u64>()) {
        let mut s = derive_stream(SecretKey::new(seed), Purpose::Quant);
        let q = quantize_train(&tensor(v.clone()), &mut s);
        for (a, b) in q.data().iter().zip(&v) {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn quantise_is_idempotent_on_pixels(px in prop::collection::vec(any::<u8>(), 49)) {
        let img = Image8::new(1, 7, 7, px).unwrap();
        prop_assert_eq!(quantize_eval(&dequantize(&img)).unwrap(), img);
    }

    #[test]
    fn keystream_is_deterministic_and_purpose_separated(seed in any::<u64>()) {
        let k = SecretKey::new(seed);
        let a = derive_stream(k, Purpose::Rni).units(16);
        prop_assert_eq!(&a, &derive_stream(k, Purpose::Rni).units(16));
        prop_assert_ne!(&a, &derive_stream(k, Purpose::Nes).units(16));
        prop_assert!(a.iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn rni_depends_on_key(seed in any::<u64>()) {
        let a = generate_rni(SecretKey::new(seed), (1, 4, 4)).unwrap();
        let b = generate_rni(SecretKey::new(seed.wrapping_add(1)), (1, 4, 4)).unwrap();
        prop_assert_eq!(&a, &generate_rni(SecretKey::new(seed), (1, 4, 4)).unwrap());
        prop_assert_ne!(a, b);
    }

    #[test]
    fn psnr_is_symmetric_and_matches_mse(a in prop::collection::vec(any::<u8>(), 36), b in prop::collection::vec(any::<u8>(), 36)) {
        let x = Image8::new(1, 6, 6, a).unwrap();
        let y = Image8::new(1, 6, 6, b).unwrap();
        let p = psnr(&x, &y).unwrap();
        prop_assert_eq!(p, psnr(&y, &x).unwrap());
        prop_assert_eq!(p, psnr_from_mse(mse(&x, &y).unwrap()));
        prop_assert_eq!(p.is_infinite(), x == y);
    }

    #[test]
    fn ssim_is_bounded_and_one_on_identity(a in prop::collection::vec(any::<u8>(), 121), b in prop::collection::vec(any::<u8>(), 121)) {
        let x = Image8::new(1, 11, 11, a).unwrap();
        let y = Image8::new(1, 11, 11, b).unwrap();
        let s = ssim(&x, &y).unwrap();
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&s));
        prop_assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn adp_sign_follows_accuracy_change(p in 1.0f64..100.0, e in 0.0f64..100.0) {
        let d = adp(p, e).unwrap();
        prop_assert_eq!(d > 0.0, e < p);
        prop_assert!((d - (p - e) / p * 100.0).abs() < 1e-9);
    }

    #[test]
    fn margin_loss_is_floored(z in prop::collection::vec(-20.0f32..20.0, 2..12), t in 0usize..12, g in 0.0f32..10.0) {
        let t = t % z.len();
        let l = margin_loss(&z, t, g).unwrap();
        prop_assert!(l >= -g);
        let (m, other) = margin_of(&z, t);
        prop_assert!(other != t);
        prop_assert_eq!(l, m.max(-g));
    }

    #[test]
    fn bound_is_monotone(m in 1u32..100, d in 1u64..100_000) {
        let a = bound_probability(m, d, BoundMode::Exact).unwrap();
        prop_assert!(a <= 0.0);
        prop_assert!(bound_probability(m, d + 1, BoundMode::Exact).unwrap() <= a);
        prop_assert!(bound_probability(m + 1, d, BoundMode::Exact).unwrap() >= a);
    }

    #[test]
    fn threshold_scales_inversely_with_m(alpha in 0.1f64..100.0, m in 1u32..50) {
        let r = theorem_report(m, 10, alpha).unwrap();
        prop_assert!((r.threshold_db * m as f64 - alpha).abs() < 1e-9);
    }

    #[test]
    fn latent_variance_is_shift_invariant(v in prop::collection::vec(-5.0f32..5.0, 12), shift in -3.0f32..3.0) {
        let a = Tensor::new(&[4, 3], v.clone()).unwrap();
        let b = Tensor::new(&[4, 3], v.iter().map(|x| x + shift).collect()).unwrap();
        let pa = latent_variance_penalty(&a).unwrap();
        prop_assert!(pa >= 0.0);
        prop_assert!((pa - latent_variance_penalty(&b).unwrap()).abs() < 1e-3 * (1.0 + pa));
    }
}
