use invs::codec::{self, CodecParams, Planes};
use invs::geometry::{pose_compose, pose_error, pose_inverse, se3_exp, se3_log, PerturbKind, Perturbation, Pose, Twist};
use invs::image::Image;
use invs::linalg::Vec3;
use invs::objectives::{mse, psnr};
use invs::protocol::{parse_packet, pose_from_wire, pose_to_wire, serialize_packet, simulate_link, FramePacket};
use invs::scene::{generate_synthetic_scene, scene_from_bytes, scene_to_bytes, Aabb, SceneStyle};
use proptest::prelude::*;

fn twist() -> impl Strategy<Value = Twist<f64>> {
    // rotation angle kept below pi so the log is unique
    (prop::array::uniform3(-1.7f64..1.7), prop::array::uniform3(-5.0f64..5.0)).prop_map(|(w, v)| Twist([w[0], w[1], w[2], v[0], v[1], v[2]]))
}

fn planes() -> impl Strategy<Value = Planes> {
    (1usize..40, 1usize..30).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), 3 * w * h).prop_map(move |d| Planes {
            width: w,
            height: h,
            planes: [d[..w * h].to_vec(), d[w * h..2 * w * h].to_vec(), d[2 * w * h..].to_vec()],
        })
    })
}

fn image(w: usize, h: usize) -> impl Strategy<Value = Image<f64>> {
    prop::collection::vec(0.0f64..=1.0, w * h * 3).prop_map(move |data| Image { width: w, height: h, data })
}

fn packet() -> impl Strategy<Value = FramePacket> {
    (any::<u32>(), prop::array::uniform6(-10.0f32..10.0), any::<bool>(), any::<bool>(), prop::collection::vec(any::<u8>(), 0..300)).prop_map(
        |(frame_id, pose, present, lossless, residual)| FramePacket {
            frame_id,
            pose,
            residual_present: present,
            lossless: present && lossless,
            residual: if present { residual } else { Vec::new() },
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn se3_log_inverts_exp(t in twist()) {
        let back = se3_log(&se3_exp(&t));
        prop_assert!(back.max_abs_diff(&t) < 1e-9, "{:?} vs {:?}", back, t);
    }

    #[test]
    fn compose_with_inverse_is_identity(a in twist(), b in twist()) {
        let p = se3_exp(&a);
        let q = se3_exp(&b);
        let (deg, dist) = pose_error(&pose_compose(&pose_compose(&p, &q), &pose_inverse(&q)), &p);
        prop_assert!(deg < 1e-9 && dist < 1e-9);
    }

    #[test]
    fn perturbation_moves_by_its_magnitude(t in twist(), axis in 0usize..3, mag in -30.0f64..30.0, rot in any::<bool>()) {
        let p = se3_exp(&t);
        let kind = if rot { PerturbKind::Rotation } else { PerturbKind::Translation };
        let (deg, dist) = pose_error(&p, &Perturbation { kind, axis, magnitude: mag }.apply(&p));
        if rot {
            prop_assert!((deg - mag.abs()).abs() < 1e-7 && dist < 1e-9);
        } else {
            prop_assert!(deg < 1e-7 && (dist - mag.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn wire_pose_is_a_projection(t in twist()) {
        let w = pose_to_wire(&se3_exp(&t));
        prop_assert_eq!(pose_to_wire(&pose_from_wire(&w)), w);
    }

    #[test]
    fn lossless_codec_round_trips(p in planes()) {
        let bytes = codec::encode(&p, &CodecParams::lossless()).unwrap();
        prop_assert_eq!(codec::decode(&bytes).unwrap(), p);
    }

    #[test]
    fn lossy_codec_keeps_shape_and_is_deterministic(p in planes(), q in 1u8..=100) {
        let params = CodecParams::lossy(q);
        let bytes = codec::encode(&p, &params).unwrap();
        prop_assert_eq!(&bytes, &codec::encode(&p, &params).unwrap());
        let d = codec::decode(&bytes).unwrap();
        prop_assert_eq!((d.width, d.height), (p.width, p.height));
    }

    #[test]
    fn decoders_never_panic_on_garbage(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = codec::decode(&bytes);
        let _ = parse_packet(&bytes);
    }

    #[test]
    fn residual_quantization_error_is_half_a_step(img in image(7, 5)) {
        let r = Image { width: img.width, height: img.height, data: img.data.iter().map(|v| 2.0 * v - 1.0).collect() };
        let back: Image<f64> = codec::residual_dequantize(&codec::residual_quantize(&r).unwrap());
        for (a, b) in r.data.iter().zip(&back.data) {
            prop_assert!((a - b).abs() <= 0.5 / 127.5 + 1e-12);
        }
    }

    #[test]
    fn packets_round_trip(p in packet()) {
        let bytes = serialize_packet(&p).unwrap();
        prop_assert_eq!(bytes.len(), p.serialized_len());
        prop_assert_eq!(parse_packet(&bytes).unwrap(), p);
    }

    #[test]
    fn mse_is_a_symmetric_nonnegative_measure(a in image(6, 4), b in image(6, 4)) {
        let ab = mse(&a, &b).unwrap();
        prop_assert_eq!(ab, mse(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
        if ab > 0.0 {
            prop_assert!(psnr(ab).unwrap() >= 0.0);
            prop_assert!(psnr(ab / 2.0).unwrap() > psnr(ab).unwrap());
        }
    }

    #[test]
    fn link_time_is_total_bits_over_rate(sizes in prop::collection::vec(1.0f64..5000.0, 1..50), rate in 1e3f64..1e6) {
        let r = simulate_link(&sizes, rate, 0.0).unwrap();
        let bits: f64 = sizes.iter().map(|s| 8.0 * s).sum();
        prop_assert!((r.total_time_s - bits / rate).abs() <= 1e-9 * r.total_time_s);
        prop_assert!((r.fps - sizes.len() as f64 * rate / bits).abs() <= 1e-9 * r.fps);
        prop_assert!(r.records.windows(2).all(|w| w[0].cumulative_s < w[1].cumulative_s));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scenes_round_trip_through_bytes(seed in any::<u64>(), count in 1usize..60, style in 0usize..3) {
        let style = [SceneStyle::Scatter, SceneStyle::Lattice, SceneStyle::BarrelStructure][style];
        let bounds = Aabb::new([-1.0, -0.5, 0.0], [1.0, 0.5, 2.0]).unwrap();
        let s = generate_synthetic_scene(seed, count, &bounds, style).unwrap();
        let bytes = scene_to_bytes(&s);
        prop_assert_eq!(scene_to_bytes(&scene_from_bytes(&bytes).unwrap()), bytes);
        for g in &s.gaussians {
            prop_assert!(bounds.contains(&g.mean));
        }
    }
}

#[test]
fn identity_pose_has_zero_log() {
    assert_eq!(se3_log(&Pose::<f64>::identity()).0, [0.0; 6]);
    let p = Pose::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0)).unwrap();
    assert_eq!(p.center.0, [0.0, 0.0, -3.0]);
}
