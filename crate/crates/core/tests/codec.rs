use proptest::prelude::*;

use patchpc::codec::{
    self, dequantize_centroid, quantize_centroid, Bitstream, CodecError, CodecModel, CodecSettings,
    FIXED_HEADER_BYTES,
};
use patchpc::geometry::{synth_shape, PointCloud, ScaleParams, ShapeKind, ShapeSpec};
use patchpc::network::{init_params, ModelConfig};
use patchpc::patching::PatchConfig;
use patchpc::training::{fit_coding_tables, Dataset};

fn cloud(kind: ShapeKind, n: usize, seed: u64) -> PointCloud {
    synth_shape(&ShapeSpec { kind, n, seed }).unwrap()
}

// untrained model, tables fitted on `fit_on`
fn model(k_big: usize, k: usize, d: usize, seed: u64, fit_on: &PointCloud) -> CodecModel {
    let mut cfg = ModelConfig::compression(k_big, k, d);
    cfg.group_size = cfg.group_size.min(k_big);
    let params = init_params::<f32>(&cfg, seed).unwrap();
    let patch = PatchConfig::for_cloud(fit_on.len(), k_big / k, k_big).unwrap();
    let data = Dataset::from_clouds(&[fit_on.clone()], &patch).unwrap();
    let tables = fit_coding_tables(&params, &cfg, data.all_patches()).unwrap();
    CodecModel::new(cfg, params, tables).unwrap()
}

fn stream(s: usize, bits: u8, seg: usize) -> Bitstream {
    Bitstream {
        num_points: (s * 128) as u32,
        patches: s as u32,
        patch_points: 256,
        decoded_points: 128,
        bottleneck: 16,
        scale: ScaleParams { offset: [0.5, -1.0, 2.0], scale: 31.5 },
        centroid_bits: bits,
        table_digest: 0xdead_beef,
        centroids: (0..s as u32).map(|i| [i, 2 * i, 3 * i]).collect(),
        segments: (0..s).map(|i| vec![i as u8; seg]).collect(),
    }
}

#[test]
fn paper_protocol_stream_shape() {
    // N=8192, alpha=2, S=64, K=256
    let x = cloud(ShapeKind::Sphere, 8192, 3);
    let m = model(256, 128, 16, 1, &x);
    let bs = codec::encode(&m, &x, &CodecSettings::default()).unwrap();
    assert_eq!(bs.patches, 64);
    assert_eq!(bs.segments.len(), 64);
    assert_eq!(bs.centroids.len(), 64);
    let bytes = bs.serialize().unwrap();
    assert_eq!(bs.bpp(), (bytes.len() * 8) as f64 / 8192.0);
    let out = codec::decode(&m, &bs).unwrap();
    assert_eq!(out.len(), 8192);
}

#[test]
fn encode_twice_identical_and_latents_roundtrip() {
    let x = cloud(ShapeKind::Torus, 512, 7);
    let m = model(64, 32, 8, 2, &x);
    let s = CodecSettings::default();
    let a = codec::encode_bytes(&m, &x, &s).unwrap();
    let b = codec::encode_bytes(&m, &x, &s).unwrap();
    assert_eq!(a, b);
    let lat = codec::encode_latents(&m, &x, &s).unwrap();
    let bs = Bitstream::parse(&a).unwrap();
    assert_eq!(codec::decode_latents(&m, &bs).unwrap(), lat);
}

#[test]
fn wrong_model_is_digest_mismatch() {
    let x = cloud(ShapeKind::Sphere, 512, 1);
    let m = model(64, 32, 8, 2, &x);
    let other = model(64, 32, 8, 9, &cloud(ShapeKind::CubeSurface, 512, 4));
    let bytes = codec::encode_bytes(&m, &x, &CodecSettings::default()).unwrap();
    match codec::decode_bytes(&other, &bytes) {
        Err(CodecError::DigestMismatch { .. }) => {}
        r => panic!("expected digest mismatch, got {r:?}"),
    }
}

#[test]
fn truncated_latents_name_patch() {
    let bs = stream(8, 16, 5);
    let bytes = bs.serialize().unwrap();
    // chop into the last segment
    match Bitstream::parse(&bytes[..bytes.len() - 2]) {
        Err(CodecError::TruncatedPatch { index }) => assert_eq!(index, 7),
        r => panic!("{r:?}"),
    }
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(matches!(Bitstream::parse(&bad), Err(CodecError::Magic)));
}

#[test]
fn bpp_arithmetic() {
    // 64 patches, 16-bit centroids: 64*3*2 = 384 bytes; varints 1 byte each
    let fixed = FIXED_HEADER_BYTES + 64 + 384;
    let seg = (1024 - fixed) / 64;
    let mut bs = stream(64, 16, seg);
    let rest = 1024 - fixed - seg * 64;
    bs.segments[0].extend(std::iter::repeat_n(0u8, rest));
    assert_eq!(bs.serialize().unwrap().len(), 1024);
    assert_eq!(bs.bpp(), 1.0);
    let floor = 64.0 * 3.0 * 16.0 / 8192.0;
    assert!(bs.bpp() > floor);
    let b = bs.breakdown();
    assert_eq!(b.header_bits + b.centroid_bits + b.latent_bits, 8192);
}

#[test]
fn precision_bounds() {
    for bits in [0u8, 7, 33, 64] {
        assert!(stream(4, bits, 1).serialize().is_err(), "bits={bits}");
    }
    let x = cloud(ShapeKind::Sphere, 256, 1);
    let m = model(32, 16, 4, 1, &x);
    let s = CodecSettings { centroid_bits: 7, ..Default::default() };
    assert!(codec::encode(&m, &x, &s).is_err());
}

#[test]
fn incompatible_point_count_rejected() {
    let x = cloud(ShapeKind::Sphere, 512, 1);
    let m = model(64, 32, 4, 1, &x);
    // 500 is not a multiple of k = 32
    assert!(codec::encode(&m, &cloud(ShapeKind::Sphere, 500, 2), &CodecSettings::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn container_roundtrip(
        s in 1usize..40,
        bits in 8u8..=32,
        seed in any::<u64>(),
        lens in proptest::collection::vec(0usize..300, 40),
        digest in any::<u32>(),
    ) {
        let max = if bits == 32 { u32::MAX } else { (1u32 << bits) - 1 };
        let mut st = seed;
        let mut next = move || {
            st = st.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            st >> 11
        };
        let bs = Bitstream {
            num_points: (s * 4) as u32,
            patches: s as u32,
            patch_points: 8,
            decoded_points: 4,
            bottleneck: 3,
            scale: ScaleParams { offset: [next() as f64 * 1e-9, -1.5, 0.0], scale: 2.25 },
            centroid_bits: bits,
            table_digest: digest,
            centroids: (0..s).map(|_| [0; 3].map(|_: u32| (next() as u32) & max)).collect(),
            segments: (0..s).map(|i| (0..lens[i]).map(|_| next() as u8).collect()).collect(),
        };
        let bytes = bs.serialize().unwrap();
        prop_assert_eq!(Bitstream::parse(&bytes).unwrap(), bs.clone());
        prop_assert_eq!(bytes.len() as u64 * 8, bs.breakdown().total_bits());
        // every strict prefix is rejected
        let cut = (next() as usize) % bytes.len();
        prop_assert!(Bitstream::parse(&bytes[..cut]).is_err());
    }

    #[test]
    fn centroid_quantization_error_bounded(
        c in proptest::array::uniform3(0.0f64..=64.0),
        bits in 8u8..=32,
    ) {
        let q = quantize_centroid(&c, bits);
        let back = dequantize_centroid(&q, bits);
        let step = 64.0 / ((1u64 << bits) - 1) as f64;
        for a in 0..3 {
            prop_assert!((back[a] - c[a]).abs() <= step / 2.0 + 1e-12);
        }
    }
}
