use fanerv_core::autograd::Tensor;
use fanerv_core::data::{
    apply_mask, from_rgb8, load_clip, make_mask, save_clip, scaled_box_side, split_even_odd, synthetic_clip, to_rgb8,
    LoadOptions, Mask, MaskSpec, RawDescriptor, VideoClip,
};
use proptest::prelude::*;

const SYNTHETIC_8X96X160_SEED0: &str = "141c3f68953aa2e8e5777a89b1e543e5667677afdeb444394840f83d3f9508f6";

fn ramp(t: usize, h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn(&[3, h, w], |i| ((i * 7 + t * 31) % 256) as f32 / 255.0)
}

#[test]
fn png_directory_loads_in_index_order() {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<_> = (0..8).map(|t| ramp(t, 160, 320)).collect();
    let clip = VideoClip::new(frames, "ramp").unwrap();
    // write out of order names to check numeric sorting
    save_clip(dir.path(), &clip).unwrap();
    std::fs::rename(dir.path().join("frame_00007.png"), dir.path().join("frame_7.png")).unwrap();
    let loaded = load_clip(dir.path(), &LoadOptions::default()).unwrap();
    assert_eq!((loaded.len(), loaded.height, loaded.width), (8, 160, 320));
    assert_eq!(loaded.frames, clip.frames);
}

#[test]
fn stride_incompatible_dimensions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let clip = VideoClip::new(vec![ramp(0, 100, 100)], "x").unwrap();
    save_clip(dir.path(), &clip).unwrap();
    let opts = LoadOptions {
        stride: Some(80),
        ..Default::default()
    };
    assert!(load_clip(dir.path(), &opts).is_err());
    assert!(load_clip(dir.path(), &LoadOptions::default()).is_ok());
}

#[test]
fn crop_and_resize_produce_requested_dims() {
    let dir = tempfile::tempdir().unwrap();
    let clip = VideoClip::new(vec![ramp(0, 120, 200), ramp(1, 120, 200)], "x").unwrap();
    save_clip(dir.path(), &clip).unwrap();
    let opts = LoadOptions {
        crop: Some((100, 180)),
        resize: Some((80, 160)),
        stride: Some(16),
        max_frames: Some(1),
    };
    let c = load_clip(dir.path(), &opts).unwrap();
    assert_eq!((c.len(), c.height, c.width), (1, 80, 160));
    let cropped = load_clip(
        dir.path(),
        &LoadOptions {
            crop: Some((100, 180)),
            ..Default::default()
        },
    )
    .unwrap();
    // center crop offsets are (10, 10)
    let (orig, crop) = (clip.frames[0].data(), cropped.frames[0].data());
    assert_eq!(crop[0], orig[10 * 200 + 10]);
}

#[test]
fn raw_planar_file_with_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h, t) = (16usize, 8usize, 3usize);
    let mut bytes = Vec::new();
    for f in 0..t {
        for c in 0..3 {
            for i in 0..w * h {
                bytes.push(((f * 50 + c * 20 + i) % 256) as u8);
            }
        }
    }
    let path = dir.path().join("clip.rgb");
    std::fs::write(&path, &bytes).unwrap();
    let desc = RawDescriptor {
        width: w,
        height: h,
        frames: t,
        bit_depth: 8,
    };
    std::fs::write(dir.path().join("clip.rgb.json"), serde_json::to_vec(&desc).unwrap()).unwrap();
    let clip = load_clip(&path, &LoadOptions::default()).unwrap();
    assert_eq!((clip.len(), clip.height, clip.width), (3, 8, 16));
    let px = clip.frames[2].data()[w * h + 5];
    assert_eq!(px, ((2 * 50 + 20 + 5) % 256) as f32 / 255.0);

    std::fs::write(&path, &bytes[1..]).unwrap();
    assert!(load_clip(&path, &LoadOptions::default()).is_err());
}

#[test]
fn missing_input_is_an_error() {
    assert!(load_clip(std::path::Path::new("/nonexistent/clip.rgb"), &LoadOptions::default()).is_err());
    let empty = tempfile::tempdir().unwrap();
    assert!(load_clip(empty.path(), &LoadOptions::default()).is_err());
}

#[test]
fn synthetic_clip_matches_golden_hash() {
    let a = synthetic_clip(8, 96, 160, 0).unwrap();
    let b = synthetic_clip(8, 96, 160, 0).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.content_hash(), SYNTHETIC_8X96X160_SEED0);
    assert_ne!(synthetic_clip(8, 96, 160, 1).unwrap().content_hash(), a.content_hash());
    for f in &a.frames {
        assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn frames_round_trip_through_png_at_8_bits() {
    let clip = synthetic_clip(2, 32, 48, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_clip(dir.path(), &clip).unwrap();
    let back = load_clip(dir.path(), &LoadOptions::default()).unwrap();
    assert_eq!(back.frames, clip.frames);
    assert_eq!(from_rgb8(&to_rgb8(&clip.frames[0])), clip.frames[0]);
}

#[test]
fn center_mask_geometry() {
    let m = make_mask(&MaskSpec::Center, 160, 320, 0).unwrap();
    assert_eq!(m.masked_count(), 40 * 80);
    assert_eq!(m.masked_count() * 16, 160 * 320);
    // box rows 60..100, cols 120..200, centered at (80, 160)
    let hidden = |y: usize, x: usize| !m.visible[y * 320 + x];
    assert!(hidden(60, 120) && hidden(99, 199) && hidden(80, 160));
    assert!(!hidden(59, 120) && !hidden(60, 119) && !hidden(100, 160) && !hidden(80, 200));
}

#[test]
fn scatter_mask_is_deterministic_and_bounded() {
    let spec = MaskSpec::scatter(11);
    let a = make_mask(&spec, 1080, 1920, 4).unwrap();
    assert_eq!(a, make_mask(&spec, 1080, 1920, 4).unwrap());
    assert!(a.masked_count() <= 5 * 2500);
    assert!(a.masked_count() >= 2500);
    assert_ne!(a, make_mask(&spec, 1080, 1920, 5).unwrap());
    assert_ne!(a, make_mask(&MaskSpec::scatter(12), 1080, 1920, 4).unwrap());
}

#[test]
fn scatter_boxes_scale_down_with_resolution() {
    assert_eq!(scaled_box_side(50, 1080, 1920), 50);
    assert_eq!(scaled_box_side(50, 2160, 3840), 50);
    assert_eq!(scaled_box_side(50, 540, 960), 25);
    assert_eq!(scaled_box_side(50, 96, 160), 8);
    let m = make_mask(&MaskSpec::scatter(0), 96, 160, 0).unwrap();
    assert!(m.masked_count() <= 5 * 64 && m.masked_count() >= 64);
    let too_big = MaskSpec::Scatter {
        count: 1,
        box_size: 5000,
        seed: 0,
    };
    assert!(make_mask(&too_big, 1080, 1920, 0).is_err());
}

#[test]
fn even_odd_split_examples() {
    let s = split_even_odd(6).unwrap();
    assert_eq!((s.train, s.test), (vec![0, 2, 4], vec![1, 3, 5]));
    let s = split_even_odd(2).unwrap();
    assert_eq!((s.train, s.test), (vec![0], vec![1]));
    assert!(split_even_odd(1).is_err());
    assert!(split_even_odd(0).is_err());
}

#[test]
fn apply_mask_identities() {
    let f = ramp(3, 8, 12);
    let all = Mask {
        height: 8,
        width: 12,
        visible: vec![true; 96],
    };
    let none = Mask {
        visible: vec![false; 96],
        ..all.clone()
    };
    assert_eq!(apply_mask(&f, &all).unwrap(), f);
    assert!(apply_mask(&f, &none).unwrap().data().iter().all(|&v| v == 0.0));
    let center = make_mask(&MaskSpec::Center, 8, 12, 0).unwrap();
    let once = apply_mask(&f, &center).unwrap();
    assert_eq!(apply_mask(&once, &center).unwrap(), once);
    let wrong = make_mask(&MaskSpec::Center, 8, 16, 0).unwrap();
    assert!(apply_mask(&f, &wrong).is_err());
}

#[test]
fn masked_nan_pixels_do_not_survive_apply_mask() {
    let m = make_mask(&MaskSpec::Center, 16, 16, 0).unwrap();
    let mut f = ramp(0, 16, 16);
    for (i, v) in f.data_mut().iter_mut().enumerate() {
        if !m.visible[i % 256] {
            *v = f32::NAN;
        }
    }
    assert!(apply_mask(&f, &m).unwrap().all_finite());
}

proptest! {
    #[test]
    fn split_is_a_partition(t in 2usize..=100) {
        let s = split_even_odd(t).unwrap();
        prop_assert_eq!(s.train.len() + s.test.len(), t);
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..t).collect::<Vec<_>>());
        prop_assert!(s.train.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn masks_are_binary_and_inside(h in 8usize..200, w in 8usize..200, seed in 0u64..1000, t in 0usize..50) {
        let m = make_mask(&MaskSpec::scatter(seed), h, w, t).unwrap();
        prop_assert_eq!(m.visible.len(), h * w);
        let side = scaled_box_side(50, h, w);
        prop_assert!(m.masked_count() >= side * side);
        prop_assert!(m.masked_count() <= 5 * side * side);
        let tensor = m.to_tensor(3);
        prop_assert!(tensor.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
