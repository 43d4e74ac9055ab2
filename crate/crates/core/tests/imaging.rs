use illumatte::imaging::{
    assemble_rgba, bilinear_resize, byte_to_rgb, composite_over, read_png, rgb_to_byte,
    unit_to_byte, write_png, RgbImage, ScalarMap,
};
use proptest::prelude::*;

#[test]
fn byte_conversion_examples() {
    assert_eq!(rgb_to_byte(-1.0), 0);
    assert_eq!(rgb_to_byte(1.0), 255);
    assert_eq!(rgb_to_byte(0.0), 128);
    assert_eq!(rgb_to_byte(7.0), 255);
    assert_eq!(unit_to_byte(0.5), 128);
    assert_eq!(unit_to_byte(-0.2), 0);
}

#[test]
fn two_by_two_png_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.png");
    let rgb = RgbImage::new(
        2,
        2,
        vec![
            -1.0, 0.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, 0.5, -0.5, 0.0,
        ],
    )
    .unwrap();
    let alpha = ScalarMap::new(2, 2, vec![1.0, 0.5, 0.0, 0.25]).unwrap();
    write_png(&assemble_rgba(&rgb, &alpha).unwrap(), &path).unwrap();
    let decoded = image::open(&path).unwrap();
    assert_eq!(decoded.color(), image::ColorType::Rgba8);
    assert_eq!(
        decoded.to_rgba8().into_raw(),
        [0, 128, 255, 255, 255, 255, 255, 128, 0, 0, 0, 0, 191, 64, 128, 64]
    );
}

#[test]
fn assemble_rejects_bad_alpha_and_shapes() {
    let rgb = RgbImage::filled(2, 2, [0.0; 3]);
    assert!(assemble_rgba(&rgb, &ScalarMap::filled(2, 2, 1.5)).is_err());
    assert!(assemble_rgba(&rgb, &ScalarMap::filled(2, 3, 0.5)).is_err());
}

#[test]
fn resize_constant_and_identity() {
    let m = ScalarMap::filled(3, 5, 0.4);
    assert!(bilinear_resize(&m, 7, 2)
        .unwrap()
        .data()
        .iter()
        .all(|&v| (v - 0.4).abs() < 1e-7));
    let r = ScalarMap::from_fn(2, 2, |y, x| (y * 2 + x) as f32);
    assert_eq!(bilinear_resize(&r, 2, 2).unwrap(), r);
    assert!(bilinear_resize(&r, 0, 2).is_err());
}

#[test]
fn composite_endpoints() {
    let fg_rgb = RgbImage::filled(1, 2, [1.0, -1.0, 0.0]);
    let bg = RgbImage::filled(1, 2, [-1.0, 1.0, 0.5]);
    let fg = assemble_rgba(&fg_rgb, &ScalarMap::new(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
    let out = composite_over(&fg, &bg).unwrap();
    assert_eq!(out.pixel(0, 0), [1.0, -1.0, 0.0]);
    assert_eq!(out.pixel(0, 1), [-1.0, 1.0, 0.5]);
}

proptest! {
    #[test]
    fn png_round_trip_is_lossless_on_bytes(
        h in 1usize..6,
        w in 1usize..6,
        seed in prop::collection::vec(any::<u8>(), 4..200),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.png");
        let byte = |i: usize| seed[i % seed.len()];
        let rgb = RgbImage::new(h, w, (0..h * w * 3).map(|i| byte_to_rgb(byte(i))).collect()).unwrap();
        let alpha = ScalarMap::new(h, w, (0..h * w).map(|i| byte(i + 7) as f32 / 255.0).collect()).unwrap();
        let img = assemble_rgba(&rgb, &alpha).unwrap();
        write_png(&img, &path).unwrap();
        let back = read_png(&path).unwrap();
        let raw = image::open(&path).unwrap().to_rgba8().into_raw();
        for (i, px) in raw.chunks(4).enumerate() {
            for c in 0..3 {
                prop_assert_eq!(px[c], byte(i * 3 + c));
            }
            prop_assert_eq!(px[3], byte(i + 7));
        }
        write_png(&back, &path).unwrap();
        prop_assert_eq!(image::open(&path).unwrap().to_rgba8().into_raw(), raw);
    }

    #[test]
    fn composite_stays_between_inputs(
        f in prop::array::uniform3(-1.0f32..=1.0),
        b in prop::array::uniform3(-1.0f32..=1.0),
        a in 0.0f32..=1.0,
    ) {
        let fg = assemble_rgba(&RgbImage::filled(1, 1, f), &ScalarMap::filled(1, 1, a)).unwrap();
        let out = composite_over(&fg, &RgbImage::filled(1, 1, b)).unwrap().pixel(0, 0);
        for c in 0..3 {
            let (lo, hi) = (f[c].min(b[c]), f[c].max(b[c]));
            prop_assert!(out[c] >= lo - 1e-6 && out[c] <= hi + 1e-6);
        }
    }
}
