use illumatte::eval::{
    batch_report, empty_border_flags, BorderFlags, PixelScale, DEFAULT_MARGIN, DEFAULT_THRESHOLD,
};
use illumatte::imaging::RgbImage;
use proptest::prelude::*;

fn flags(img: &RgbImage) -> BorderFlags {
    empty_border_flags(img, DEFAULT_MARGIN, DEFAULT_THRESHOLD).unwrap()
}

#[test]
fn white_and_black_endpoints() {
    let white = flags(&RgbImage::filled(32, 32, [1.0; 3]));
    assert!(white.left && white.right && white.top && white.bottom && white.all);
    let black = flags(&RgbImage::filled(32, 32, [-1.0; 3]));
    assert!(!(black.left || black.right || black.top || black.bottom || black.all));
}

#[test]
fn single_dark_pixel_on_top_edge() {
    let img = RgbImage::from_fn(32, 32, |y, x| {
        if (y, x) == (0, 16) {
            [0.0; 3]
        } else {
            [1.0; 3]
        }
    });
    let f = flags(&img);
    assert!(!f.top && !f.all);
    assert!(f.left && f.right && f.bottom);
}

#[test]
fn threshold_is_strict_and_per_channel() {
    let on_threshold = flags(&RgbImage::filled(16, 16, [DEFAULT_THRESHOLD; 3]));
    assert!(!on_threshold.left);
    let one_channel = flags(&RgbImage::filled(16, 16, [1.0, 1.0, 0.5]));
    assert!(!one_channel.left);
}

#[test]
fn unit_scale_maps_to_signed() {
    assert_eq!(PixelScale::Unit.to_signed(1.0), 1.0);
    assert_eq!(PixelScale::Unit.to_signed(0.0), -1.0);
    assert_eq!(PixelScale::SignedUnit.to_signed(0.3), 0.3);
}

#[test]
fn report_percentages() {
    let all = BorderFlags {
        left: true,
        right: true,
        top: true,
        bottom: true,
        all: true,
    };
    let left_only = BorderFlags {
        left: true,
        right: false,
        top: false,
        bottom: false,
        all: false,
    };
    let none = BorderFlags {
        left: false,
        ..left_only
    };
    let r = batch_report(&[all, left_only, none, none]).unwrap();
    assert_eq!(
        (r.images, r.empty_l, r.empty_r, r.empty_a),
        (4, 50.0, 25.0, 25.0)
    );
    assert!(batch_report(&[]).is_err());
}

fn image_from(h: usize, w: usize, bits: &[bool]) -> RgbImage {
    RgbImage::from_fn(h, w, |y, x| {
        if bits[(y * w + x) % bits.len()] {
            [1.0; 3]
        } else {
            [0.9, 0.95, 0.3]
        }
    })
}

proptest! {
    #[test]
    fn flips_swap_sides(h in 9usize..24, w in 9usize..24, bits in prop::collection::vec(prop::bool::weighted(0.97), 1..600)) {
        let img = image_from(h, w, &bits);
        let f = flags(&img);
        prop_assert_eq!(flags(&img.flip_horizontal()), f.swap_left_right());
        prop_assert_eq!(flags(&img.flip_vertical()), f.swap_top_bottom());
    }

    #[test]
    fn all_implies_each_side(batch in prop::collection::vec(prop::collection::vec(prop::bool::weighted(0.98), 1..300), 1..12)) {
        let fl: Vec<BorderFlags> = batch.iter().map(|b| flags(&image_from(12, 12, b))).collect();
        for f in &fl {
            prop_assert_eq!(f.all, f.left && f.right && f.top && f.bottom);
        }
        let r = batch_report(&fl).unwrap();
        let min = r.empty_l.min(r.empty_r).min(r.empty_t).min(r.empty_b);
        prop_assert!(r.empty_a <= min);
    }
}
