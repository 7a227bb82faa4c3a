//! Analytic box metrics checked against brute-force rasterization.

use fovlink_core::geometry::{
    canonicalize_bbox, intersection_area, iou, overlap_recall, overlaps, NormalizedBBox,
};
use proptest::prelude::*;

const GRID: usize = 1000;
const WORDS: usize = GRID.div_ceil(64);

/// Column mask of the cells whose centres fall inside `[lo, hi]`.
fn span_mask(lo: f64, hi: f64) -> [u64; WORDS] {
    let mut mask = [0u64; WORDS];
    for i in 0..GRID {
        let c = (i as f64 + 0.5) / GRID as f64;
        if lo <= c && c <= hi {
            mask[i / 64] |= 1 << (i % 64);
        }
    }
    mask
}

/// Cell counts (gt, gen, both) over a GRID x GRID raster, sampled at cell
/// centres.
fn raster_counts(a: &NormalizedBBox, b: &NormalizedBBox) -> (u64, u64, u64) {
    let (ma, mb) = (span_mask(a.x(), a.x2()), span_mask(b.x(), b.x2()));
    let (mut na, mut nb, mut both) = (0, 0, 0);
    for j in 0..GRID {
        let c = (j as f64 + 0.5) / GRID as f64;
        let in_a = a.y() <= c && c <= a.y2();
        let in_b = b.y() <= c && c <= b.y2();
        for w in 0..WORDS {
            let row_a = if in_a { ma[w] } else { 0 };
            let row_b = if in_b { mb[w] } else { 0 };
            na += u64::from(row_a.count_ones());
            nb += u64::from(row_b.count_ones());
            both += u64::from((row_a & row_b).count_ones());
        }
    }
    (na, nb, both)
}

fn cell_area(n: u64) -> f64 {
    n as f64 / (GRID * GRID) as f64
}

fn bx(x: f64, y: f64, x2: f64, y2: f64) -> NormalizedBBox {
    NormalizedBBox::new(x, y, x2, y2).unwrap()
}

/// Boxes with corners on the raster's cell edges, so the raster is exact.
fn grid_box() -> impl Strategy<Value = NormalizedBBox> {
    (0..GRID, 0..GRID, 1..=GRID, 1..=GRID).prop_map(|(a, b, w, h)| {
        let x = a.min(GRID - 1);
        let y = b.min(GRID - 1);
        let x2 = (x + w).min(GRID);
        let y2 = (y + h).min(GRID);
        let g = GRID as f64;
        bx(x as f64 / g, y as f64 / g, x2 as f64 / g, y2 as f64 / g)
    })
}

fn any_box() -> impl Strategy<Value = NormalizedBBox> {
    (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64)
        .prop_map(|(a, b, c, d)| bx(a.min(c), b.min(d), a.max(c), b.max(d)))
}

#[test]
fn hand_examples_match_raster() {
    let gt = bx(0.2, 0.2, 0.6, 0.6);
    let gen = bx(0.4, 0.4, 0.8, 0.8);
    let (na, nb, both) = raster_counts(&gt, &gen);
    assert_eq!(both, 200 * 200);
    assert!((overlap_recall(&gt, &gen).unwrap() - 0.25).abs() < 1e-12);
    assert!((iou(&gt, &gen).unwrap() - both as f64 / (na + nb - both) as f64).abs() < 1e-12);
    assert!((iou(&gt, &gen).unwrap() - 1.0 / 7.0).abs() < 1e-12);

    // Intersection 0.1 x 0.3 of a 0.2 x 0.4 gt and an equal-sized gen box.
    let gt = bx(0.4, 0.4, 0.6, 0.8);
    let gen = bx(0.5, 0.5, 0.7, 0.9);
    let (na, nb, both) = raster_counts(&gt, &gen);
    assert_eq!((na, nb, both), (80_000, 80_000, 30_000));
    assert_eq!(both as f64 / na as f64, 0.375);
    assert!((both as f64 / (na + nb - both) as f64 - 3.0 / 13.0).abs() < 1e-15);

    // Full-frame reply: recall 1, IoU equal to the gt area.
    let small = bx(0.45, 0.33, 0.53, 0.70);
    assert_eq!(
        overlap_recall(&small, &NormalizedBBox::FULL_FRAME).unwrap(),
        1.0
    );
    assert!((iou(&small, &NormalizedBBox::FULL_FRAME).unwrap() - small.area()).abs() < 1e-12);
}

#[test]
fn edge_contact_is_not_overlap() {
    let a = bx(0.0, 0.0, 0.5, 0.5);
    let b = bx(0.5, 0.0, 1.0, 0.5);
    let (_, _, both) = raster_counts(&a, &b);
    assert_eq!(both, 0);
    assert!(!overlaps(&a, &b));
    assert_eq!(iou(&a, &b).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn grid_aligned_pairs_match_raster(gt in grid_box(), gen in grid_box()) {
        let (na, nb, both) = raster_counts(&gt, &gen);
        prop_assert!((intersection_area(&gt, &gen) - cell_area(both)).abs() < 1e-9);
        prop_assert!((overlap_recall(&gt, &gen).unwrap() - both as f64 / na as f64).abs() < 1e-9);
        prop_assert!((iou(&gt, &gen).unwrap() - both as f64 / (na + nb - both) as f64).abs() < 1e-9);
        prop_assert_eq!(overlaps(&gt, &gen), both > 0);
    }

    #[test]
    fn continuous_intersection_within_one_cell_row(a in any_box(), b in any_box()) {
        let (_, _, both) = raster_counts(&a, &b);
        prop_assert!((intersection_area(&a, &b) - cell_area(both)).abs() <= 2e-3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn metric_invariants(gt in any_box(), gen in any_box()) {
        prop_assume!(!gt.is_degenerate());
        let r = overlap_recall(&gt, &gen).unwrap();
        let i = iou(&gt, &gen).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((0.0..=1.0).contains(&i));
        prop_assert!(i <= r);
        prop_assert_eq!(overlaps(&gt, &gen), intersection_area(&gt, &gen) > 0.0);
        if !gen.is_degenerate() {
            prop_assert!((iou(&gen, &gt).unwrap() - i).abs() < 1e-12);
        }
    }

    #[test]
    fn canonicalize_orders_and_clamps(a in -0.5..1.5f64, b in -0.5..1.5f64, c in -0.5..1.5f64, d in -0.5..1.5f64) {
        let cb = canonicalize_bbox((a, b), (c, d)).unwrap();
        let [x, y, x2, y2] = cb.bbox.as_array();
        prop_assert!(0.0 <= x && x <= x2 && x2 <= 1.0);
        prop_assert!(0.0 <= y && y <= y2 && y2 <= 1.0);
        let outside = [a, b, c, d].iter().any(|v| !(0.0..=1.0).contains(v));
        prop_assert_eq!(cb.clamped, outside);
        prop_assert_eq!(cb.degenerate, x == x2 || y == y2);
        prop_assert_eq!(canonicalize_bbox((c, d), (a, b)).unwrap(), cb);
    }
}
