use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fovlink_core::perception::{parse_bbox_response, parse_response, ExpectedFormat};
use fovlink_core::stats::derive_detection_stats;
use fovlink_core::v2v::{decode_message, encode_message, Payload};
use fovlink_core::{iou, overlap_recall, ConfusionMatrix, NormalizedBBox, V2VMessage};

fn geometry(c: &mut Criterion) {
    let gt = NormalizedBBox::new(0.4479, 0.3281, 0.5312, 0.7031).unwrap();
    let gen = NormalizedBBox::new(0.42, 0.30, 0.55, 0.74).unwrap();
    c.bench_function("iou", |b| b.iter(|| iou(black_box(&gt), black_box(&gen))));
    c.bench_function("overlap_recall", |b| {
        b.iter(|| overlap_recall(black_box(&gt), black_box(&gen)))
    });
}

fn parsing(c: &mut Criterion) {
    let template = "(0.4479,0.3281), (0.5312,0.7031)";
    let prose = "Sure. The pedestrian occupies roughly (0.45, 0.33) to (0.53, 0.70) in the frame.";
    let negated = "I'm sorry, but there are no pedestrians visible in this image.";
    c.bench_function("parse_template", |b| {
        b.iter(|| parse_bbox_response(black_box(template)))
    });
    c.bench_function("parse_prose", |b| {
        b.iter(|| parse_bbox_response(black_box(prose)))
    });
    c.bench_function("parse_negated", |b| {
        b.iter(|| parse_bbox_response(black_box(negated)))
    });
    c.bench_function("parse_yes_no", |b| {
        b.iter(|| parse_response(ExpectedFormat::YesNo, black_box("Yes, one pedestrian.")))
    });
}

fn stats(c: &mut Criterion) {
    let cm = ConfusionMatrix::new(120, 6, 5, 129);
    c.bench_function("derive_detection_stats", |b| {
        b.iter(|| derive_detection_stats(black_box(&cm)))
    });
}

fn codec(c: &mut Criterion) {
    let msg = V2VMessage::new(
        "remote_a",
        "ego",
        "ego:remote_a:1",
        1_700_000_000_000,
        Payload::Response {
            presence: true,
            bbox: Some(NormalizedBBox::new(0.4479, 0.3281, 0.5312, 0.7031).unwrap()),
            description: None,
            failure_kind: None,
        },
    );
    let bytes = encode_message(&msg);
    c.bench_function("encode_message", |b| {
        b.iter(|| encode_message(black_box(&msg)))
    });
    c.bench_function("decode_message", |b| {
        b.iter(|| decode_message(black_box(&bytes)))
    });
}

criterion_group!(benches, geometry, parsing, stats, codec);
criterion_main!(benches);
