//! Fixed blue→yellow colormap (33 control points, cividis).

use std::sync::OnceLock;

pub const CONTROL_POINTS: [[u8; 3]; 33] = [
    [0, 34, 78],
    [0, 40, 91],
    [0, 46, 106],
    [5, 51, 113],
    [26, 56, 111],
    [39, 62, 110],
    [50, 67, 109],
    [59, 73, 108],
    [67, 78, 108],
    [75, 84, 108],
    [83, 90, 109],
    [90, 95, 110],
    [97, 101, 111],
    [104, 106, 113],
    [111, 112, 115],
    [118, 118, 118],
    [125, 124, 120],
    [132, 130, 121],
    [140, 136, 120],
    [147, 142, 120],
    [155, 148, 118],
    [163, 154, 116],
    [171, 160, 114],
    [180, 167, 111],
    [188, 174, 108],
    [196, 180, 104],
    [205, 187, 99],
    [213, 194, 94],
    [222, 201, 88],
    [231, 209, 80],
    [240, 216, 70],
    [249, 224, 58],
    [254, 232, 56],
];

/// Maps `v ∈ [0, 1]` (clamped) to RGB by linear interpolation between
/// control points.
pub fn color(v: f64) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let pos = v * (CONTROL_POINTS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(CONTROL_POINTS.len() - 2);
    let frac = pos - i as f64;
    let (a, b) = (CONTROL_POINTS[i], CONTROL_POINTS[i + 1]);
    std::array::from_fn(|c| (a[c] as f64 + frac * (b[c] as f64 - a[c] as f64)).round() as u8)
}

const INVERSE_STEPS: usize = 1024;

fn inverse_table() -> &'static [[u8; 3]] {
    static TABLE: OnceLock<Vec<[u8; 3]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..INVERSE_STEPS)
            .map(|i| color(i as f64 / (INVERSE_STEPS - 1) as f64))
            .collect()
    })
}

/// Nearest-color inverse of [`color`]; lowest value wins ties.
pub fn value_of(rgb: [u8; 3]) -> f64 {
    let dist = |c: &[u8; 3]| -> i32 {
        (0..3)
            .map(|k| {
                let d = c[k] as i32 - rgb[k] as i32;
                d * d
            })
            .sum()
    };
    let table = inverse_table();
    let (best, _) = table
        .iter()
        .enumerate()
        .fold((0, i32::MAX), |(bi, bd), (i, c)| {
            let d = dist(c);
            if d < bd {
                (i, d)
            } else {
                (bi, bd)
            }
        });
    best as f64 / (INVERSE_STEPS - 1) as f64
}
