//! Threshold mask, morphology and connected-component box extraction.

use std::collections::VecDeque;

use super::{DetectorParams, Result};
use crate::spectrogram::{Grid, PixelBox};

/// Boolean raster in image orientation, `[y * width + x]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    pub fn at(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// All (erosion) or any (dilation) of the in-bounds neighbourhood. Cells
    /// outside the raster are ignored, so a block touching the border is not
    /// eroded from that side.
    fn neighbourhood(&self, radius: usize, all: bool) -> Mask {
        let (w, h) = (self.width, self.height);
        let mut cells = vec![false; w * h];
        for y in 0..h {
            let (ylo, yhi) = (y.saturating_sub(radius), (y + radius).min(h - 1));
            for x in 0..w {
                let (xlo, xhi) = (x.saturating_sub(radius), (x + radius).min(w - 1));
                let mut window = (ylo..=yhi).flat_map(|yy| (xlo..=xhi).map(move |xx| (xx, yy)));
                cells[y * w + x] = if all {
                    window.all(|(xx, yy)| self.cells[yy * w + xx])
                } else {
                    window.any(|(xx, yy)| self.cells[yy * w + xx])
                };
            }
        }
        Mask {
            width: w,
            height: h,
            cells,
        }
    }

    pub fn erode(&self, kernel: usize) -> Mask {
        self.neighbourhood(kernel / 2, true)
    }

    pub fn dilate(&self, kernel: usize) -> Mask {
        self.neighbourhood(kernel / 2, false)
    }

    /// One opening followed by one closing with a square kernel.
    pub fn open_close(&self, kernel: usize) -> Mask {
        if kernel <= 1 || self.cells.is_empty() {
            return self.clone();
        }
        self.erode(kernel)
            .dilate(kernel)
            .dilate(kernel)
            .erode(kernel)
    }
}

/// Lower of the two central order statistics.
pub(crate) fn lower_median(values: &mut [f64]) -> f64 {
    quantile(values, 0.5)
}

/// Order statistic at index `floor(q·(n−1))`.
pub(crate) fn quantile(values: &mut [f64], q: f64) -> f64 {
    let k = (q.clamp(0.0, 1.0) * (values.len() - 1) as f64).floor() as usize;
    *values.select_nth_unstable_by(k, f64::total_cmp).1
}

/// Noise floor of a resampled grid: the `quantile` of the per-row
/// (per-frequency) medians over time. Rows covered by a full-duration signal
/// sit above the noise rows, so a low quantile stays on noise even when
/// signals occupy most of the band.
pub fn grid_noise_floor(grid: &Grid, quantile_q: f64) -> f64 {
    let mut row_medians: Vec<f64> = (0..grid.height)
        .map(|y| {
            let mut row = grid.values[y * grid.width..(y + 1) * grid.width].to_vec();
            lower_median(&mut row)
        })
        .collect();
    quantile(&mut row_medians, quantile_q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// Signal boxes with scores, ordered by frequency.
    pub boxes: Vec<(PixelBox, f64)>,
    /// Mask after morphology.
    pub mask: Mask,
    pub floor_db: f64,
    pub threshold_db: f64,
}

#[derive(Debug, Clone, Copy)]
struct Component {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    cells: usize,
    excess: f64,
}

impl Component {
    fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    fn absorb(&mut self, other: &Component) {
        self.x0 = self.x0.min(other.x0);
        self.x1 = self.x1.max(other.x1);
        self.y0 = self.y0.min(other.y0);
        self.y1 = self.y1.max(other.y1);
        self.cells += other.cells;
        self.excess += other.excess;
    }
}

fn components(mask: &Mask, values: &[f64], threshold: f64) -> Vec<Component> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.cells[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut c = Component {
            x0: usize::MAX,
            x1: 0,
            y0: usize::MAX,
            y1: 0,
            cells: 0,
            excess: 0.0,
        };
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            c.x0 = c.x0.min(x);
            c.x1 = c.x1.max(x);
            c.y0 = c.y0.min(y);
            c.y1 = c.y1.max(y);
            c.cells += 1;
            c.excess += (values[i] - threshold).max(0.0);
            let mut visit = |j: usize| {
                if mask.cells[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        out.push(c);
    }
    out
}

/// Merges components whose frequency extents overlap by at least `ratio` of
/// the shorter one. Fading can split one band into several pieces in time.
fn merge_fragments(mut comps: Vec<Component>, ratio: f64) -> Vec<Component> {
    loop {
        comps.sort_by_key(|c| (c.y0, c.x0));
        let mut merged: Vec<Component> = Vec::with_capacity(comps.len());
        let mut changed = false;
        for c in comps {
            let target = merged.iter_mut().find(|m| {
                let overlap = (m.y1.min(c.y1) + 1).saturating_sub(m.y0.max(c.y0));
                overlap as f64 >= ratio * m.height().min(c.height()) as f64
            });
            match target {
                Some(m) => {
                    m.absorb(&c);
                    changed = true;
                }
                None => merged.push(c),
            }
        }
        comps = merged;
        if !changed {
            return comps;
        }
    }
}

/// Per-row median of the grid over the component's columns.
fn row_profile(c: &Component, grid: &Grid) -> Vec<f64> {
    (c.y0..=c.y1)
        .map(|y| {
            let mut row = grid.values[y * grid.width + c.x0..=y * grid.width + c.x1].to_vec();
            lower_median(&mut row)
        })
        .collect()
}

/// Splits a component at frequency valleys: rows with something at least
/// `drop_db` stronger on both sides. At high SNR the sidelobes of two
/// neighbouring bands bridge the gap between them in the mask.
fn split_bands(c: Component, grid: &Grid, drop_db: f64) -> Vec<Component> {
    let profile = row_profile(&c, grid);
    let n = profile.len();
    let mut left = vec![f64::NEG_INFINITY; n];
    let mut right = vec![f64::NEG_INFINITY; n];
    for i in 1..n {
        left[i] = left[i - 1].max(profile[i - 1]);
        right[n - 1 - i] = right[n - i].max(profile[n - i]);
    }
    let valley: Vec<bool> = (0..n).map(|i| left[i].min(right[i]) - profile[i] >= drop_db).collect();
    let mut parts = Vec::new();
    let mut i = 0;
    while i < n {
        if valley[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !valley[i] {
            i += 1;
        }
        let share = (i - start) as f64 / n as f64;
        parts.push(Component {
            y0: c.y0 + start,
            y1: c.y0 + i - 1,
            cells: ((c.cells as f64 * share).round() as usize).max(1),
            excess: c.excess * share,
            ..c
        });
    }
    parts
}

/// Narrows the frequency extent to the rows whose median over the
/// component's columns lies within `drop_db` of the strongest row. Strong
/// OFDM bands leak skirts that clear the noise threshold but not this one.
fn trim_skirts(mut c: Component, grid: &Grid, drop_db: f64) -> Component {
    let profile = row_profile(&c, grid);
    let level = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep = |v: &f64| *v >= level - drop_db;
    if let (Some(first), Some(last)) = (profile.iter().position(keep), profile.iter().rposition(keep)) {
        c.y1 = c.y0 + last;
        c.y0 += first;
    }
    c
}

/// Maps a `(excess dB)` mean to `[0, 1)`.
fn excess_score(mean_excess_db: f64) -> f64 {
    mean_excess_db / (mean_excess_db + 10.0)
}

/// Thresholds `grid` at its noise floor plus the configured offset and
/// returns the frequency-ordered boxes in `image_size` pixel space.
pub fn extract_from_grid(grid: &Grid, params: &DetectorParams, image_size: usize) -> Result<Extraction> {
    params.validate()?;
    let floor_db = grid_noise_floor(grid, params.floor_quantile);
    let threshold_db = floor_db + params.threshold_offset_db;
    let raw = Mask {
        width: grid.width,
        height: grid.height,
        cells: grid.values.iter().map(|&v| v > threshold_db).collect(),
    };
    let mask = raw.open_close(params.morphology_kernel_px);
    let comps: Vec<Component> = components(&mask, &grid.values, threshold_db)
        .into_iter()
        .filter(|c| c.cells >= params.min_box_area_px)
        .collect();
    let comps: Vec<Component> = merge_fragments(comps, params.merge_overlap)
        .into_iter()
        .flat_map(|c| split_bands(c, grid, params.edge_drop_db))
        .map(|c| trim_skirts(c, grid, params.edge_drop_db))
        .collect();
    let sx = image_size as f64 / grid.width as f64;
    let sy = image_size as f64 / grid.height as f64;
    let boxes = comps
        .iter()
        .map(|c| {
            let bbox = PixelBox::new(
                c.x0 as f64 * sx,
                c.y0 as f64 * sy,
                (c.x1 + 1) as f64 * sx,
                (c.y1 + 1) as f64 * sy,
            );
            (bbox, excess_score(c.excess / c.cells as f64))
        })
        .collect();
    Ok(Extraction {
        boxes,
        mask,
        floor_db,
        threshold_db,
    })
}
