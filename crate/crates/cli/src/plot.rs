use image::{Rgb, RgbImage};
use kronband::matrix::Mat;

const TARGET_PX: usize = 240;

/// Blue (−1) through white (0) to red (+1).
fn diverging(t: f64) -> Rgb<u8> {
    let t = t.clamp(-1.0, 1.0);
    let fade = |c: f64| (255.0 * (1.0 - t.abs()) + c * t.abs()).round() as u8;
    if t >= 0.0 {
        Rgb([fade(178.0), fade(24.0), fade(43.0)])
    } else {
        Rgb([fade(33.0), fade(102.0), fade(172.0)])
    }
}

/// Heatmap of `m / max|m|`; every entry is a square block of pixels, so the
/// image side is a multiple of the matrix side.
pub fn heatmap(m: &Mat) -> RgbImage {
    let (r, c) = (m.nrows().max(1), m.ncols().max(1));
    let cell = (TARGET_PX / r.max(c)).max(1);
    let scale = m.amax();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    RgbImage::from_fn((c * cell) as u32, (r * cell) as u32, |x, y| {
        let (i, j) = (y as usize / cell, x as usize / cell);
        diverging(m[(i, j)] / scale)
    })
}

const PALETTE: [[u8; 3]; 7] = [
    [68, 119, 170],
    [102, 204, 238],
    [34, 136, 51],
    [204, 187, 68],
    [238, 102, 119],
    [170, 51, 119],
    [187, 187, 187],
];

/// Bars of `(mean, se)` in order, with a black whisker of one standard
/// error above and below each bar top.
pub fn bar_chart(bars: &[(f64, f64)]) -> RgbImage {
    let (w, h, bar_w, gap, pad) = (40 + 60 * bars.len() as u32, 300u32, 40u32, 20u32, 20u32);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let top = bars.iter().map(|(m, s)| m + s).fold(0.0f64, f64::max);
    let top = if top > 0.0 { top } else { 1.0 };
    let usable = (h - 2 * pad) as f64;
    let y_of = |v: f64| h - pad - ((v.max(0.0) / top) * usable).round() as u32;
    for x in pad..w - pad {
        img.put_pixel(x, h - pad, Rgb([0, 0, 0]));
    }
    for (i, &(mean, se)) in bars.iter().enumerate() {
        let x0 = pad + gap / 2 + i as u32 * (bar_w + gap);
        let color = Rgb(PALETTE[i % PALETTE.len()]);
        for y in y_of(mean)..h - pad {
            for x in x0..x0 + bar_w {
                img.put_pixel(x, y, color);
            }
        }
        let (lo, hi) = (y_of(mean - se), y_of(mean + se));
        let mid = x0 + bar_w / 2;
        for y in hi..=lo.min(h - pad) {
            img.put_pixel(mid, y, Rgb([0, 0, 0]));
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_blocks_cover_the_image() {
        let m = Mat::from_fn(3, 3, |i, j| i as f64 - j as f64);
        let img = heatmap(&m);
        assert_eq!(img.width(), 240);
        assert_eq!(img.height(), 240);
        assert_eq!(*img.get_pixel(0, 239), diverging(1.0));
        assert_eq!(*img.get_pixel(0, 0), Rgb([255, 255, 255]));
    }

    #[test]
    fn zero_matrix_is_white() {
        let img = heatmap(&Mat::zeros(2, 2));
        assert!(img.pixels().all(|p| *p == Rgb([255, 255, 255])));
    }
}
