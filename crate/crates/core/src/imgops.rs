//! Resize and color primitives used by augmentation and inference.

use ndarray::{Array2, Array3};

use crate::data::mask::{LabelMask, IGNORE};
use crate::error::Result;

/// Bilinear resize of an H x W x C float image. Identity when dimensions match.
pub fn resize_bilinear(src: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (h, w, c) = src.dim();
    if h == out_h && w == out_w {
        return src.clone();
    }
    let mut out = Array3::zeros((out_h, out_w, c));
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    for oy in 0..out_h {
        // align pixel centers
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            for ch in 0..c {
                let v00 = src[(y0, x0, ch)];
                let v01 = src[(y0, x1, ch)];
                let v10 = src[(y1, x0, ch)];
                let v11 = src[(y1, x1, ch)];
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                out[(oy, ox, ch)] = top + (bot - top) * wy;
            }
        }
    }
    out
}

/// Nearest-neighbor resize for label maps. Identity when dimensions match.
pub fn resize_nearest(src: &Array2<u8>, out_h: usize, out_w: usize) -> Array2<u8> {
    let (h, w) = src.dim();
    if h == out_h && w == out_w {
        return src.clone();
    }
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let y = (((oy as f32 + 0.5) * sy - 0.5).round().max(0.0) as usize).min(h - 1);
        let x = (((ox as f32 + 0.5) * sx - 0.5).round().max(0.0) as usize).min(w - 1);
        src[(y, x)]
    })
}

/// Nearest-neighbor resize of a mask, preserving `num_classes`.
pub fn resize_mask_nearest(mask: &LabelMask, out_h: usize, out_w: usize) -> Result<LabelMask> {
    LabelMask::new(
        resize_nearest(mask.labels(), out_h, out_w),
        mask.num_classes(),
    )
}

/// Crops `size` pixels at `(top, left)`, padding with black pixels / IGNORE
/// labels where the window exceeds the source.
pub fn crop_pair(
    image: &Array3<f32>,
    labels: &Array2<u8>,
    top: i64,
    left: i64,
    out_h: usize,
    out_w: usize,
) -> (Array3<f32>, Array2<u8>) {
    let (h, w, c) = image.dim();
    let mut out_img = Array3::zeros((out_h, out_w, c));
    let mut out_lab = Array2::from_elem((out_h, out_w), IGNORE);
    for oy in 0..out_h {
        let sy = top + oy as i64;
        if sy < 0 || sy >= h as i64 {
            continue;
        }
        for ox in 0..out_w {
            let sx = left + ox as i64;
            if sx < 0 || sx >= w as i64 {
                continue;
            }
            for ch in 0..c {
                out_img[(oy, ox, ch)] = image[(sy as usize, sx as usize, ch)];
            }
            out_lab[(oy, ox)] = labels[(sy as usize, sx as usize)];
        }
    }
    (out_img, out_lab)
}

/// Replicate-pads an image on the bottom/right to the given dimensions.
pub fn pad_replicate(src: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (h, w, c) = src.dim();
    debug_assert!(out_h >= h && out_w >= w);
    if out_h == h && out_w == w {
        return src.clone();
    }
    Array3::from_shape_fn((out_h, out_w, c), |(y, x, ch)| {
        src[(y.min(h - 1), x.min(w - 1), ch)]
    })
}

/// Chroma (max - min over channels) of one pixel; zero for achromatic pixels.
pub fn chroma(r: f32, g: f32, b: f32) -> f32 {
    let mx = r.max(g).max(b);
    let mn = r.min(g).min(b);
    mx - mn
}

/// Hue angle in degrees [0, 360) for a chromatic pixel.
pub fn hue_degrees(r: f32, g: f32, b: f32) -> f32 {
    let mx = r.max(g).max(b);
    let mn = r.min(g).min(b);
    let c = mx - mn;
    if c <= 0.0 {
        return 0.0;
    }
    let h = if (mx - r).abs() < f32::EPSILON * 4.0 && r >= g.max(b) {
        ((g - b) / c).rem_euclid(6.0)
    } else if g >= b.max(r) {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    (h * 60.0).rem_euclid(360.0)
}

/// RGB for a fully saturated hue with the given value.
pub fn hue_to_rgb(hue_deg: f32, saturation: f32, value: f32) -> [f32; 3] {
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    let c = saturation * value;
    let x = c * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = value - c;
    [r + m, g + m, b + m]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_bit_exact() {
        let src = Array3::from_shape_fn((5, 7, 3), |(y, x, c)| (y * 100 + x * 10 + c) as f32);
        let out = resize_bilinear(&src, 5, 7);
        assert_eq!(out, src);
    }

    #[test]
    fn nearest_resize_preserves_label_set() {
        let src = Array2::from_shape_fn((4, 4), |(y, x)| ((y * 4 + x) % 3) as u8);
        let out = resize_nearest(&src, 8, 8);
        assert!(out.iter().all(|&v| v < 3));
    }

    #[test]
    fn crop_pads_with_ignore() {
        let img = Array3::from_elem((4, 4, 3), 0.5f32);
        let lab = Array2::zeros((4, 4));
        let (ci, cl) = crop_pair(&img, &lab, -2, -2, 6, 6);
        assert_eq!(ci.dim(), (6, 6, 3));
        assert_eq!(cl[(0, 0)], IGNORE);
        assert_eq!(cl[(2, 2)], 0);
        assert_eq!(ci[(0, 0, 0)], 0.0);
        assert_eq!(ci[(2, 2, 0)], 0.5);
    }

    #[test]
    fn hue_round_trip() {
        for deg in [0.0f32, 45.0, 120.0, 200.0, 300.0] {
            let [r, g, b] = hue_to_rgb(deg, 1.0, 1.0);
            let back = hue_degrees(r, g, b);
            assert!(
                (back - deg).abs() < 0.5 || (back - deg).abs() > 359.5,
                "hue {deg} -> {back}"
            );
        }
    }

    #[test]
    fn achromatic_pixel_has_zero_chroma() {
        assert_eq!(chroma(0.4, 0.4, 0.4), 0.0);
        assert!(chroma(0.9, 0.1, 0.1) > 0.7);
    }

    #[test]
    fn upscale_2x_quadruples_constant_block_half_max_area() {
        // a centered 2x2 block of ones scaled 2x covers ~4x the pixels at
        // half-maximum (bilinear feathers the rim)
        let mut src = Array3::zeros((8, 8, 1));
        for y in 3..5 {
            for x in 3..5 {
                src[(y, x, 0)] = 1.0;
            }
        }
        let out = resize_bilinear(&src, 16, 16);
        let count = out.iter().filter(|&&v| v > 0.49).count();
        assert!((12..=20).contains(&count), "count {count}");
        // mass is conserved up to the rim
        let mass: f32 = out.iter().sum();
        assert!((mass / 4.0 - 4.0).abs() < 1.0, "mass {mass}");
    }
}
