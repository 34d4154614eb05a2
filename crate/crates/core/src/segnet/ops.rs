//! Forward/backward primitives: 3x3 conv (zero pad 1), 1x1 conv, ReLU,
//! 2x2 max pool, and nearest 2x upsampling.

use super::tensor::Tensor;

/// x-ranges so that `out[x] += w * in[x + kx - 1]` stays in bounds.
#[inline]
fn shifted_ranges(kx: usize, w: usize) -> (usize, usize, usize) {
    // returns (out_start, out_end, in_start)
    match kx {
        0 => (1, w, 0),
        1 => (0, w, 0),
        _ => (0, w - 1, 1),
    }
}

pub fn conv3x3_forward(inp: &Tensor, weights: &[f32], bias: &[f32], cout: usize) -> Tensor {
    let (cin, h, w) = (inp.c, inp.h, inp.w);
    let mut out = Tensor::zeros(cout, h, w);
    for co in 0..cout {
        out.plane_mut(co).fill(bias[co]);
    }
    for co in 0..cout {
        for ci in 0..cin {
            let w9 = &weights[(co * cin + ci) * 9..(co * cin + ci) * 9 + 9];
            let hw = h * w;
            let (in_plane, out_plane) = (
                &inp.data[ci * hw..(ci + 1) * hw],
                &mut out.data[co * hw..(co + 1) * hw],
            );
            for y in 0..h {
                for ky in 0..3usize {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    let sy = sy - 1;
                    for kx in 0..3usize {
                        let wv = w9[ky * 3 + kx];
                        let (os, oe, is) = shifted_ranges(kx, w);
                        let in_row = &in_plane[sy * w + is..sy * w + is + (oe - os)];
                        let out_row = &mut out_plane[y * w + os..y * w + oe];
                        for (o, i) in out_row.iter_mut().zip(in_row) {
                            *o += wv * i;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input gradients and parameter gradients for a 3x3 conv.
pub fn conv3x3_backward(
    inp: &Tensor,
    dout: &Tensor,
    weights: &[f32],
    dinp: &mut Tensor,
    dweights: &mut [f32],
    dbias: &mut [f32],
) {
    let (cin, h, w) = (inp.c, inp.h, inp.w);
    let cout = dout.c;
    for co in 0..cout {
        dbias[co] += dout.plane(co).iter().sum::<f32>();
    }
    for co in 0..cout {
        let hw = h * w;
        let dout_plane = &dout.data[co * hw..(co + 1) * hw];
        for ci in 0..cin {
            let base = (co * cin + ci) * 9;
            let in_plane = &inp.data[ci * hw..(ci + 1) * hw];
            let din_plane = &mut dinp.data[ci * hw..(ci + 1) * hw];
            let w9 = &weights[base..base + 9];
            for y in 0..h {
                for ky in 0..3usize {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    let sy = sy - 1;
                    for kx in 0..3usize {
                        let (os, oe, is) = shifted_ranges(kx, w);
                        let n = oe - os;
                        let dout_row = &dout_plane[y * w + os..y * w + oe];
                        // dW: dot of dout row with shifted input row
                        let in_row = &in_plane[sy * w + is..sy * w + is + n];
                        let mut acc = 0.0f32;
                        for (d, i) in dout_row.iter().zip(in_row) {
                            acc += d * i;
                        }
                        dweights[base + ky * 3 + kx] += acc;
                        // dIn: scatter dout back through the same shift
                        let wv = w9[ky * 3 + kx];
                        let din_row = &mut din_plane[sy * w + is..sy * w + is + n];
                        for (di, d) in din_row.iter_mut().zip(dout_row) {
                            *di += wv * d;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv1x1_forward(inp: &Tensor, weights: &[f32], bias: &[f32], cout: usize) -> Tensor {
    let (cin, h, w) = (inp.c, inp.h, inp.w);
    let mut out = Tensor::zeros(cout, h, w);
    for co in 0..cout {
        out.plane_mut(co).fill(bias[co]);
    }
    for co in 0..cout {
        for ci in 0..cin {
            let wv = weights[co * cin + ci];
            let hw = h * w;
            let in_plane = &inp.data[ci * hw..(ci + 1) * hw];
            let out_plane = &mut out.data[co * hw..(co + 1) * hw];
            for (o, i) in out_plane.iter_mut().zip(in_plane) {
                *o += wv * i;
            }
        }
    }
    out
}

pub fn conv1x1_backward(
    inp: &Tensor,
    dout: &Tensor,
    weights: &[f32],
    dinp: &mut Tensor,
    dweights: &mut [f32],
    dbias: &mut [f32],
) {
    let (cin, h, w) = (inp.c, inp.h, inp.w);
    let cout = dout.c;
    let hw = h * w;
    for co in 0..cout {
        dbias[co] += dout.plane(co).iter().sum::<f32>();
        let dout_plane = &dout.data[co * hw..(co + 1) * hw];
        for ci in 0..cin {
            let in_plane = &inp.data[ci * hw..(ci + 1) * hw];
            let mut acc = 0.0f32;
            for (d, i) in dout_plane.iter().zip(in_plane) {
                acc += d * i;
            }
            dweights[co * cin + ci] += acc;
            let wv = weights[co * cin + ci];
            let din_plane = &mut dinp.data[ci * hw..(ci + 1) * hw];
            for (di, d) in din_plane.iter_mut().zip(dout_plane) {
                *di += wv * d;
            }
        }
    }
}

pub fn relu_inplace(t: &mut Tensor) {
    for v in t.data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient where the forward output was clamped.
pub fn relu_backward_inplace(out: &Tensor, dout: &mut Tensor) {
    for (d, o) in dout.data.iter_mut().zip(&out.data) {
        if *o <= 0.0 {
            *d = 0.0;
        }
    }
}

/// 2x2 max pool, stride 2. Returns the pooled tensor and per-cell argmax
/// index (0..4, row-major within the window) for the backward pass.
pub fn maxpool2_forward(inp: &Tensor) -> (Tensor, Vec<u8>) {
    let (c, h, w) = (inp.c, inp.h, inp.w);
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(c, oh, ow);
    let mut argmax = vec![0u8; c * oh * ow];
    for ch in 0..c {
        let in_plane = inp.plane(ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_i = 0u8;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let v = in_plane[(oy * 2 + dy) * w + ox * 2 + dx];
                        if v > best {
                            best = v;
                            best_i = (dy * 2 + dx) as u8;
                        }
                    }
                }
                out.data[(ch * oh + oy) * ow + ox] = best;
                argmax[(ch * oh + oy) * ow + ox] = best_i;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2_backward(dout: &Tensor, argmax: &[u8], in_h: usize, in_w: usize) -> Tensor {
    let (c, oh, ow) = (dout.c, dout.h, dout.w);
    let mut dinp = Tensor::zeros(c, in_h, in_w);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let i = (ch * oh + oy) * ow + ox;
                let a = argmax[i] as usize;
                let (dy, dx) = (a / 2, a % 2);
                dinp.data[(ch * in_h + oy * 2 + dy) * in_w + ox * 2 + dx] += dout.data[i];
            }
        }
    }
    dinp
}

pub fn upsample2_forward(inp: &Tensor) -> Tensor {
    let (c, h, w) = (inp.c, inp.h, inp.w);
    let mut out = Tensor::zeros(c, h * 2, w * 2);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = inp.data[(ch * h + y) * w + x];
                for dy in 0..2 {
                    let row = (ch * h * 2 + y * 2 + dy) * w * 2 + x * 2;
                    out.data[row] = v;
                    out.data[row + 1] = v;
                }
            }
        }
    }
    out
}

pub fn upsample2_backward(dout: &Tensor) -> Tensor {
    let (c, oh, ow) = (dout.c, dout.h, dout.w);
    let (h, w) = (oh / 2, ow / 2);
    let mut dinp = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in 0..2 {
                    let row = (ch * oh + y * 2 + dy) * ow + x * 2;
                    acc += dout.data[row] + dout.data[row + 1];
                }
                dinp.data[(ch * h + y) * w + x] = acc;
            }
        }
    }
    dinp
}

pub fn add_inplace(dst: &mut Tensor, src: &Tensor) {
    debug_assert_eq!(dst.data.len(), src.data.len());
    for (d, s) in dst.data.iter_mut().zip(&src.data) {
        *d += s;
    }
}
