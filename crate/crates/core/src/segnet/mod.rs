//! Small fully-convolutional encoder-decoder segmenter with hand-written
//! backprop, trained on CPU.
//!
//! Layout (F = base channels, K = classes, input H and W divisible by 4):
//!
//! ```text
//! e1 = relu(conv3 3->F)            @ HxW
//! e2 = relu(conv3 F->F)            @ HxW
//! e3 = relu(conv3 F->2F)(pool e2)  @ H/2
//! b  = relu(conv3 2F->2F)(pool e3) @ H/4
//! d1 = relu(conv3 2F->2F)(up b)  + e3   @ H/2
//! d2 = relu(conv3 2F->F)(up d1)  + e2   @ HxW
//! logits = conv1 F->K (d2)         @ HxW
//! ```

pub mod ops;
pub mod tensor;

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::IGNORE;
use crate::error::{Error, Result};
use crate::rng::{self, tags};
use ops::*;
use tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub num_classes: usize,
}

impl NetConfig {
    pub fn new(base_channels: usize, num_classes: usize) -> Self {
        Self {
            in_channels: 3,
            base_channels,
            num_classes,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSpec {
    cin: usize,
    cout: usize,
    ksize: usize,
    w_off: usize,
    b_off: usize,
}

impl LayerSpec {
    fn w_len(&self) -> usize {
        self.cout * self.cin * self.ksize * self.ksize
    }
}

fn layer_specs(cfg: &NetConfig) -> ([LayerSpec; 7], usize) {
    let f = cfg.base_channels;
    let dims = [
        (cfg.in_channels, f, 3usize),
        (f, f, 3),
        (f, 2 * f, 3),
        (2 * f, 2 * f, 3),
        (2 * f, 2 * f, 3),
        (2 * f, f, 3),
        (f, cfg.num_classes, 1),
    ];
    let mut specs = [LayerSpec {
        cin: 0,
        cout: 0,
        ksize: 0,
        w_off: 0,
        b_off: 0,
    }; 7];
    let mut off = 0;
    for (i, (cin, cout, k)) in dims.into_iter().enumerate() {
        let w_len = cout * cin * k * k;
        specs[i] = LayerSpec {
            cin,
            cout,
            ksize: k,
            w_off: off,
            b_off: off + w_len,
        };
        off += w_len + cout;
    }
    (specs, off)
}

/// The segmentation network: config plus one flat parameter vector.
#[derive(Debug, Clone)]
pub struct SegNet {
    cfg: NetConfig,
    params: Vec<f32>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    x: Tensor,
    e1: Tensor,
    e2: Tensor,
    p1: Tensor,
    arg1: Vec<u8>,
    e3: Tensor,
    p2: Tensor,
    arg2: Vec<u8>,
    b: Tensor,
    u1: Tensor,
    d1: Tensor,
    u2: Tensor,
    d2: Tensor,
}

impl SegNet {
    /// He-normal initialization, deterministic in `seed`.
    pub fn init(cfg: NetConfig, seed: u64) -> Self {
        let (specs, len) = layer_specs(&cfg);
        let mut params = vec![0.0f32; len];
        for (li, spec) in specs.iter().enumerate() {
            let fan_in = (spec.cin * spec.ksize * spec.ksize) as f32;
            let std = (2.0 / fan_in).sqrt();
            let normal = Normal::new(0.0f32, std).expect("valid std");
            let mut rng = rng::stream(seed, tags::WEIGHT_INIT, &[li as u64]);
            for i in 0..spec.w_len() {
                params[spec.w_off + i] = normal.sample(&mut rng);
            }
            // biases stay zero
        }
        Self { cfg, params }
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn layer<'a>(&'a self, idx: usize) -> (&'a [f32], &'a [f32], LayerSpec) {
        let (specs, _) = layer_specs(&self.cfg);
        let s = specs[idx];
        (
            &self.params[s.w_off..s.w_off + s.w_len()],
            &self.params[s.b_off..s.b_off + s.cout],
            s,
        )
    }

    /// Forward pass; input must be CHW with H, W divisible by 4.
    pub fn forward(&self, x: Tensor) -> (Tensor, ForwardCache) {
        debug_assert!(x.h % 4 == 0 && x.w % 4 == 0, "input dims must be /4");
        let (w1, b1, s1) = self.layer(0);
        let mut e1 = conv3x3_forward(&x, w1, b1, s1.cout);
        relu_inplace(&mut e1);

        let (w2, b2, s2) = self.layer(1);
        let mut e2 = conv3x3_forward(&e1, w2, b2, s2.cout);
        relu_inplace(&mut e2);

        let (p1, arg1) = maxpool2_forward(&e2);

        let (w3, b3, s3) = self.layer(2);
        let mut e3 = conv3x3_forward(&p1, w3, b3, s3.cout);
        relu_inplace(&mut e3);

        let (p2, arg2) = maxpool2_forward(&e3);

        let (w4, b4, s4) = self.layer(3);
        let mut b = conv3x3_forward(&p2, w4, b4, s4.cout);
        relu_inplace(&mut b);

        let u1 = upsample2_forward(&b);
        let (w5, b5, s5) = self.layer(4);
        let mut d1 = conv3x3_forward(&u1, w5, b5, s5.cout);
        add_inplace(&mut d1, &e3);
        relu_inplace(&mut d1);

        let u2 = upsample2_forward(&d1);
        let (w6, b6, s6) = self.layer(5);
        let mut d2 = conv3x3_forward(&u2, w6, b6, s6.cout);
        add_inplace(&mut d2, &e2);
        relu_inplace(&mut d2);

        let (wh, bh, sh) = self.layer(6);
        let logits = conv1x1_forward(&d2, wh, bh, sh.cout);

        let cache = ForwardCache {
            x,
            e1,
            e2,
            p1,
            arg1,
            e3,
            p2,
            arg2,
            b,
            u1,
            d1,
            u2,
            d2,
        };
        (logits, cache)
    }

    /// Backward pass from `dlogits`; returns the parameter gradient vector.
    pub fn backward(&self, cache: &ForwardCache, mut dlogits: Tensor) -> Vec<f32> {
        let mut grads = vec![0.0f32; self.params.len()];
        let (specs, _) = layer_specs(&self.cfg);
        // weights and bias of one layer are contiguous: [w | b]
        macro_rules! grad_slices {
            ($spec:expr) => {{
                let s: LayerSpec = $spec;
                grads[s.w_off..s.b_off + s.cout].split_at_mut(s.w_len())
            }};
        }

        // head
        let (wh, _, sh) = self.layer(6);
        let mut dd2 = Tensor::zeros(cache.d2.c, cache.d2.h, cache.d2.w);
        {
            let (dw, db) = grad_slices!(sh);
            conv1x1_backward(&cache.d2, &dlogits, wh, &mut dd2, dw, db);
        }
        dlogits.data.clear();

        // d2 = relu(conv6(u2) + e2)
        relu_backward_inplace(&cache.d2, &mut dd2);
        let (w6, _, s6) = self.layer(5);
        let mut du2 = Tensor::zeros(cache.u2.c, cache.u2.h, cache.u2.w);
        {
            let (dw, db) = grad_slices!(s6);
            conv3x3_backward(&cache.u2, &dd2, w6, &mut du2, dw, db);
        }
        let de2_skip = dd2; // gradient through the additive skip

        // u2 = up(d1)
        let mut dd1 = upsample2_backward(&du2);

        // d1 = relu(conv5(u1) + e3)
        relu_backward_inplace(&cache.d1, &mut dd1);
        let (w5, _, s5) = self.layer(4);
        let mut du1 = Tensor::zeros(cache.u1.c, cache.u1.h, cache.u1.w);
        {
            let (dw, db) = grad_slices!(s5);
            conv3x3_backward(&cache.u1, &dd1, w5, &mut du1, dw, db);
        }
        let de3_skip = dd1;

        // u1 = up(b)
        let mut db_grad = upsample2_backward(&du1);

        // b = relu(conv4(p2))
        relu_backward_inplace(&cache.b, &mut db_grad);
        let (w4, _, s4) = self.layer(3);
        let mut dp2 = Tensor::zeros(cache.p2.c, cache.p2.h, cache.p2.w);
        {
            let (dw, db) = grad_slices!(s4);
            conv3x3_backward(&cache.p2, &db_grad, w4, &mut dp2, dw, db);
        }

        // p2 = pool(e3); combine with the skip path
        let mut de3 = maxpool2_backward(&dp2, &cache.arg2, cache.e3.h, cache.e3.w);
        add_inplace(&mut de3, &de3_skip);

        // e3 = relu(conv3(p1))
        relu_backward_inplace(&cache.e3, &mut de3);
        let (w3, _, s3) = self.layer(2);
        let mut dp1 = Tensor::zeros(cache.p1.c, cache.p1.h, cache.p1.w);
        {
            let (dw, db) = grad_slices!(s3);
            conv3x3_backward(&cache.p1, &de3, w3, &mut dp1, dw, db);
        }

        // p1 = pool(e2); combine with the skip path
        let mut de2 = maxpool2_backward(&dp1, &cache.arg1, cache.e2.h, cache.e2.w);
        add_inplace(&mut de2, &de2_skip);

        // e2 = relu(conv2(e1))
        relu_backward_inplace(&cache.e2, &mut de2);
        let (w2, _, s2) = self.layer(1);
        let mut de1 = Tensor::zeros(cache.e1.c, cache.e1.h, cache.e1.w);
        {
            let (dw, db) = grad_slices!(s2);
            conv3x3_backward(&cache.e1, &de2, w2, &mut de1, dw, db);
        }

        // e1 = relu(conv1(x)); input gradient is not needed
        relu_backward_inplace(&cache.e1, &mut de1);
        let (w1, _, s1) = self.layer(0);
        let mut dx = Tensor::zeros(cache.x.c, cache.x.h, cache.x.w);
        {
            let (dw, db) = grad_slices!(s1);
            conv3x3_backward(&cache.x, &de1, w1, &mut dx, dw, db);
        }
        debug_assert_eq!(specs.len(), 7);
        grads
    }
}

/// Pixel-wise softmax cross-entropy over non-IGNORE pixels.
///
/// Returns (summed loss, counted pixels, unscaled d_logits); the caller
/// divides both by the batch-wide pixel count.
pub fn softmax_ce_loss(logits: &Tensor, labels: &Array2<u8>) -> (f64, usize, Tensor) {
    let (k, h, w) = (logits.c, logits.h, logits.w);
    debug_assert_eq!(labels.dim(), (h, w));
    let mut dlogits = Tensor::zeros(k, h, w);
    let mut loss = 0.0f64;
    let mut counted = 0usize;
    let hw = h * w;
    let mut probs = vec![0.0f32; k];
    for y in 0..h {
        for x in 0..w {
            let label = labels[(y, x)];
            if label == IGNORE {
                continue;
            }
            counted += 1;
            let pix = y * w + x;
            let mut max = f32::NEG_INFINITY;
            for c in 0..k {
                max = max.max(logits.data[c * hw + pix]);
            }
            let mut sum = 0.0f32;
            for c in 0..k {
                let e = (logits.data[c * hw + pix] - max).exp();
                probs[c] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            for c in 0..k {
                probs[c] *= inv;
            }
            let l = label as usize;
            loss -= f64::from(probs[l].max(1e-30).ln());
            for c in 0..k {
                dlogits.data[c * hw + pix] = probs[c] - f32::from(u8::from(c == l));
            }
        }
    }
    (loss, counted, dlogits)
}

/// Adam with decoupled weight decay.
pub struct AdamW {
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
    beta1: f32,
    beta2: f32,
    eps: f32,
}

impl AdamW {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f32, weight_decay: f32) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * (mh / (vh.sqrt() + self.eps) + weight_decay * params[i]);
        }
    }
}

/// Reproducibility metadata attached to a trained model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config_hash: String,
    pub seed: u64,
    pub iterations: usize,
    pub num_classes: u16,
}

/// A trained segmenter: frozen weights plus metadata sufficient to reproduce
/// the training run. Prediction is a pure function of (weights, input).
#[derive(Debug, Clone)]
pub struct TrainedSegmenter {
    pub net: SegNet,
    pub meta: ModelMeta,
}

const CKPT_MAGIC: &[u8; 4] = b"SEGN";
const CKPT_VERSION: u8 = 1;

impl TrainedSegmenter {
    pub fn num_output_classes(&self) -> u16 {
        self.meta.num_classes
    }

    /// Writes `model.bin` (weights) and `meta.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bin = dir.join("model.bin");
        let mut buf = Vec::with_capacity(32 + self.net.params.len() * 4);
        buf.extend_from_slice(CKPT_MAGIC);
        buf.push(CKPT_VERSION);
        buf.extend_from_slice(&(self.net.cfg.in_channels as u32).to_le_bytes());
        buf.extend_from_slice(&(self.net.cfg.base_channels as u32).to_le_bytes());
        buf.extend_from_slice(&(self.net.cfg.num_classes as u32).to_le_bytes());
        buf.extend_from_slice(&(self.net.params.len() as u64).to_le_bytes());
        for v in &self.net.params {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&bin, e))?;

        let meta_path = dir.join("meta.json");
        let meta = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| Error::Other(format!("meta serialization: {e}")))?;
        std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let bin = dir.join("model.bin");
        let mut f = std::fs::File::open(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut header = [0u8; 25];
        f.read_exact(&mut header).map_err(|e| Error::io(&bin, e))?;
        if &header[0..4] != CKPT_MAGIC || header[4] != CKPT_VERSION {
            return Err(Error::Other(format!(
                "{} is not a supported checkpoint",
                bin.display()
            )));
        }
        let in_channels = u32::from_le_bytes(header[5..9].try_into().unwrap()) as usize;
        let base_channels = u32::from_le_bytes(header[9..13].try_into().unwrap()) as usize;
        let num_classes = u32::from_le_bytes(header[13..17].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(header[17..25].try_into().unwrap()) as usize;
        let mut body = Vec::new();
        f.read_to_end(&mut body).map_err(|e| Error::io(&bin, e))?;
        if body.len() != count * 4 {
            return Err(Error::Other(format!(
                "checkpoint body {} bytes, expected {}",
                body.len(),
                count * 4
            )));
        }
        let params: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let cfg = NetConfig {
            in_channels,
            base_channels,
            num_classes,
        };
        let (_, expected) = layer_specs(&cfg);
        if expected != params.len() {
            return Err(Error::Other(format!(
                "checkpoint has {} params, config implies {expected}",
                params.len()
            )));
        }

        let meta_path = dir.join("meta.json");
        let meta_text =
            std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: ModelMeta = serde_json::from_str(&meta_text)
            .map_err(|e| Error::Other(format!("bad meta.json: {e}")))?;
        Ok(Self {
            net: SegNet { cfg, params },
            meta,
        })
    }
}

/// He-init helper used by tests to build throwaway nets.
pub fn init_for_test(base_channels: usize, num_classes: usize, seed: u64) -> SegNet {
    SegNet::init(NetConfig::new(base_channels, num_classes), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(seed: u64, h: usize, w: usize) -> Tensor {
        let mut rng = rng::stream(seed, 99, &[]);
        let mut t = Tensor::zeros(3, h, w);
        for v in t.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        t
    }

    fn random_labels(seed: u64, h: usize, w: usize, k: u8) -> Array2<u8> {
        let mut rng = rng::stream(seed, 98, &[]);
        Array2::from_shape_fn((h, w), |_| {
            if rng.gen_bool(0.1) {
                IGNORE
            } else {
                rng.gen_range(0..k)
            }
        })
    }

    fn batch_loss(net: &SegNet, x: &Tensor, labels: &Array2<u8>) -> f64 {
        let (logits, _) = net.forward(x.clone());
        let (loss, counted, _) = softmax_ce_loss(&logits, labels);
        loss / counted as f64
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut net = init_for_test(4, 3, 7);
        let x = random_input(1, 8, 8);
        let labels = random_labels(2, 8, 8, 3);

        let (logits, cache) = net.forward(x.clone());
        let (_, counted, mut dlogits) = softmax_ce_loss(&logits, &labels);
        let scale = 1.0 / counted as f32;
        for v in dlogits.data.iter_mut() {
            *v *= scale;
        }
        let grads = net.backward(&cache, dlogits);

        // probe a deterministic spread of parameters; individual probes may
        // straddle ReLU/argmax kinks, so judge the aggregate with a small
        // outlier allowance
        let n = net.num_params();
        let eps = 2e-3f32;
        let mut fd_vec = Vec::new();
        let mut an_vec = Vec::new();
        let mut outliers = 0;
        for idx in (0..n).step_by((n / 60).max(1)) {
            let orig = net.params[idx];
            net.params[idx] = orig + eps;
            let lp = batch_loss(&net, &x, &labels);
            net.params[idx] = orig - eps;
            let lm = batch_loss(&net, &x, &labels);
            net.params[idx] = orig;
            let fd = (lp - lm) / (2.0 * f64::from(eps));
            let an = f64::from(grads[idx]);
            let denom = fd.abs().max(an.abs()).max(1e-3);
            if ((fd - an) / denom).abs() > 0.1 {
                outliers += 1;
            }
            fd_vec.push(fd);
            an_vec.push(an);
        }
        assert!(fd_vec.len() >= 50);
        let diff_norm: f64 = fd_vec
            .iter()
            .zip(&an_vec)
            .map(|(f, a)| (f - a) * (f - a))
            .sum::<f64>()
            .sqrt();
        let an_norm: f64 = an_vec.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = diff_norm / an_norm.max(1e-12);
        assert!(rel < 5e-2, "aggregate relative error {rel:.4}");
        assert!(
            outliers <= fd_vec.len() / 10,
            "{outliers}/{} probes disagree badly",
            fd_vec.len()
        );
    }

    #[test]
    fn loss_ignores_ignore_pixels() {
        let net = init_for_test(4, 3, 7);
        let x = random_input(1, 8, 8);
        let labels = random_labels(2, 8, 8, 3);
        let (logits, _) = net.forward(x.clone());
        let (loss_a, counted_a, _) = softmax_ce_loss(&logits, &labels);

        // relabel an IGNORE pixel arbitrarily in the prediction's world: the
        // loss over the same label map with IGNORE pixels left alone is equal
        let ignore_positions: Vec<(usize, usize)> = labels
            .indexed_iter()
            .filter(|(_, &v)| v == IGNORE)
            .map(|(p, _)| p)
            .collect();
        assert!(!ignore_positions.is_empty());
        // flipping logits at IGNORE pixels must not change the loss
        let mut logits_b = logits.clone();
        for &(y, x_) in &ignore_positions {
            for c in 0..logits_b.c {
                let hw = logits_b.h * logits_b.w;
                logits_b.data[c * hw + y * logits_b.w + x_] += 100.0;
            }
        }
        let (loss_b, counted_b, _) = softmax_ce_loss(&logits_b, &labels);
        assert_eq!(counted_a, counted_b);
        assert!((loss_a - loss_b).abs() < 1e-9);

        // and IGNORE pixels contribute no gradient
        let (_, _, dlogits) = softmax_ce_loss(&logits, &labels);
        for &(y, x_) in &ignore_positions {
            for c in 0..dlogits.c {
                let hw = dlogits.h * dlogits.w;
                assert_eq!(dlogits.data[c * hw + y * dlogits.w + x_], 0.0);
            }
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_for_test(6, 4, 11);
        let b = init_for_test(6, 4, 11);
        assert_eq!(a.params, b.params);
        let c = init_for_test(6, 4, 12);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = TrainedSegmenter {
            net: init_for_test(4, 5, 3),
            meta: ModelMeta {
                config_hash: "abc".into(),
                seed: 3,
                iterations: 10,
                num_classes: 5,
            },
        };
        model.save(dir.path()).unwrap();
        let back = TrainedSegmenter::load(dir.path()).unwrap();
        assert_eq!(back.net.params, model.net.params);
        assert_eq!(back.meta, model.meta);
    }

    #[test]
    fn adamw_reduces_loss_on_fixed_batch() {
        let mut net = init_for_test(4, 3, 7);
        let x = random_input(5, 8, 8);
        let labels = random_labels(6, 8, 8, 3);
        let initial = batch_loss(&net, &x, &labels);
        let mut opt = AdamW::new(net.num_params());
        for _ in 0..60 {
            let (logits, cache) = net.forward(x.clone());
            let (_, counted, mut dl) = softmax_ce_loss(&logits, &labels);
            let s = 1.0 / counted as f32;
            for v in dl.data.iter_mut() {
                *v *= s;
            }
            let grads = net.backward(&cache, dl);
            opt.step(&mut net.params, &grads, 1e-2, 1e-4);
        }
        let final_loss = batch_loss(&net, &x, &labels);
        assert!(
            final_loss < initial * 0.5,
            "loss {initial:.4} -> {final_loss:.4}"
        );
    }
}
