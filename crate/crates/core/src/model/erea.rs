//! Encoder, four quadrant experts with class-activation attention, and a
//! softmax gate that mixes the experts' pulse signals.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, EXPERTS};
use crate::numerics::{Graph, ParamId, ParamStore, Rng, Tensor, Var};

/// Expert slot of each feature-map quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrant {
    TopLeft = 0,
    TopRight = 1,
    BottomLeft = 2,
    BottomRight = 3,
}

impl Quadrant {
    pub const ALL: [Quadrant; EXPERTS] = [
        Quadrant::TopLeft,
        Quadrant::TopRight,
        Quadrant::BottomLeft,
        Quadrant::BottomRight,
    ];

    /// Quadrant that a horizontal mirror maps this one onto.
    pub fn mirrored(self) -> Quadrant {
        match self {
            Quadrant::TopLeft => Quadrant::TopRight,
            Quadrant::TopRight => Quadrant::TopLeft,
            Quadrant::BottomLeft => Quadrant::BottomRight,
            Quadrant::BottomRight => Quadrant::BottomLeft,
        }
    }
}

#[derive(Debug, Clone)]
struct ConvBlock {
    weight: ParamId,
    bias: ParamId,
    pool: bool,
}

#[derive(Debug, Clone)]
pub struct ExpertHead {
    refine_weight: ParamId,
    refine_bias: ParamId,
    /// CAM weights, shape (T, C).
    cam_weights: ParamId,
    head_weight: ParamId,
    head_bias: ParamId,
}

impl ExpertHead {
    pub fn cam_weights(&self) -> ParamId {
        self.cam_weights
    }
}

#[derive(Debug, Clone)]
enum Gate {
    Linear { weight: ParamId, bias: ParamId },
    Hidden { w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId },
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ModelOutput {
    /// Aggregated pulse signal, shape (T).
    pub signal: Var,
    /// Attention maps, shape (T, 4, Hq, Wq).
    pub maps: Var,
    pub expert_signals: [Var; EXPERTS],
    /// Gate mixture weights, shape (1, 4).
    pub gate_weights: Var,
    /// Encoder output, shape (T, C, Hf, Wf).
    pub features: Var,
}

#[derive(Debug, Clone)]
pub struct Erea {
    config: ModelConfig,
    encoder: Vec<ConvBlock>,
    experts: Vec<ExpertHead>,
    gate: Gate,
}

fn uniform_init(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("init shape")
}

impl Erea {
    /// Registers freshly initialised parameters in `store`. Draw order is the
    /// registration order: encoder blocks, experts 0..4, gate.
    pub fn new(config: ModelConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut encoder = Vec::new();
        let mut cin = config.in_channels;
        let pools = config.pool_count();
        for (i, &cout) in config.encoder_channels.iter().enumerate() {
            let fan_in = cin * 9;
            let weight = store.add(format!("encoder.{i}.weight"), uniform_init(rng, &[cout, cin, 3, 3], fan_in));
            let bias = store.add(format!("encoder.{i}.bias"), uniform_init(rng, &[cout], fan_in));
            encoder.push(ConvBlock {
                weight,
                bias,
                pool: i < pools,
            });
            cin = cout;
        }
        let c = config.channels();
        let t = config.frames;
        let mut experts = Vec::new();
        for e in 0..EXPERTS {
            let refine_weight = store.add(format!("expert.{e}.refine.weight"), uniform_init(rng, &[c, c, 3, 3], c * 9));
            let refine_bias = store.add(format!("expert.{e}.refine.bias"), uniform_init(rng, &[c], c * 9));
            let cam_weights = store.add(format!("expert.{e}.cam"), uniform_init(rng, &[t, c], c));
            let head_weight = store.add(format!("expert.{e}.head.weight"), uniform_init(rng, &[c, 1], c));
            let head_bias = store.add(format!("expert.{e}.head.bias"), uniform_init(rng, &[1], c));
            experts.push(ExpertHead {
                refine_weight,
                refine_bias,
                cam_weights,
                head_weight,
                head_bias,
            });
        }
        let gate = if config.gate_hidden == 0 {
            Gate::Linear {
                weight: store.add("gate.weight", uniform_init(rng, &[c, EXPERTS], c)),
                bias: store.add("gate.bias", uniform_init(rng, &[EXPERTS], c)),
            }
        } else {
            let h = config.gate_hidden;
            Gate::Hidden {
                w1: store.add("gate.hidden.weight", uniform_init(rng, &[c, h], c)),
                b1: store.add("gate.hidden.bias", uniform_init(rng, &[h], c)),
                w2: store.add("gate.out.weight", uniform_init(rng, &[h, EXPERTS], h)),
                b2: store.add("gate.out.bias", uniform_init(rng, &[EXPERTS], h)),
            }
        };
        Ok(Erea {
            config,
            encoder,
            experts,
            gate,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn experts(&self) -> &[ExpertHead] {
        &self.experts
    }

    /// Converts `(T,H,W,C)` frames to the `(T,C,H,W)` encoder input,
    /// applying the configured input normalisation.
    pub fn prepare_input(&self, frames: &Tensor) -> Result<Tensor> {
        let cfg = &self.config;
        let expected = [cfg.frames, cfg.height, cfg.width, cfg.in_channels];
        if frames.shape() != expected {
            return Err(Error::shape(
                "encode",
                format!("frames {:?}, model expects {expected:?}", frames.shape()),
            ));
        }
        let (t, h, w, c) = (expected[0], expected[1], expected[2], expected[3]);
        let plane = h * w;
        let mut out = vec![0.0; frames.numel()];
        let src = frames.data();
        for ti in 0..t {
            for y in 0..h {
                for x in 0..w {
                    for ci in 0..c {
                        out[(ti * c + ci) * plane + y * w + x] = src[((ti * h + y) * w + x) * c + ci];
                    }
                }
            }
        }
        if cfg.input_norm {
            let per_frame = c * plane;
            for p in 0..per_frame {
                let mean = (0..t).map(|ti| out[ti * per_frame + p]).sum::<f64>() / t as f64;
                for ti in 0..t {
                    out[ti * per_frame + p] -= mean;
                }
            }
            let var = out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64;
            if var > 1e-24 {
                let inv = 1.0 / var.sqrt();
                out.iter_mut().for_each(|v| *v *= inv);
            }
        }
        Tensor::new(&[t, c, h, w], out)
    }

    /// Per-frame conv stack with weights shared across time.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for block in &self.encoder {
            let w = g.param(store, block.weight);
            let b = g.param(store, block.bias);
            h = g.conv2d(h, w, b)?;
            h = g.tanh(h)?;
            if block.pool {
                h = g.avgpool2(h)?;
            }
        }
        Ok(h)
    }

    fn expert_forward(&self, g: &mut Graph, store: &ParamStore, quadrant: Var, head: &ExpertHead) -> Result<(Var, Var)> {
        let shape = g.shape(quadrant).to_vec();
        let (t, hq, wq) = (shape[0], shape[2], shape[3]);
        let rw = g.param(store, head.refine_weight);
        let rb = g.param(store, head.refine_bias);
        let refined = g.conv2d(quadrant, rw, rb)?;
        let refined = g.tanh(refined)?;
        let cam = g.param(store, head.cam_weights);
        let maps = cam_attention(g, refined, cam)?;
        let signal = attention_pool_signal(g, store, refined, maps, head)?;
        let maps = g.reshape(maps, &[t, hq, wq])?;
        Ok((signal, maps))
    }

    fn gate_weights(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<Var> {
        let shape = g.shape(features).to_vec();
        let (t, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        let flat = g.reshape(features, &[t, c, hw])?;
        let per_frame = g.sum_axis(flat, 2)?;
        let pooled = g.sum_axis(per_frame, 0)?;
        let pooled = g.scale(pooled, 1.0 / (t * hw) as f64)?;
        let pooled = g.reshape(pooled, &[1, c])?;
        let logits = match &self.gate {
            Gate::Linear { weight, bias } => {
                let w = g.param(store, *weight);
                let b = g.param(store, *bias);
                let z = g.matmul(pooled, w)?;
                g.add_broadcast(z, b)?
            }
            Gate::Hidden { w1, b1, w2, b2 } => {
                let (w1, b1, w2, b2) = (g.param(store, *w1), g.param(store, *b1), g.param(store, *w2), g.param(store, *b2));
                let z = g.matmul(pooled, w1)?;
                let z = g.add_broadcast(z, b1)?;
                let z = g.tanh(z)?;
                let z = g.matmul(z, w2)?;
                g.add_broadcast(z, b2)?
            }
        };
        g.softmax(logits)
    }

    /// Full forward pass on `(T,H,W,C)` frames.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, frames: &Tensor) -> Result<ModelOutput> {
        let input = self.prepare_input(frames)?;
        let x = g.constant(input);
        let features = self.encode(g, store, x)?;
        let quads = split_quadrants(g, features)?;
        let mut signals = Vec::with_capacity(EXPERTS);
        let mut maps = Vec::with_capacity(EXPERTS);
        for (quad, head) in quads.iter().zip(&self.experts) {
            let (s, m) = self.expert_forward(g, store, *quad, head)?;
            signals.push(s);
            maps.push(m);
        }
        let alpha = self.gate_weights(g, store, features)?;
        let signal = gate_aggregate(g, &signals, alpha)?;
        let maps = stack_expert_maps(g, &maps)?;
        Ok(ModelOutput {
            signal,
            maps,
            expert_signals: [signals[0], signals[1], signals[2], signals[3]],
            gate_weights: alpha,
            features,
        })
    }

    /// Forward pass without gradient bookkeeping; returns the signal and the
    /// `(T,4,Hq,Wq)` attention maps.
    pub fn infer(&self, store: &ParamStore, frames: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, frames)?;
        Ok((g.value(out.signal).data().to_vec(), g.value(out.maps).clone()))
    }
}

/// Index map taking `(T,C,H,W)` to the `(T,C,H/2,W/2)` quadrant `q`.
pub fn quadrant_index(shape: &[usize], q: Quadrant) -> Vec<usize> {
    let (t, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (hh, hw) = (h / 2, w / 2);
    let (oy, ox) = match q {
        Quadrant::TopLeft => (0, 0),
        Quadrant::TopRight => (0, hw),
        Quadrant::BottomLeft => (hh, 0),
        Quadrant::BottomRight => (hh, hw),
    };
    let mut idx = Vec::with_capacity(t * c * hh * hw);
    for p in 0..t * c {
        for y in 0..hh {
            for x in 0..hw {
                idx.push(p * h * w + (oy + y) * w + ox + x);
            }
        }
    }
    idx
}

/// Splits `(T,C,H,W)` into TL, TR, BL, BR quadrants.
pub fn split_quadrants(g: &mut Graph, f: Var) -> Result<[Var; EXPERTS]> {
    let shape = g.shape(f).to_vec();
    if shape.len() != 4 || !shape[2].is_multiple_of(2) || !shape[3].is_multiple_of(2) {
        return Err(Error::shape("split_quadrants", format!("needs (T,C,even,even), got {shape:?}")));
    }
    let out_shape = vec![shape[0], shape[1], shape[2] / 2, shape[3] / 2];
    let mut out = [f; EXPERTS];
    for q in Quadrant::ALL {
        out[q as usize] = g.gather(f, "split_quadrants", quadrant_index(&shape, q), out_shape.clone())?;
    }
    Ok(out)
}

/// Class-activation maps: `M[t,hw] = sum_c W[t,c] F[t,c,hw]` for features
/// `(T,C,H,W)` and weights `(T,C)`; returns `(T, H*W)`.
pub fn cam_attention(g: &mut Graph, features: Var, weights: Var) -> Result<Var> {
    let shape = g.shape(features).to_vec();
    if shape.len() != 4 {
        return Err(Error::shape("cam_attention", format!("features {shape:?}")));
    }
    let (t, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    if g.shape(weights) != [t, c] {
        return Err(Error::shape(
            "cam_attention",
            format!("weights {:?} vs features {shape:?}", g.shape(weights)),
        ));
    }
    let w = g.reshape(weights, &[t, 1, c])?;
    let f = g.reshape(features, &[t, c, hw])?;
    let m = g.batch_matmul(w, f)?;
    g.reshape(m, &[t, hw])
}

fn attention_pool_signal(g: &mut Graph, store: &ParamStore, features: Var, maps: Var, head: &ExpertHead) -> Result<Var> {
    let shape = g.shape(features).to_vec();
    let (t, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let attn = g.softmax(maps)?;
    let attn = g.reshape(attn, &[t, hw, 1])?;
    let f = g.reshape(features, &[t, c, hw])?;
    let pooled = g.batch_matmul(f, attn)?;
    let pooled = g.reshape(pooled, &[t, c])?;
    let hw_ = g.param(store, head.head_weight);
    let hb = g.param(store, head.head_bias);
    let s = g.matmul(pooled, hw_)?;
    let s = g.add_broadcast(s, hb)?;
    g.reshape(s, &[t])
}

/// Convex combination `out[t] = sum_e alpha[e] * signals[e][t]` with
/// `alpha` of shape `(1, E)`.
pub fn gate_aggregate(g: &mut Graph, signals: &[Var], alpha: Var) -> Result<Var> {
    let t = g.shape(signals[0])[0];
    let mut rows = Vec::with_capacity(signals.len());
    for &s in signals {
        if g.shape(s) != [t] {
            return Err(Error::shape("gate_aggregate", format!("signal {:?}, expected [{t}]", g.shape(s))));
        }
        rows.push(g.reshape(s, &[1, t])?);
    }
    let stacked = g.concat(&rows)?;
    let out = g.matmul(alpha, stacked)?;
    g.reshape(out, &[t])
}

fn stack_expert_maps(g: &mut Graph, maps: &[Var]) -> Result<Var> {
    let shape = g.shape(maps[0]).to_vec();
    let (t, hq, wq) = (shape[0], shape[1], shape[2]);
    let stacked = g.concat(maps)?; // (E*T, Hq, Wq) laid out expert-major
    let stacked = g.reshape(stacked, &[maps.len(), t, hq * wq])?;
    let stacked = g.permute(stacked, &[1, 0, 2])?;
    g.reshape(stacked, &[t, maps.len(), hq, wq])
}

/// Index map of [`flip_align`] on a `(T,E,H,W)` tensor.
pub fn flip_align_index(shape: &[usize]) -> Vec<usize> {
    let (t, e, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut idx = Vec::with_capacity(t * e * h * w);
    for ti in 0..t {
        for ei in 0..e {
            let src_e = Quadrant::ALL[ei].mirrored() as usize;
            for y in 0..h {
                for x in 0..w {
                    idx.push(((ti * e + src_e) * h + y) * w + (w - 1 - x));
                }
            }
        }
    }
    idx
}

/// Mirrors each map horizontally and swaps the TL/TR and BL/BR expert slots,
/// so maps computed on a flipped input line up with the original's.
pub fn flip_align(g: &mut Graph, maps: Var) -> Result<Var> {
    let shape = g.shape(maps).to_vec();
    if shape.len() != 4 || shape[1] != EXPERTS {
        return Err(Error::shape("flip_align", format!("needs (T,4,H,W), got {shape:?}")));
    }
    g.gather(maps, "flip_align", flip_align_index(&shape), shape)
}

/// [`flip_align`] on a plain tensor.
pub fn flip_align_tensor(maps: &Tensor) -> Result<Tensor> {
    let shape = maps.shape();
    if shape.len() != 4 || shape[1] != EXPERTS {
        return Err(Error::shape("flip_align", format!("needs (T,4,H,W), got {shape:?}")));
    }
    let data = flip_align_index(shape).iter().map(|&i| maps.data()[i]).collect();
    Tensor::new(shape, data)
}
