//! The video-to-vocoder network: a 3-D convolutional encoder over seven
//! frame windows, a GRU, and decoders for SP, AP, VUV, F0 and characters.
//! Window `n` of a batch is frame `s` of clip `b` with `n = s * B + b`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::NUM_SYMBOLS;
use crate::error::{Error, Result};
use crate::features::{FrameTarget, VocoderFeatureBlock, BLOCK_LEN, NUM_MELS};
use crate::nn::{
    conv3d_out_dims, conv_transpose2d_out_dims, Conv3dSpec, ConvT2dSpec, Graph, ParamId, ParamKind, ParamStore, Real,
    Tensor, Var,
};
use crate::video::VideoClipTensor;
use crate::vocoder::NUM_AP_BANDS;

pub const SEQ_LEN: usize = 75;
pub const CONTEXT: usize = 7;
pub const VUV_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Mouth,
    Face,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSchedule {
    pub encoder: f64,
    pub recurrent: f64,
    pub decoders: f64,
}

impl DropoutSchedule {
    pub fn uniform(p: f64) -> Self {
        Self {
            encoder: p,
            recurrent: p,
            decoders: p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_mode: InputMode,
    pub batch_size: usize,
    pub seq_len: usize,
    pub channels: usize,
    pub context: usize,
    pub height: usize,
    pub width: usize,
    pub encoder: Vec<Conv3dSpec>,
    pub hidden: usize,
    pub sp_decoder: Vec<ConvT2dSpec>,
    pub ap_decoder: Vec<ConvT2dSpec>,
    pub dropout: DropoutSchedule,
    pub vuv_threshold: f64,
}

fn conv(i: usize, o: usize, k: [usize; 3], s: [usize; 3], p: [usize; 3]) -> Conv3dSpec {
    Conv3dSpec {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        padding: p,
    }
}

fn convt(i: usize, o: usize, k: [usize; 2], s: [usize; 2]) -> ConvT2dSpec {
    ConvT2dSpec {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        padding: [0, 0],
    }
}

impl ModelConfig {
    fn full(input_mode: InputMode) -> Self {
        let (batch_size, height, d1, d2) = match input_mode {
            InputMode::Mouth => (24, 64, 2, 4),
            InputMode::Face => (16, 128, 3, 5),
        };
        Self {
            input_mode,
            batch_size,
            seq_len: SEQ_LEN,
            channels: 3,
            context: CONTEXT,
            height,
            width: 96,
            encoder: vec![
                conv(3, 64, [7, 4, 4], [1, 2, 2], [0, 1, 1]),
                conv(64, 128, [1, 4, 4], [1, 2, 2], [0, 1, 1]),
                conv(128, 256, [1, 4, 4], [1, d1, 2], [0, 1, 1]),
                conv(256, 512, [1, 4, 4], [1, 2, 2], [0, 1, 1]),
                conv(512, 128, [1, d2, 6], [1, 1, 1], [0, 0, 0]),
            ],
            hidden: 128,
            sp_decoder: vec![
                convt(128, 256, [1, 6], [1, 1]),
                convt(256, 128, [2, 4], [1, 2]),
                convt(128, 64, [4, 4], [1, 2]),
                convt(64, 1, [4, 2], [1, 2]),
            ],
            ap_decoder: vec![
                convt(128, 128, [4, 1], [1, 1]),
                convt(128, 64, [3, 3], [1, 1]),
                convt(64, 1, [3, 3], [1, 1]),
            ],
            dropout: DropoutSchedule::uniform(0.2),
            vuv_threshold: VUV_THRESHOLD,
        }
    }

    pub fn mouth() -> Self {
        Self::full(InputMode::Mouth)
    }

    pub fn face() -> Self {
        Self::full(InputMode::Face)
    }

    /// Narrow network on 16x24 frames with the same decoder geometry, for
    /// tests and desk-scale runs.
    pub fn tiny() -> Self {
        Self {
            input_mode: InputMode::Mouth,
            batch_size: 2,
            seq_len: SEQ_LEN,
            channels: 3,
            context: CONTEXT,
            height: 16,
            width: 24,
            encoder: vec![
                conv(3, 8, [7, 4, 4], [1, 2, 2], [0, 1, 1]),
                conv(8, 12, [1, 4, 4], [1, 2, 2], [0, 1, 1]),
                conv(12, 16, [1, 4, 4], [1, 2, 2], [0, 1, 1]),
                conv(16, 24, [1, 4, 4], [1, 2, 2], [0, 1, 1]),
                conv(24, 32, [1, 1, 1], [1, 1, 1], [0, 0, 0]),
            ],
            hidden: 32,
            sp_decoder: vec![
                convt(32, 16, [1, 6], [1, 1]),
                convt(16, 12, [2, 4], [1, 2]),
                convt(12, 8, [4, 4], [1, 2]),
                convt(8, 1, [4, 2], [1, 2]),
            ],
            ap_decoder: vec![
                convt(32, 12, [4, 1], [1, 1]),
                convt(12, 8, [3, 3], [1, 1]),
                convt(8, 1, [3, 3], [1, 1]),
            ],
            dropout: DropoutSchedule::uniform(0.0),
            vuv_threshold: VUV_THRESHOLD,
        }
    }

    /// Encoder activation sizes `(channels, [D, H, W])`, input first.
    pub fn encoder_trace(&self) -> Result<Vec<(usize, [usize; 3])>> {
        let mut dims = [self.context, self.height, self.width];
        let mut ch = self.channels;
        let mut trace = vec![(ch, dims)];
        for spec in &self.encoder {
            if spec.in_channels != ch {
                return Err(Error::ConfigMismatch(format!(
                    "encoder layer expects {} channels, previous layer gives {ch}",
                    spec.in_channels
                )));
            }
            dims = conv3d_out_dims(spec, dims)?;
            ch = spec.out_channels;
            trace.push((ch, dims));
        }
        Ok(trace)
    }

    fn decoder_out(&self, layers: &[ConvT2dSpec]) -> Result<(usize, [usize; 2])> {
        let mut dims = [1, 1];
        let mut ch = self.hidden;
        for spec in layers {
            if spec.in_channels != ch {
                return Err(Error::ConfigMismatch(format!(
                    "decoder layer expects {} channels, previous layer gives {ch}",
                    spec.in_channels
                )));
            }
            dims = conv_transpose2d_out_dims(spec, dims)?;
            ch = spec.out_channels;
        }
        Ok((ch, dims))
    }

    pub fn validate(&self) -> Result<()> {
        let trace = self.encoder_trace()?;
        if self.encoder.len() != 5 || self.sp_decoder.len() < 2 || self.ap_decoder.len() < 2 {
            return Err(Error::ConfigMismatch("expected 5 encoder layers and at least 2 layers per decoder".into()));
        }
        let &(ch, dims) = trace.last().expect("non-empty");
        if dims != [1, 1, 1] || ch != self.hidden {
            return Err(Error::ConfigMismatch(format!(
                "encoder ends at {ch} channels of {dims:?}, need {} of [1, 1, 1]",
                self.hidden
            )));
        }
        if self.decoder_out(&self.sp_decoder)? != (1, [BLOCK_LEN, NUM_MELS]) {
            return Err(Error::ConfigMismatch("SP decoder must produce 1 x 8 x 60".into()));
        }
        if self.decoder_out(&self.ap_decoder)? != (1, [BLOCK_LEN, NUM_AP_BANDS]) {
            return Err(Error::ConfigMismatch("AP decoder must produce 1 x 8 x 5".into()));
        }
        let d = &self.dropout;
        for p in [d.encoder, d.recurrent, d.decoders] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::ConfigMismatch(format!("dropout {p} outside [0, 1)")));
            }
        }
        if self.seq_len == 0 || self.batch_size == 0 {
            return Err(Error::ConfigMismatch("sequence length and batch size must be positive".into()));
        }
        Ok(())
    }
}

struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

struct LayerIds {
    w: ParamId,
    b: ParamId,
    bn: Option<BnIds>,
}

struct ModelIds {
    encoder: Vec<LayerIds>,
    gru: [ParamId; 4],
    gru_bn: BnIds,
    sp: Vec<LayerIds>,
    ap: Vec<LayerIds>,
    vuv: (ParamId, ParamId),
    f0: (ParamId, ParamId),
    vsr: (ParamId, ParamId),
}

fn add_bn<R: Real>(store: &mut ParamStore<R>, prefix: &str, c: usize) -> Result<BnIds> {
    Ok(BnIds {
        gamma: store.add(format!("{prefix}.bn.gamma"), ParamKind::Weight, Tensor::filled(&[c], R::one()))?,
        beta: store.add(format!("{prefix}.bn.beta"), ParamKind::Weight, Tensor::zeros(&[c]))?,
        mean: store.add(format!("{prefix}.bn.running_mean"), ParamKind::Buffer, Tensor::zeros(&[c]))?,
        var: store.add(format!("{prefix}.bn.running_var"), ParamKind::Buffer, Tensor::filled(&[c], R::one()))?,
    })
}

fn he_bound(fan_in: f64) -> f64 {
    (6.0 / fan_in).sqrt()
}

/// Network parameters plus configuration.
#[derive(Debug, Clone)]
pub struct Vid2Voc<R: Real> {
    cfg: ModelConfig,
    store: ParamStore<R>,
}

/// Graph handles of one forward pass, in decoder layout.
pub struct ForwardVars {
    /// Encoder activations, one per layer.
    pub encoder: Vec<Var>,
    /// `[N, 1, 8, 60]`
    pub se: Var,
    /// `[N, 1, 8, 5]` before masking.
    pub o_nap: Var,
    pub nap: Var,
    /// `[N, 8]`
    pub o_f0: Var,
    pub f0: Var,
    pub vuv_raw: Var,
    /// Log-probabilities `[N, 28]`.
    pub vsr: Var,
    /// Thresholded voicing `[N, 8]` as 0/1.
    pub vuv: Vec<f64>,
    pub batch: usize,
}

/// Network outputs for one clip in `[S, coefficient, sub-frame]` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub seq_len: usize,
    /// `[S, 60, 8]`
    pub w_se: Vec<f64>,
    /// `[S, 5, 8]`
    pub o_nap: Vec<f64>,
    pub w_nap: Vec<f64>,
    /// `[S, 8]`
    pub o_f0: Vec<f64>,
    pub w_f0: Vec<f64>,
    pub vuv_raw: Vec<f64>,
    pub w_vuv: Vec<f64>,
    /// Log-probabilities `[S, 28]`.
    pub vsr: Vec<f64>,
}

/// Voicing mask from the raw VUV activations; `raw >= threshold` is voiced.
pub fn vuv_mask(vuv_raw: &[f64], threshold: f64) -> Vec<f64> {
    vuv_raw.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect()
}

impl ModelOutput {
    /// Builds an output from raw decoder activations (layouts as the
    /// fields), applying the voicing mask to every AP row and to F0.
    pub fn composite(
        seq_len: usize,
        w_se: Vec<f64>,
        o_nap: Vec<f64>,
        o_f0: Vec<f64>,
        vuv_raw: Vec<f64>,
        vsr: Vec<f64>,
        threshold: f64,
    ) -> Result<Self> {
        let sizes = [w_se.len(), o_nap.len(), o_f0.len(), vuv_raw.len(), vsr.len()];
        let expected = [
            seq_len * NUM_MELS * BLOCK_LEN,
            seq_len * NUM_AP_BANDS * BLOCK_LEN,
            seq_len * BLOCK_LEN,
            seq_len * BLOCK_LEN,
            seq_len * NUM_SYMBOLS,
        ];
        if sizes != expected {
            return Err(Error::Shape(format!("output sizes {sizes:?}, expected {expected:?}")));
        }
        let w_vuv = vuv_mask(&vuv_raw, threshold);
        let w_f0 = o_f0.iter().zip(&w_vuv).map(|(a, b)| a * b).collect();
        let mut w_nap = o_nap.clone();
        for s in 0..seq_len {
            for band in 0..NUM_AP_BANDS {
                for k in 0..BLOCK_LEN {
                    w_nap[(s * NUM_AP_BANDS + band) * BLOCK_LEN + k] *= w_vuv[s * BLOCK_LEN + k];
                }
            }
        }
        Ok(Self {
            seq_len,
            w_se,
            o_nap,
            w_nap,
            o_f0,
            w_f0,
            vuv_raw,
            w_vuv,
            vsr,
        })
    }

    /// Per-frame targets layout, one entry per video frame.
    pub fn frame_targets(&self) -> Vec<FrameTarget> {
        (0..self.seq_len)
            .map(|s| {
                let mut t = FrameTarget {
                    se: [0.0; NUM_MELS * BLOCK_LEN],
                    nap: [0.0; NUM_AP_BANDS * BLOCK_LEN],
                    f0: [0.0; BLOCK_LEN],
                    vuv: [0.0; BLOCK_LEN],
                };
                t.se.copy_from_slice(&self.w_se[s * NUM_MELS * BLOCK_LEN..(s + 1) * NUM_MELS * BLOCK_LEN]);
                t.nap.copy_from_slice(&self.w_nap[s * NUM_AP_BANDS * BLOCK_LEN..(s + 1) * NUM_AP_BANDS * BLOCK_LEN]);
                t.f0.copy_from_slice(&self.w_f0[s * BLOCK_LEN..(s + 1) * BLOCK_LEN]);
                t.vuv.copy_from_slice(&self.w_vuv[s * BLOCK_LEN..(s + 1) * BLOCK_LEN]);
                t
            })
            .collect()
    }

    /// Concatenates the per-frame blocks into a `S * 8` frame feature block.
    pub fn assemble(&self) -> VocoderFeatureBlock {
        crate::features::assemble_blocks(&self.frame_targets())
    }
}

impl<R: Real> Vid2Voc<R> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (i, spec) in cfg.encoder.iter().enumerate() {
            let k = spec.kernel;
            let fan_in = (spec.in_channels * k[0] * k[1] * k[2]) as f64;
            let shape = [spec.out_channels, spec.in_channels, k[0], k[1], k[2]];
            store.add_uniform(&format!("encoder.{i}.weight"), &shape, he_bound(fan_in), &mut rng)?;
            store.add(format!("encoder.{i}.bias"), ParamKind::Weight, Tensor::zeros(&[spec.out_channels]))?;
            if i + 1 < cfg.encoder.len() {
                add_bn(&mut store, &format!("encoder.{i}"), spec.out_channels)?;
            }
        }
        let h = cfg.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        store.add_uniform("gru.weight_ih", &[3 * h, h], bound, &mut rng)?;
        store.add_uniform("gru.weight_hh", &[3 * h, h], bound, &mut rng)?;
        store.add_uniform("gru.bias_ih", &[3 * h], bound, &mut rng)?;
        store.add_uniform("gru.bias_hh", &[3 * h], bound, &mut rng)?;
        add_bn(&mut store, "gru", h)?;
        for (name, layers) in [("sp", &cfg.sp_decoder), ("ap", &cfg.ap_decoder)] {
            for (i, spec) in layers.iter().enumerate() {
                let [kh, kw] = spec.kernel;
                let fan_in = (spec.in_channels * kh * kw) as f64 / (spec.stride[0] * spec.stride[1]) as f64;
                let shape = [spec.in_channels, spec.out_channels, kh, kw];
                store.add_uniform(&format!("{name}.{i}.weight"), &shape, he_bound(fan_in), &mut rng)?;
                store.add(format!("{name}.{i}.bias"), ParamKind::Weight, Tensor::zeros(&[spec.out_channels]))?;
                if i + 1 < layers.len() {
                    add_bn(&mut store, &format!("{name}.{i}"), spec.out_channels)?;
                }
            }
        }
        for (name, out) in [("vuv", BLOCK_LEN), ("f0", BLOCK_LEN), ("vsr", NUM_SYMBOLS)] {
            store.add_uniform(&format!("{name}.weight"), &[out, h], he_bound(h as f64), &mut rng)?;
            store.add(format!("{name}.bias"), ParamKind::Weight, Tensor::zeros(&[out]))?;
        }
        Ok(Self { cfg, store })
    }

    /// Rebuilds a model from a configuration and a full parameter store,
    /// checking that names and shapes match what the configuration needs.
    pub fn from_parts(cfg: ModelConfig, store: ParamStore<R>) -> Result<Self> {
        let reference = Vid2Voc::<R>::new(cfg.clone(), 0)?;
        if reference.store.len() != store.len() {
            return Err(Error::ConfigMismatch(format!(
                "configuration needs {} tensors, got {}",
                reference.store.len(),
                store.len()
            )));
        }
        for id in reference.store.ids() {
            let name = reference.store.name(id);
            let Some(other) = store.find(name) else {
                return Err(Error::ConfigMismatch(format!("missing tensor {name}")));
            };
            if other != id || store.get(other).shape() != reference.store.get(id).shape() {
                return Err(Error::ConfigMismatch(format!("tensor {name} does not match the configuration")));
            }
            if store.kind(other) != reference.store.kind(id) {
                return Err(Error::ConfigMismatch(format!("tensor {name} has the wrong kind")));
            }
        }
        Ok(Self { cfg, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<R> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<R> {
        &mut self.store
    }

    pub fn cast<S: Real>(&self) -> Vid2Voc<S> {
        Vid2Voc {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
        }
    }

    fn ids(&self) -> ModelIds {
        let s = &self.store;
        let id = |n: String| s.find(&n).expect("registered at construction");
        let bn = |p: &str| BnIds {
            gamma: id(format!("{p}.bn.gamma")),
            beta: id(format!("{p}.bn.beta")),
            mean: id(format!("{p}.bn.running_mean")),
            var: id(format!("{p}.bn.running_var")),
        };
        let layers = |prefix: &str, n: usize| -> Vec<LayerIds> {
            (0..n)
                .map(|i| LayerIds {
                    w: id(format!("{prefix}.{i}.weight")),
                    b: id(format!("{prefix}.{i}.bias")),
                    bn: (i + 1 < n).then(|| bn(&format!("{prefix}.{i}"))),
                })
                .collect()
        };
        ModelIds {
            encoder: layers("encoder", self.cfg.encoder.len()),
            gru: [
                id("gru.weight_ih".into()),
                id("gru.weight_hh".into()),
                id("gru.bias_ih".into()),
                id("gru.bias_hh".into()),
            ],
            gru_bn: bn("gru"),
            sp: layers("sp", self.cfg.sp_decoder.len()),
            ap: layers("ap", self.cfg.ap_decoder.len()),
            vuv: (id("vuv.weight".into()), id("vuv.bias".into())),
            f0: (id("f0.weight".into()), id("f0.bias".into())),
            vsr: (id("vsr.weight".into()), id("vsr.bias".into())),
        }
    }

    fn check_clip(&self, clip: &VideoClipTensor) -> Result<()> {
        let c = &self.cfg;
        let got = [clip.frames(), clip.channels(), clip.height(), clip.width()];
        let want = [c.seq_len, c.channels, c.height, c.width];
        if got != want {
            return Err(Error::ConfigMismatch(format!("clip is {got:?}, model expects {want:?}")));
        }
        Ok(())
    }

    /// Stacked frame windows `[S * B, C, context, H, W]`, edge frames
    /// repeated at the clip boundaries.
    pub fn windows(&self, clips: &[&VideoClipTensor]) -> Result<Tensor<R>> {
        for clip in clips {
            self.check_clip(clip)?;
        }
        let c = &self.cfg;
        let (b_n, s_n, ctx) = (clips.len(), c.seq_len, c.context);
        let plane = c.height * c.width;
        let half = (ctx / 2) as isize;
        let mut data = Vec::with_capacity(s_n * b_n * c.channels * ctx * plane);
        for s in 0..s_n {
            for clip in clips {
                for ch in 0..c.channels {
                    for d in 0..ctx as isize {
                        let t = (s as isize + d - half).clamp(0, s_n as isize - 1) as usize;
                        let f = clip.frame(t);
                        data.extend(f[ch * plane..(ch + 1) * plane].iter().map(|&v| R::of(v as f64)));
                    }
                }
            }
        }
        Tensor::new(&[s_n * b_n, c.channels, ctx, c.height, c.width], data)
    }

    fn block(g: &mut Graph<R>, x: Var, layer: &LayerIds, p: f64) -> Result<Var> {
        let bn = layer.bn.as_ref().expect("hidden layer has batch norm");
        let y = g.batch_norm(x, bn.gamma, bn.beta, bn.mean, bn.var)?;
        let y = g.relu(y);
        g.dropout(y, p)
    }

    /// Records the forward pass of a batch of clips on `g`.
    pub fn forward_graph(&self, g: &mut Graph<R>, clips: &[&VideoClipTensor]) -> Result<ForwardVars> {
        if clips.is_empty() {
            return Err(Error::EmptyInput);
        }
        let ids = self.ids();
        let c = &self.cfg;
        let b_n = clips.len();
        let n = c.seq_len * b_n;
        let input = self.windows(clips)?;
        let mut x = g.input(input);
        let last = c.encoder.len() - 1;
        let mut encoder = Vec::with_capacity(c.encoder.len());
        for (i, (spec, layer)) in c.encoder.iter().zip(&ids.encoder).enumerate() {
            x = g.conv3d(x, layer.w, layer.b, spec)?;
            x = if i < last { Self::block(g, x, layer, c.dropout.encoder)? } else { g.tanh(x) };
            encoder.push(x);
        }
        let x = g.reshape(x, &[c.seq_len, b_n, c.hidden])?;
        let [w_ih, w_hh, b_ih, b_hh] = ids.gru;
        let h = g.gru(x, w_ih, w_hh, b_ih, b_hh)?;
        let h = g.reshape(h, &[n, c.hidden])?;
        let bn = &ids.gru_bn;
        let h = g.batch_norm(h, bn.gamma, bn.beta, bn.mean, bn.var)?;
        let h = g.relu(h);
        let h = g.dropout(h, c.dropout.recurrent)?;
        let h2d = g.reshape(h, &[n, c.hidden, 1, 1])?;

        let decode = |g: &mut Graph<R>, specs: &[ConvT2dSpec], layers: &[LayerIds]| -> Result<Var> {
            let mut y = h2d;
            for (i, (spec, layer)) in specs.iter().zip(layers).enumerate() {
                y = g.conv_transpose2d(y, layer.w, layer.b, spec)?;
                y = if i + 1 < specs.len() { Self::block(g, y, layer, c.dropout.decoders)? } else { g.relu(y) };
            }
            Ok(y)
        };
        let se = decode(g, &c.sp_decoder, &ids.sp)?;
        let o_nap = decode(g, &c.ap_decoder, &ids.ap)?;

        let vuv_lin = g.linear(h, ids.vuv.0, ids.vuv.1)?;
        let vuv_raw = g.relu(vuv_lin);
        let f0_lin = g.linear(h, ids.f0.0, ids.f0.1)?;
        let o_f0 = g.sigmoid(f0_lin);
        let vsr_lin = g.linear(h, ids.vsr.0, ids.vsr.1)?;
        let vsr = g.log_softmax(vsr_lin)?;

        let raw: Vec<f64> = g.value(vuv_raw).data().iter().map(|v| v.f64()).collect();
        let vuv = vuv_mask(&raw, c.vuv_threshold);
        let f0 = g.mul_const(o_f0, vuv.iter().map(|&v| R::of(v)).collect())?;
        let mut nap_mask = Vec::with_capacity(n * BLOCK_LEN * NUM_AP_BANDS);
        for w in 0..n {
            for k in 0..BLOCK_LEN {
                nap_mask.extend(std::iter::repeat_n(R::of(vuv[w * BLOCK_LEN + k]), NUM_AP_BANDS));
            }
        }
        let nap = g.mul_const(o_nap, nap_mask)?;
        Ok(ForwardVars {
            encoder,
            se,
            o_nap,
            nap,
            o_f0,
            f0,
            vuv_raw,
            vsr,
            vuv,
            batch: b_n,
        })
    }

    /// Splits the graph values of a forward pass into per-clip outputs.
    pub fn outputs(&self, g: &Graph<R>, v: &ForwardVars) -> Vec<ModelOutput> {
        let (s_n, b_n) = (self.cfg.seq_len, v.batch);
        let get = |var: Var| -> Vec<f64> { g.value(var).data().iter().map(|x| x.f64()).collect() };
        let (se, o_nap, o_f0, vuv_raw, vsr) = (get(v.se), get(v.o_nap), get(v.o_f0), get(v.vuv_raw), get(v.vsr));
        (0..b_n)
            .map(|b| {
                let mut w_se = vec![0.0; s_n * NUM_MELS * BLOCK_LEN];
                let mut nap = vec![0.0; s_n * NUM_AP_BANDS * BLOCK_LEN];
                let mut f0 = vec![0.0; s_n * BLOCK_LEN];
                let mut raw = vec![0.0; s_n * BLOCK_LEN];
                let mut logp = vec![0.0; s_n * NUM_SYMBOLS];
                for s in 0..s_n {
                    let w = s * b_n + b;
                    for k in 0..BLOCK_LEN {
                        for m in 0..NUM_MELS {
                            w_se[(s * NUM_MELS + m) * BLOCK_LEN + k] = se[(w * BLOCK_LEN + k) * NUM_MELS + m];
                        }
                        for a in 0..NUM_AP_BANDS {
                            nap[(s * NUM_AP_BANDS + a) * BLOCK_LEN + k] = o_nap[(w * BLOCK_LEN + k) * NUM_AP_BANDS + a];
                        }
                        f0[s * BLOCK_LEN + k] = o_f0[w * BLOCK_LEN + k];
                        raw[s * BLOCK_LEN + k] = vuv_raw[w * BLOCK_LEN + k];
                    }
                    logp[s * NUM_SYMBOLS..(s + 1) * NUM_SYMBOLS]
                        .copy_from_slice(&vsr[w * NUM_SYMBOLS..(w + 1) * NUM_SYMBOLS]);
                }
                ModelOutput::composite(s_n, w_se, nap, f0, raw, logp, self.cfg.vuv_threshold).expect("sizes from config")
            })
            .collect()
    }

    /// Inference in eval mode.
    pub fn forward(&self, clips: &[&VideoClipTensor]) -> Result<Vec<ModelOutput>> {
        let mut g = Graph::new(&self.store, false, 0);
        let v = self.forward_graph(&mut g, clips)?;
        Ok(self.outputs(&g, &v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [ModelConfig::mouth(), ModelConfig::face(), ModelConfig::tiny()] {
            cfg.validate().unwrap();
        }
        let mut bad = ModelConfig::mouth();
        bad.height = 128;
        assert!(matches!(bad.validate(), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn encoder_traces() {
        let hw = |cfg: ModelConfig| -> Vec<[usize; 3]> { cfg.encoder_trace().unwrap().iter().map(|t| t.1).collect() };
        assert_eq!(
            hw(ModelConfig::mouth()),
            vec![[7, 64, 96], [1, 32, 48], [1, 16, 24], [1, 8, 12], [1, 4, 6], [1, 1, 1]]
        );
        let face: Vec<usize> = hw(ModelConfig::face()).iter().map(|d| d[1]).collect();
        assert_eq!(face, vec![128, 64, 32, 11, 5, 1]);
    }

    #[test]
    fn vuv_threshold_is_inclusive() {
        assert_eq!(vuv_mask(&[0.2, 0.19999, 0.0, 3.0], 0.2), vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn window_edges_repeat() {
        let m = Vid2Voc::<f32>::new(ModelConfig::tiny(), 1).unwrap();
        let frames: Vec<f32> = (0..75).flat_map(|t| std::iter::repeat_n(t as f32 / 75.0, 3 * 16 * 24)).collect();
        let clip = VideoClipTensor::new(frames, 75, 3, 16, 24).unwrap();
        let w = m.windows(&[&clip]).unwrap();
        let plane = 16 * 24;
        let first: Vec<f32> = (0..7).map(|d| w.data()[d * plane]).collect();
        assert_eq!(first, vec![0.0, 0.0, 0.0, 0.0, 1.0 / 75.0, 2.0 / 75.0, 3.0 / 75.0]);
    }
}
