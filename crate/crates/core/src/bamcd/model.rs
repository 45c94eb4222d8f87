use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{BamCdConfig, Combine, Sharing, SkipMode};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::raster::RasterPatch;
use crate::seed;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are collected for update.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Debug, Clone)]
struct ConvBn {
    weight: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: ConvBn,
    conv2: ConvBn,
    projection: Option<ConvBn>,
}

#[derive(Debug, Clone)]
struct Encoder {
    stem: ConvBn,
    stages: Vec<Vec<ResBlock>>,
}

#[derive(Debug, Clone)]
struct Scse {
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
    sse_w: ParamId,
    sse_b: ParamId,
}

#[derive(Debug, Clone)]
struct ConvBlock {
    conv1: ConvBn,
    conv2: ConvBn,
    scse: Scse,
}

/// Running-statistic update produced by one train-mode batch norm.
#[derive(Debug, Clone)]
pub(crate) struct BnUpdate {
    mean_id: ParamId,
    var_id: ParamId,
    mean: Vec<f64>,
    var: Vec<f64>,
}

/// Siamese residual encoders, scSE ConvBlock decoder, 1x1 head.
#[derive(Debug, Clone)]
pub struct BamCdModel {
    pub config: BamCdConfig,
    store: ParamStore,
    encoders: [Encoder; 2],
    /// Indexed by level; level 0 is full resolution.
    decoder: Vec<ConvBlock>,
    head_w: ParamId,
    head_b: ParamId,
}

struct Init<'a, R: Rng> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
}

impl<R: Rng> Init<'_, R> {
    fn he(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        let t = Tensor::from_fn(shape, |_| normal.sample(self.rng));
        self.store.add(name, t)
    }

    fn zeros(&mut self, name: String, n: usize) -> ParamId {
        self.store.add(name, Tensor::zeros(&[n]))
    }

    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> ConvBn {
        ConvBn {
            weight: self.he(format!("{name}.weight"), &[cout, cin, k, k], cin * k * k),
            gamma: self.store.add(format!("{name}.bn.gamma"), Tensor::full(&[cout], 1.0)),
            beta: self.zeros(format!("{name}.bn.beta"), cout),
            running_mean: self.store.add_buffer(format!("{name}.bn.running_mean"), Tensor::zeros(&[cout])),
            running_var: self.store.add_buffer(format!("{name}.bn.running_var"), Tensor::full(&[cout], 1.0)),
            stride,
            padding: k / 2,
        }
    }

    fn encoder(&mut self, name: &str, cfg: &BamCdConfig) -> Encoder {
        let stem = self.conv_bn(&format!("{name}.stem"), cfg.bands.len(), cfg.stem_width, 3, 1);
        let mut c = cfg.stem_width;
        let mut stages = Vec::new();
        for (s, (&w, &n)) in cfg.widths.iter().zip(&cfg.blocks).enumerate() {
            let mut blocks = Vec::new();
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let p = format!("{name}.stage{s}.block{b}");
                blocks.push(ResBlock {
                    conv1: self.conv_bn(&format!("{p}.conv1"), c, w, 3, stride),
                    conv2: self.conv_bn(&format!("{p}.conv2"), w, w, 3, 1),
                    projection: (stride != 1 || c != w).then(|| self.conv_bn(&format!("{p}.proj"), c, w, 1, stride)),
                });
                c = w;
            }
            stages.push(blocks);
        }
        Encoder { stem, stages }
    }

    fn conv_block(&mut self, name: &str, cin: usize, cout: usize, squeeze: usize) -> ConvBlock {
        ConvBlock {
            conv1: self.conv_bn(&format!("{name}.conv1"), cin, cout, 3, 1),
            conv2: self.conv_bn(&format!("{name}.conv2"), cout, cout, 3, 1),
            scse: Scse {
                fc1_w: self.he(format!("{name}.cse.fc1.weight"), &[cout, squeeze], cout),
                fc1_b: self.zeros(format!("{name}.cse.fc1.bias"), squeeze),
                fc2_w: self.he(format!("{name}.cse.fc2.weight"), &[squeeze, cout], squeeze),
                fc2_b: self.zeros(format!("{name}.cse.fc2.bias"), cout),
                sse_w: self.he(format!("{name}.sse.weight"), &[1, cout, 1, 1], cout),
                sse_b: self.zeros(format!("{name}.sse.bias"), 1),
            },
        }
    }
}

impl BamCdModel {
    pub fn build(config: &BamCdConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seed::rng(config.seed, "bamcd.init");
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let first = init.encoder("enc0", config);
        let second = match config.sharing {
            Sharing::Siamese => first.clone(),
            Sharing::PseudoSiamese => init.encoder("enc1", config),
        };
        let top = config.levels() - 1;
        let mut decoder = Vec::with_capacity(config.levels());
        for s in 0..=top {
            let cin = if s == top {
                config.skip_channels(top)
            } else {
                config.widths[s + 1] + config.skip_channels(s)
            };
            let w = config.widths[s];
            decoder.push(init.conv_block(&format!("dec{s}"), cin, w, config.squeeze_width(w)));
        }
        let w0 = config.widths[0];
        let head_w = init.he("head.weight".into(), &[1, w0, 1, 1], w0);
        let head_b = init.zeros("head.bias".into(), 1);
        Ok(Self {
            config: config.clone(),
            store,
            encoders: [first, second],
            decoder,
            head_w,
            head_b,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.store.entries().iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// Every parameter and buffer id read by one encoder stream.
    pub fn encoder_param_ids(&self, stream: usize) -> Vec<ParamId> {
        let e = &self.encoders[stream];
        let mut ids = Vec::new();
        let mut push = |c: &ConvBn| ids.extend([c.weight, c.gamma, c.beta, c.running_mean, c.running_var]);
        push(&e.stem);
        for b in e.stages.iter().flatten() {
            push(&b.conv1);
            push(&b.conv2);
            if let Some(p) = &b.projection {
                push(p);
            }
        }
        ids
    }

    /// `[N, bands, H, W]` from patches, in configured band order.
    pub fn input_tensor(&self, patches: &[&RasterPatch]) -> Result<Tensor> {
        let first = patches.first().ok_or_else(|| Error::shape("bamcd input", "empty batch"))?;
        let (h, w) = (first.height(), first.width());
        let stride = self.config.total_stride();
        if h % stride != 0 || w % stride != 0 {
            return Err(Error::shape("bamcd input", format!("{h}x{w} is not a multiple of {stride}")));
        }
        let mut data = Vec::with_capacity(patches.len() * self.config.bands.len() * h * w);
        for p in patches {
            if (p.height(), p.width()) != (h, w) {
                return Err(Error::dims("bamcd input size", format!("{h}x{w}"), format!("{}x{}", p.height(), p.width())));
            }
            for &b in &self.config.bands {
                let plane = p.band(b).ok_or_else(|| Error::MissingBand {
                    index: "BAM-CD input".into(),
                    band: b,
                })?;
                data.extend(plane.iter().map(|&v| f64::from(v)));
            }
        }
        Tensor::new(vec![patches.len(), self.config.bands.len(), h, w], data)
    }

    fn conv_bn(&self, tape: &mut Tape, c: &ConvBn, x: Var, mode: Mode, updates: &mut Vec<BnUpdate>) -> Result<Var> {
        let w = tape.param(&self.store, c.weight);
        let y = tape.conv2d(x, w, c.stride, c.padding)?;
        let (g, b) = (tape.param(&self.store, c.gamma), tape.param(&self.store, c.beta));
        match mode {
            Mode::Train => {
                let (out, mean, var) = tape.batch_norm_train(y, g, b, BN_EPS)?;
                updates.push(BnUpdate {
                    mean_id: c.running_mean,
                    var_id: c.running_var,
                    mean,
                    var,
                });
                Ok(out)
            }
            Mode::Eval => tape.batch_norm_eval(
                y,
                g,
                b,
                self.store.value(c.running_mean).data(),
                self.store.value(c.running_var).data(),
                BN_EPS,
            ),
        }
    }

    fn res_block(&self, tape: &mut Tape, blk: &ResBlock, x: Var, mode: Mode, up: &mut Vec<BnUpdate>) -> Result<Var> {
        let h = self.conv_bn(tape, &blk.conv1, x, mode, up)?;
        let h = tape.relu(h);
        let h = self.conv_bn(tape, &blk.conv2, h, mode, up)?;
        let shortcut = match &blk.projection {
            Some(p) => self.conv_bn(tape, p, x, mode, up)?,
            None => x,
        };
        let s = tape.add(h, shortcut)?;
        Ok(tape.relu(s))
    }

    /// Per-level feature maps of one stream.
    fn encode(&self, tape: &mut Tape, enc: &Encoder, x: Var, mode: Mode, up: &mut Vec<BnUpdate>) -> Result<Vec<Var>> {
        let h = self.conv_bn(tape, &enc.stem, x, mode, up)?;
        let mut h = tape.relu(h);
        let mut levels = Vec::with_capacity(enc.stages.len());
        for stage in &enc.stages {
            for blk in stage {
                h = self.res_block(tape, blk, h, mode, up)?;
            }
            levels.push(h);
        }
        Ok(levels)
    }

    fn scse(&self, tape: &mut Tape, a: &Scse, x: Var) -> Result<Var> {
        let p = |tape: &mut Tape, id| tape.param(&self.store, id);
        let squeezed = tape.global_avg_pool(x)?;
        let (w1, b1, w2, b2) = (p(tape, a.fc1_w), p(tape, a.fc1_b), p(tape, a.fc2_w), p(tape, a.fc2_b));
        let z = tape.matmul(squeezed, w1)?;
        let z = tape.add_bias(z, b1)?;
        let z = tape.relu(z);
        let z = tape.matmul(z, w2)?;
        let z = tape.add_bias(z, b2)?;
        let gate = tape.sigmoid(z);
        let channel = tape.channel_scale(x, gate)?;

        let (sw, sb) = (p(tape, a.sse_w), p(tape, a.sse_b));
        let q = tape.conv2d(x, sw, 1, 0)?;
        let q = tape.add_bias(q, sb)?;
        let q = tape.sigmoid(q);
        let spatial = tape.spatial_scale(x, q)?;
        match self.config.combine {
            Combine::Max => tape.maximum(channel, spatial),
            Combine::Add => tape.add(channel, spatial),
        }
    }

    fn conv_block(&self, tape: &mut Tape, blk: &ConvBlock, x: Var, mode: Mode, up: &mut Vec<BnUpdate>) -> Result<Var> {
        let h = self.conv_bn(tape, &blk.conv1, x, mode, up)?;
        let h = tape.relu(h);
        let h = self.conv_bn(tape, &blk.conv2, h, mode, up)?;
        let h = tape.relu(h);
        self.scse(tape, &blk.scse, h)
    }

    fn skip(&self, tape: &mut Tape, pre: Var, post: Var) -> Result<Var> {
        match self.config.skip {
            SkipMode::Concat => tape.concat(&[pre, post]),
            SkipMode::Difference => {
                let shape = tape.value(pre).shape().to_vec();
                let minus = tape.constant(Tensor::full(&shape, -1.0));
                let neg = tape.mul(pre, minus)?;
                tape.add(post, neg)
            }
        }
    }

    /// Builds the full graph; returns the `[N, 1, H, W]` probability node.
    pub(crate) fn graph(&self, tape: &mut Tape, pre: Tensor, post: Tensor, mode: Mode) -> Result<(Var, Vec<BnUpdate>)> {
        if pre.shape() != post.shape() {
            return Err(Error::shape("bamcd", format!("pre {:?} vs post {:?}", pre.shape(), post.shape())));
        }
        let mut up = Vec::new();
        let x_pre = tape.constant(pre);
        let x_post = tape.constant(post);
        let f_pre = self.encode(tape, &self.encoders[0], x_pre, mode, &mut up)?;
        let f_post = self.encode(tape, &self.encoders[1], x_post, mode, &mut up)?;
        let top = self.config.levels() - 1;
        let skip = self.skip(tape, f_pre[top], f_post[top])?;
        let mut d = self.conv_block(tape, &self.decoder[top], skip, mode, &mut up)?;
        for s in (0..top).rev() {
            let u = tape.upsample2(d)?;
            let skip = self.skip(tape, f_pre[s], f_post[s])?;
            let cat = tape.concat(&[u, skip])?;
            d = self.conv_block(tape, &self.decoder[s], cat, mode, &mut up)?;
        }
        let hw = tape.param(&self.store, self.head_w);
        let hb = tape.param(&self.store, self.head_b);
        let logits = tape.conv2d(d, hw, 1, 0)?;
        let logits = tape.add_bias(logits, hb)?;
        Ok((tape.sigmoid(logits), up))
    }

    pub(crate) fn apply_bn_updates(&mut self, updates: Vec<BnUpdate>) {
        for u in updates {
            for (id, batch) in [(u.mean_id, u.mean), (u.var_id, u.var)] {
                let running = self.store.value_mut(id).data_mut();
                running
                    .iter_mut()
                    .zip(batch)
                    .for_each(|(r, b)| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b);
            }
        }
    }

    /// Probability maps (`H * W` each, row-major) for a batch of pairs.
    /// Train mode uses batch statistics but leaves running statistics alone.
    pub fn forward_batch(&self, pre: &[&RasterPatch], post: &[&RasterPatch], mode: Mode) -> Result<Vec<Vec<f64>>> {
        if pre.len() != post.len() {
            return Err(Error::dims("bamcd batch", pre.len(), post.len()));
        }
        let (a, b) = (self.input_tensor(pre)?, self.input_tensor(post)?);
        let mut tape = Tape::new();
        let (out, _) = self.graph(&mut tape, a, b, mode)?;
        let v = tape.value(out);
        let plane = v.shape()[2] * v.shape()[3];
        Ok(v.data().chunks(plane).map(<[f64]>::to_vec).collect())
    }

    /// Eval-mode probability map of one pair.
    pub fn forward(&self, pre: &RasterPatch, post: &RasterPatch) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&[pre], &[post], Mode::Eval)?.remove(0))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.push_text("kind", "bamcd");
        c.push_text("config", self.config.to_text());
        for e in self.store.entries() {
            c.push_f64(e.name.clone(), e.value.shape(), e.value.data().to_vec());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.text("kind")? != "bamcd" {
            return Err(Error::Format {
                offset: 0,
                reason: "bamcd container: wrong kind".into(),
            });
        }
        let config = BamCdConfig::from_text(c.text("config")?)?;
        let mut model = Self::build(&config)?;
        for id in model.store.ids().collect::<Vec<_>>() {
            let name = model.store.get(id).name.clone();
            let (dims, data) = c.f64s(&name)?;
            if dims != model.store.value(id).shape() {
                return Err(Error::dims(format!("checkpoint block {name}"), format!("{:?}", model.store.value(id).shape()), format!("{dims:?}")));
            }
            model.store.value_mut(id).data_mut().copy_from_slice(data);
        }
        Ok(model)
    }
}
