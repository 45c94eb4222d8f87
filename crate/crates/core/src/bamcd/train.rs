use rand::seq::SliceRandom;
use rand::Rng;

use super::model::{BamCdModel, Mode};
use crate::autodiff::Adam;
use crate::error::{Error, Result};
use crate::metrics::{accumulate_labels, compute_metrics, ConfusionCounts};
use crate::raster::{tile_origins, BitemporalSample, GroundTruthMask, RasterPatch};
use crate::seed;

/// Binarisation threshold on predicted probabilities.
pub const PROBABILITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1_burnt: f64,
}

pub fn trace_to_tsv(trace: &[TraceRow]) -> String {
    let mut s = String::from("epoch\ttrain_loss\tval_f1_burnt\n");
    for r in trace {
        s.push_str(&format!("{}\t{:?}\t{:?}\n", r.epoch, r.train_loss, r.val_f1_burnt));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The checkpoint with the highest validation burnt F1 (earliest on
    /// ties); the initial model when no epoch ran.
    pub model: BamCdModel,
    pub trace: Vec<TraceRow>,
    pub best_epoch: Option<usize>,
}

fn to_labels(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= PROBABILITY_THRESHOLD)).collect()
}

/// One of the eight square symmetries applied to a `[C, n, n]` plane stack.
fn dihedral<T: Copy>(data: &[T], n: usize, k: u8) -> Vec<T> {
    let plane = n * n;
    let mut out = Vec::with_capacity(data.len());
    for c in 0..data.len() / plane {
        let src = &data[c * plane..(c + 1) * plane];
        for r in 0..n {
            for col in 0..n {
                let (mut y, mut x) = (r, col);
                if k & 4 != 0 {
                    std::mem::swap(&mut y, &mut x);
                }
                if k & 1 != 0 {
                    y = n - 1 - y;
                }
                if k & 2 != 0 {
                    x = n - 1 - x;
                }
                out.push(src[y * n + x]);
            }
        }
    }
    out
}

fn transform(s: &BitemporalSample, k: u8) -> Result<BitemporalSample> {
    let n = s.height();
    if k == 0 || s.width() != n {
        return Ok(s.clone());
    }
    let patch = |p: &RasterPatch| RasterPatch::new(n, n, p.bands().to_vec(), dihedral(p.data(), n, k));
    let mask = |m: &GroundTruthMask| GroundTruthMask::new(n, n, dihedral(m.labels(), n, k));
    BitemporalSample::new(
        patch(&s.pre)?,
        patch(&s.post)?,
        mask(&s.truth)?,
        s.water.as_ref().map(mask).transpose()?,
        s.event_id.clone(),
        s.split,
    )
}

impl BamCdModel {
    /// One optimiser step on a batch; returns the batch loss before the step.
    /// Gradients of the step stay in the parameter store until the next one.
    pub fn train_step(&mut self, batch: &[&BitemporalSample], adam: &mut Adam) -> Result<f64> {
        let pre: Vec<&RasterPatch> = batch.iter().map(|s| &s.pre).collect();
        let post: Vec<&RasterPatch> = batch.iter().map(|s| &s.post).collect();
        let target: Vec<f64> = batch
            .iter()
            .flat_map(|s| s.truth.labels().iter().map(|&l| f64::from(l)))
            .collect();
        let (a, b) = (self.input_tensor(&pre)?, self.input_tensor(&post)?);
        let mut tape = crate::autodiff::Tape::new();
        let (out, updates) = self.graph(&mut tape, a, b, Mode::Train)?;
        let loss = tape.loss(self.config.loss, out, &target)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Ok(value);
        }
        tape.backward(loss)?;
        let store = self.params_mut();
        store.zero_grad();
        tape.flush_param_grads(store);
        adam.step(store);
        self.apply_bn_updates(updates);
        Ok(value)
    }

    /// Pooled confusion counts of eval-mode predictions.
    pub fn evaluate(&self, samples: &[BitemporalSample]) -> Result<ConfusionCounts> {
        let mut total = ConfusionCounts::default();
        for chunk in samples.chunks(self.config.batch_size.max(1)) {
            let pre: Vec<&RasterPatch> = chunk.iter().map(|s| &s.pre).collect();
            let post: Vec<&RasterPatch> = chunk.iter().map(|s| &s.post).collect();
            for (probs, s) in self.forward_batch(&pre, &post, Mode::Eval)?.iter().zip(chunk) {
                total = total + accumulate_labels(&to_labels(probs), s.truth.labels())?;
            }
        }
        Ok(total)
    }

    /// Eval-mode binary map of one pair.
    pub fn predict_mask(&self, pre: &RasterPatch, post: &RasterPatch) -> Result<GroundTruthMask> {
        GroundTruthMask::new(pre.height(), pre.width(), to_labels(&self.forward(pre, post)?))
    }

    /// Tiles a scene, predicts each tile and stitches the binary maps.
    ///
    /// Full tiles are laid out row-major from the top-left corner. When the
    /// extents are not multiples of `patch_size`, an extra row and column of
    /// tiles aligned to the bottom and right edges covers the border; pixels
    /// covered twice take the later tile's prediction.
    pub fn predict_scene(&self, pre: &RasterPatch, post: &RasterPatch, patch_size: usize) -> Result<GroundTruthMask> {
        let (h, w) = (pre.height(), pre.width());
        if (post.height(), post.width()) != (h, w) {
            return Err(Error::dims("scene size", format!("{h}x{w}"), format!("{}x{}", post.height(), post.width())));
        }
        if patch_size == 0 || h < patch_size || w < patch_size {
            return Err(Error::Config(format!("scene {h}x{w} is smaller than patch size {patch_size}")));
        }
        let origins = scene_tiles(h, w, patch_size);
        let mut out = GroundTruthMask::zeros(h, w);
        for chunk in origins.chunks(self.config.batch_size.max(1)) {
            let pre_t: Vec<RasterPatch> = chunk.iter().map(|&(r, c)| pre.window(r, c, patch_size, patch_size)).collect();
            let post_t: Vec<RasterPatch> = chunk.iter().map(|&(r, c)| post.window(r, c, patch_size, patch_size)).collect();
            let maps = self.forward_batch(&pre_t.iter().collect::<Vec<_>>(), &post_t.iter().collect::<Vec<_>>(), Mode::Eval)?;
            for (&(r, c), probs) in chunk.iter().zip(&maps) {
                let labels = out.labels_mut();
                for y in 0..patch_size {
                    for x in 0..patch_size {
                        labels[(r + y) * w + c + x] = u8::from(probs[y * patch_size + x] >= PROBABILITY_THRESHOLD);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Tile origins used by [`BamCdModel::predict_scene`].
pub fn scene_tiles(height: usize, width: usize, patch_size: usize) -> Vec<(usize, usize)> {
    let axis = |n: usize| {
        let mut starts: Vec<usize> = (0..n / patch_size).map(|i| i * patch_size).collect();
        if n % patch_size != 0 {
            starts.push(n - patch_size);
        }
        starts
    };
    if height % patch_size == 0 && width % patch_size == 0 {
        return tile_origins(height, width, patch_size);
    }
    let cols = axis(width);
    axis(height)
        .into_iter()
        .flat_map(|r| cols.iter().map(move |&c| (r, c)))
        .collect()
}

/// Trains for `config.epochs` epochs and keeps the best-validation checkpoint.
pub fn train(mut model: BamCdModel, train: &[BitemporalSample], val: &[BitemporalSample]) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training needs non-empty train and val splits".into()));
    }
    let cfg = model.config.clone();
    let mut adam = Adam::new(cfg.learning_rate);
    let mut best: Option<(f64, usize, BamCdModel)> = None;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = seed::rng(cfg.seed, &format!("bamcd.epoch.{epoch}"));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<BitemporalSample> = idx
                .iter()
                .map(|&i| transform(&train[i], if cfg.augment { rng.random_range(0..8) } else { 0 }))
                .collect::<Result<_>>()?;
            let refs: Vec<&BitemporalSample> = batch.iter().collect();
            let loss = model.train_step(&refs, &mut adam)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            loss_sum += loss;
            batches += 1;
        }
        let val_f1 = compute_metrics(&model.evaluate(val)?).burnt.f1;
        trace.push(TraceRow {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_f1_burnt: val_f1,
        });
        log::info!("epoch {epoch}: train loss {:.5}, val burnt F1 {val_f1:.4}", loss_sum / batches as f64);
        if best.as_ref().is_none_or(|(f, _, _)| val_f1 > *f) {
            best = Some((val_f1, epoch, model.clone()));
        }
    }
    Ok(match best {
        Some((_, epoch, m)) => TrainOutcome {
            model: m,
            trace,
            best_epoch: Some(epoch),
        },
        None => TrainOutcome {
            model,
            trace,
            best_epoch: None,
        },
    })
}
