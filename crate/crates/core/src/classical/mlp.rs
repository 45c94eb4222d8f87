use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::{check_training_data, Classifier};
use crate::autodiff::{Adam, ParamId, ParamStore, Tape, Tensor, Var};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 64,
        }
    }
}

/// Fully connected network: ReLU hidden layers, logistic output. Inputs are
/// standardised with the stored per-feature mean and scale first.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// `[d, h1, ..., 1]`.
    pub widths: Vec<usize>,
    /// Layer `l` weights, `widths[l] x widths[l + 1]` row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpFit {
    pub model: MlpModel,
    /// Mean BCE over the whole training set after each epoch.
    pub loss_trace: Vec<f64>,
}

fn labels_f64(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| f64::from(l)).collect()
}

impl MlpModel {
    /// A network with identity input scaling.
    pub fn from_parts(widths: Vec<usize>, weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) || *widths.last().unwrap() != 1 {
            return Err(Error::Config(format!("layer widths {widths:?} must be positive and end in 1")));
        }
        if weights.len() != widths.len() - 1 || biases.len() != weights.len() {
            return Err(Error::dims("layer count", widths.len() - 1, weights.len()));
        }
        for l in 0..weights.len() {
            if weights[l].len() != widths[l] * widths[l + 1] {
                return Err(Error::dims(format!("layer {l} weights"), widths[l] * widths[l + 1], weights[l].len()));
            }
            if biases[l].len() != widths[l + 1] {
                return Err(Error::dims(format!("layer {l} bias"), widths[l + 1], biases[l].len()));
            }
        }
        let d = widths[0];
        Ok(Self {
            widths,
            weights,
            biases,
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        })
    }

    fn standardize(&self, rows: &[Vec<f64>]) -> Result<Tensor> {
        let d = self.widths[0];
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::dims("feature vector", d, r.len()));
            }
            data.extend(r.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s));
        }
        Tensor::new(vec![rows.len(), d], data)
    }

    fn store(&self) -> (ParamStore, Vec<(ParamId, ParamId)>) {
        let mut store = ParamStore::new();
        let ids = (0..self.weights.len())
            .map(|l| {
                let (i, o) = (self.widths[l], self.widths[l + 1]);
                let w = store.add(format!("w{l}"), Tensor::new(vec![i, o], self.weights[l].clone()).unwrap());
                let b = store.add(format!("b{l}"), Tensor::new(vec![o], self.biases[l].clone()).unwrap());
                (w, b)
            })
            .collect();
        (store, ids)
    }

    fn load(&mut self, store: &ParamStore, ids: &[(ParamId, ParamId)]) {
        for (l, &(w, b)) in ids.iter().enumerate() {
            self.weights[l] = store.value(w).data().to_vec();
            self.biases[l] = store.value(b).data().to_vec();
        }
    }

    fn graph(tape: &mut Tape, store: &ParamStore, ids: &[(ParamId, ParamId)], x: Tensor) -> Result<Var> {
        let mut h = tape.constant(x);
        for (l, &(w, b)) in ids.iter().enumerate() {
            let (w, b) = (tape.param(store, w), tape.param(store, b));
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            h = if l + 1 == ids.len() { tape.sigmoid(z) } else { tape.relu(z) };
        }
        Ok(h)
    }

    /// Probabilities for a batch of raw feature vectors.
    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let (store, ids) = self.store();
        let mut tape = Tape::new();
        let out = Self::graph(&mut tape, &store, &ids, self.standardize(rows)?)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Mean BCE on a batch and its gradient for every weight and bias, in
    /// the order `w0, b0, w1, b1, ...`.
    pub fn loss_and_grads(&self, rows: &[Vec<f64>], labels: &[u8]) -> Result<(f64, Vec<Vec<f64>>)> {
        let (mut store, ids) = self.store();
        let mut tape = Tape::new();
        let out = Self::graph(&mut tape, &store, &ids, self.standardize(rows)?)?;
        let loss = tape.bce(out, &labels_f64(labels))?;
        tape.backward(loss)?;
        tape.flush_param_grads(&mut store);
        let grads = ids
            .iter()
            .flat_map(|&(w, b)| [store.grad(w).to_vec(), store.grad(b).to_vec()])
            .collect();
        Ok((tape.value(loss).item(), grads))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.push_text("kind", "mlp");
        c.push_i64("widths", self.widths.iter().map(|&w| w as i64).collect());
        c.push_f64("mean", &[self.mean.len()], self.mean.clone());
        c.push_f64("scale", &[self.scale.len()], self.scale.clone());
        for l in 0..self.weights.len() {
            c.push_f64(format!("w{l}"), &[self.widths[l], self.widths[l + 1]], self.weights[l].clone());
            c.push_f64(format!("b{l}"), &[self.widths[l + 1]], self.biases[l].clone());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.text("kind")? != "mlp" {
            return Err(Error::Format {
                offset: 0,
                reason: "mlp container: wrong kind".into(),
            });
        }
        let widths: Vec<usize> = c.i64s("widths")?.iter().map(|&w| w as usize).collect();
        let layers = widths.len().saturating_sub(1);
        let weights = (0..layers).map(|l| Ok(c.f64s(&format!("w{l}"))?.1.to_vec())).collect::<Result<_>>()?;
        let biases = (0..layers).map(|l| Ok(c.f64s(&format!("b{l}"))?.1.to_vec())).collect::<Result<_>>()?;
        let mut m = Self::from_parts(widths, weights, biases)?;
        m.mean = c.f64s("mean")?.1.to_vec();
        m.scale = c.f64s("scale")?.1.to_vec();
        if m.mean.len() != m.widths[0] || m.scale.len() != m.widths[0] {
            return Err(Error::dims("input scaling", m.widths[0], m.mean.len()));
        }
        Ok(m)
    }
}

impl Classifier for MlpModel {
    fn n_features(&self) -> usize {
        self.widths[0]
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_batch(std::slice::from_ref(&x.to_vec()))?[0])
    }

    fn predict_many(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.chunks(4096)
            .map(|c| self.predict_batch(c))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.concat())
    }
}

/// He-normal initialisation, then mini-batch Adam on mean BCE.
pub fn mlp_fit(features: &[Vec<f64>], labels: &[u8], params: &MlpParams, seed: u64) -> Result<MlpFit> {
    let d = check_training_data(features, labels)?;
    if !features.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::Fit("MLP features must be finite".into()));
    }
    if params.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut widths = vec![d];
    widths.extend(&params.hidden);
    widths.push(1);

    let mut rng = seed::rng(seed, "mlp.init");
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..widths.len() - 1 {
        let normal = Normal::new(0.0, (2.0 / widths[l] as f64).sqrt()).unwrap();
        weights.push((0..widths[l] * widths[l + 1]).map(|_| normal.sample(&mut rng)).collect());
        biases.push(vec![0.0; widths[l + 1]]);
    }
    let mut model = MlpModel::from_parts(widths, weights, biases)?;
    let n = features.len() as f64;
    for j in 0..d {
        let mean = features.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = features.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        model.mean[j] = mean;
        model.scale[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }

    let (mut store, ids) = model.store();
    let mut adam = Adam::new(params.learning_rate);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut trace = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        order.shuffle(&mut seed::rng(seed, &format!("mlp.shuffle.{epoch}")));
        for batch in order.chunks(params.batch_size) {
            let rows: Vec<Vec<f64>> = batch.iter().map(|&i| features[i].clone()).collect();
            let y: Vec<f64> = batch.iter().map(|&i| f64::from(labels[i])).collect();
            let mut tape = Tape::new();
            let out = MlpModel::graph(&mut tape, &store, &ids, model.standardize(&rows)?)?;
            let loss = tape.bce(out, &y)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch: epoch + 1, loss: value });
            }
            tape.backward(loss)?;
            store.zero_grad();
            tape.flush_param_grads(&mut store);
            adam.step(&mut store);
        }
        model.load(&store, &ids);
        let probs = model.predict_many(features)?;
        let loss = crate::autodiff::bce_value(&probs, &labels_f64(labels));
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch: epoch + 1, loss });
        }
        trace.push(loss);
    }
    Ok(MlpFit {
        model,
        loss_trace: trace,
    })
}
