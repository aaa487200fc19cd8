//! Regularised training of both model families, optimisers, accuracy and
//! grokking metrics.
//!
//! The objective is `mean cross-entropy + λ·R(θ)` where `R` is the
//! `L_{2,k+1}` norm for the MLP and the global Euclidean norm over all
//! parameter matrices for attention models.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::budget;
use crate::dataset::{ModAddDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::fourier;
use crate::mlp::{self, MlpParams, NeuronParams};
use crate::rng::SplitMix64;
use crate::transformer::{self, AttnConfig, AttnParams};

/// Rows per forward pass during evaluation.
const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adamw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub p: usize,
    pub k: usize,
    /// Hidden neurons (MLP) or heads per layer (attention).
    pub width: usize,
    /// Standard deviation of the Gaussian MLP initialisation.
    pub init_scale: f64,
    pub d_model: usize,
    pub d_head: usize,
    pub layers: usize,
    pub residual: bool,
    pub layer_norm: bool,
    pub positional: bool,
    pub tied_unembed: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mlp,
            p: 11,
            k: 3,
            width: 160,
            init_scale: 0.1,
            d_model: 32,
            d_head: 8,
            layers: 1,
            residual: false,
            layer_norm: false,
            positional: true,
            tied_unembed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Decoupled decay: `θ ← θ - lr·weight_decay·θ` every step.
    pub weight_decay: f64,
    pub eps: f64,
    /// Linear ramp of the learning rate over this many steps.
    pub warmup: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::Adamw, lr: 5e-3, beta1: 0.9, beta2: 0.98, weight_decay: 0.0, eps: 1e-8, warmup: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Regularisation strength λ.
    pub lambda: f64,
    pub train_fraction: f64,
    pub seed: u64,
    pub eval_interval: usize,
    /// Record the normalised margin of the MLP on the training set.
    pub track_margin: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 1024,
            lambda: 0.005,
            train_fraction: 1.0,
            seed: 0,
            eval_interval: 100,
            track_margin: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub run: RunConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (m, o, r) = (&self.model, &self.optimizer, &self.run);
        budget::check_modulus(m.p)?;
        budget::check_arity(m.k, 2, mlp::MAX_ENUM_ARITY)?;
        if m.width == 0 {
            return Err(Error::Config("model.width must be at least 1".into()));
        }
        if m.kind == ModelKind::Attention {
            self.attn_config().validate()?;
        }
        if !(m.init_scale.is_finite() && m.init_scale >= 0.0) {
            return Err(Error::Config(format!("model.init_scale must be finite and >= 0 (got {})", m.init_scale)));
        }
        if r.batch_size == 0 || r.eval_interval == 0 {
            return Err(Error::Config("run.batch_size and run.eval_interval must be positive".into()));
        }
        if !(r.lambda.is_finite() && r.lambda >= 0.0) {
            return Err(Error::Config(format!("run.lambda must be >= 0 (got {})", r.lambda)));
        }
        if !(r.train_fraction > 0.0 && r.train_fraction <= 1.0) {
            return Err(Error::InvalidFraction(r.train_fraction));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(o.lr) || !finite_nonneg(o.weight_decay) || !(o.eps > 0.0) {
            return Err(Error::Config("optimizer.lr, weight_decay must be >= 0 and eps > 0".into()));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(Error::Config("optimizer betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn attn_config(&self) -> AttnConfig {
        let m = &self.model;
        AttnConfig {
            p: m.p,
            k: m.k,
            heads: m.width,
            d_model: m.d_model,
            d_head: m.d_head,
            layers: m.layers,
            seed: self.run.seed,
            residual: m.residual,
            layer_norm: m.layer_norm,
            positional: m.positional,
            tied_unembed: m.tied_unembed,
        }
    }
}

/// Either trainable model with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Mlp(MlpParams),
    Attention(AttnParams),
}

/// Gaussian MLP initialisation with standard deviation `scale`.
pub fn init_mlp(p: usize, k: usize, m: usize, scale: f64, seed: u64) -> MlpParams {
    let mut rng = SplitMix64::derive(seed, 0x4D4C50);
    let mut draw = |n: usize| (0..n).map(|_| scale * rng.normal()).collect::<Vec<f64>>();
    let neurons = (0..m).map(|_| NeuronParams { u: (0..k).map(|_| draw(p)).collect(), w: draw(p) }).collect();
    MlpParams::new(p, k, neurons).expect("shapes are consistent by construction")
}

pub fn init_model(cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    let m = &cfg.model;
    Ok(match m.kind {
        ModelKind::Mlp => Model::Mlp(init_mlp(m.p, m.k, m.width, m.init_scale, cfg.run.seed)),
        ModelKind::Attention => Model::Attention(transformer::init_transformer(&cfg.attn_config())?),
    })
}

fn mlp_tensors(params: &MlpParams) -> Vec<Tensor> {
    let (p, k, m) = (params.p(), params.k(), params.m());
    let mut out = Vec::with_capacity(k + 1);
    for j in 0..k {
        let mut data = vec![0.0; p * m];
        for (i, n) in params.neurons().iter().enumerate() {
            for a in 0..p {
                data[a * m + i] = n.u[j][a];
            }
        }
        out.push(Tensor::matrix(p, m, data).expect("sized"));
    }
    let w = params.neurons().iter().flat_map(|n| n.w.iter().copied()).collect();
    out.push(Tensor::matrix(m, p, w).expect("sized"));
    out
}

fn mlp_from_tensors(p: usize, k: usize, m: usize, tensors: &[Tensor]) -> Result<MlpParams> {
    if tensors.len() != k + 1
        || tensors[..k].iter().any(|t| t.shape() != [p, m])
        || tensors[k].shape() != [m, p]
    {
        return Err(Error::Shape(format!("MLP tensors do not match p={p}, k={k}, m={m}")));
    }
    let neurons = (0..m)
        .map(|i| NeuronParams {
            u: (0..k).map(|j| (0..p).map(|a| tensors[j].at2(a, i)).collect()).collect(),
            w: tensors[k].data()[i * p..(i + 1) * p].to_vec(),
        })
        .collect();
    MlpParams::new(p, k, neurons)
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Mlp(_) => ModelKind::Mlp,
            Model::Attention(_) => ModelKind::Attention,
        }
    }

    pub fn p(&self) -> usize {
        match self {
            Model::Mlp(m) => m.p(),
            Model::Attention(a) => a.config().p,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Model::Mlp(m) => m.k(),
            Model::Attention(a) => a.config().k,
        }
    }

    /// Parameter tensors in canonical order. MLP: `U_1..U_k` (`p × m`, column
    /// `i` is neuron `i`) then `W` (`m × p`).
    pub fn tensors(&self) -> Vec<Tensor> {
        match self {
            Model::Mlp(m) => mlp_tensors(m),
            Model::Attention(a) => a.tensors(),
        }
    }

    /// Same architecture, new parameter values.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Model> {
        Ok(match self {
            Model::Mlp(m) => Model::Mlp(mlp_from_tensors(m.p(), m.k(), m.m(), &tensors)?),
            Model::Attention(a) => Model::Attention(AttnParams::from_tensors(a.config(), tensors)?),
        })
    }

    /// `N × p` logits node for a flat batch of tuples.
    pub fn logits_graph(&self, g: &mut Graph, vars: &[Var], inputs: &[usize]) -> Result<Var> {
        match self {
            Model::Mlp(m) => {
                let k = m.k();
                if inputs.is_empty() || inputs.len() % k != 0 {
                    return Err(Error::Shape(format!("{} inputs is not a positive multiple of k={k}", inputs.len())));
                }
                let mut h: Option<Var> = None;
                for j in 0..k {
                    let col: Vec<usize> = inputs.iter().skip(j).step_by(k).copied().collect();
                    let rows = g.gather_rows(vars[j], &col)?;
                    h = Some(match h {
                        None => rows,
                        Some(acc) => g.add(acc, rows)?,
                    });
                }
                let act = g.integer_power(h.expect("k >= 2"), k as i32)?;
                g.matmul(act, vars[k])
            }
            Model::Attention(a) => a.logits_graph(g, vars, inputs),
        }
    }

    /// `R(θ)` on the tape.
    pub fn regularizer_graph(&self, g: &mut Graph, vars: &[Var]) -> Result<Var> {
        match self {
            Model::Mlp(m) => {
                let k = m.k();
                let mut sq = Vec::with_capacity(k + 1);
                for &u in &vars[..k] {
                    let uu = g.mul(u, u)?;
                    sq.push(g.sum_cols(uu)?);
                }
                let ww = g.mul(vars[k], vars[k])?;
                sq.push(g.sum_rows(ww)?);
                let mut s = sq[0];
                for &t in &sq[1..] {
                    s = g.add(s, t)?;
                }
                let per_neuron = g.real_power(s, (k as f64 + 1.0) / 2.0);
                let total = g.sum(per_neuron);
                Ok(g.real_power(total, 1.0 / (k as f64 + 1.0)))
            }
            Model::Attention(_) => {
                let mut parts = Vec::with_capacity(vars.len());
                for &v in vars {
                    let vv = g.mul(v, v)?;
                    parts.push(g.sum(vv));
                }
                let mut total = parts[0];
                for &t in &parts[1..] {
                    total = g.add(total, t)?;
                }
                Ok(g.real_power(total, 0.5))
            }
        }
    }

    pub fn regularizer_value(&self) -> f64 {
        match self {
            Model::Mlp(m) => mlp::l2k1_norm(m),
            Model::Attention(a) => a.tensors().iter().flat_map(|t| t.data().to_vec()).map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    /// Row-major `N × p` logits.
    pub fn logits(&self, inputs: &[usize]) -> Result<Vec<f64>> {
        let k = self.k();
        let mut out = Vec::with_capacity(inputs.len() / k.max(1) * self.p());
        for chunk in inputs.chunks(EVAL_CHUNK * k) {
            let mut g = Graph::new();
            let vars: Vec<Var> = self.tensors().into_iter().map(|t| g.constant(t)).collect();
            let l = self.logits_graph(&mut g, &vars, chunk)?;
            out.extend_from_slice(g.value(l).data());
        }
        Ok(out)
    }
}

/// Index of the largest entry; ties go to the smaller index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn loss_and_accuracy(model: &Model, ds: &ModAddDataset) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let p = model.p();
    let logits = model.logits(ds.inputs())?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (row, &y) in logits.chunks_exact(p).zip(ds.labels()) {
        loss += crate::autodiff::cross_entropy(row, y)?;
        correct += usize::from(argmax(row) == y);
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

/// Fraction of points whose argmax logit equals the label.
pub fn accuracy(model: &Model, ds: &ModAddDataset) -> Result<f64> {
    Ok(loss_and_accuracy(model, ds)?.1)
}

/// `mean CE(batch) + λ·R(θ)`.
pub fn regularized_loss(model: &Model, inputs: &[usize], labels: &[usize], lambda: f64) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = model.tensors().into_iter().map(|t| g.constant(t)).collect();
    let out = objective_graph(model, &mut g, &vars, inputs, labels, lambda)?;
    Ok(g.value(out).item())
}

/// Records the regularised objective on `g`.
pub fn objective_graph(
    model: &Model,
    g: &mut Graph,
    vars: &[Var],
    inputs: &[usize],
    labels: &[usize],
    lambda: f64,
) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let logits = model.logits_graph(g, vars, inputs)?;
    let ce = g.cross_entropy(logits, labels)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    let r = model.regularizer_graph(g, vars)?;
    let r = g.scale(r, lambda);
    g.add(ce, r)
}

/// SGD or AdamW over a list of tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Optimizer {
    pub fn new(cfg: &OptimizerConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|t| vec![0.0; t.len()]).collect();
        Self { cfg: cfg.clone(), m: zeros.clone(), v: zeros, t: 0 }
    }

    /// Learning rate for 0-based `step`, ramping linearly over the warmup.
    pub fn lr_at(&self, step: usize) -> f64 {
        let w = self.cfg.warmup;
        if w == 0 || step >= w {
            self.cfg.lr
        } else {
            self.cfg.lr * (step + 1) as f64 / w as f64
        }
    }

    /// One update; a missing gradient counts as zero.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<&Tensor>], lr: f64) {
        self.t += 1;
        let c = &self.cfg;
        let (bc1, bc2) = (1.0 - c.beta1.powi(self.t), 1.0 - c.beta2.powi(self.t));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let data = p.data_mut();
            let zero;
            let g = match g {
                Some(g) => g.data(),
                None => {
                    zero = vec![0.0; data.len()];
                    &zero
                }
            };
            match c.kind {
                OptimizerKind::Sgd => {
                    for (x, &gx) in data.iter_mut().zip(g) {
                        *x -= lr * (gx + c.weight_decay * *x);
                    }
                }
                OptimizerKind::Adamw => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (j, (x, &gx)) in data.iter_mut().zip(g).enumerate() {
                        *x -= lr * c.weight_decay * *x;
                        m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gx;
                        v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gx * gx;
                        let mh = m[j] / bc1;
                        let vh = v[j] / bc2;
                        *x -= lr * mh / (vh.sqrt() + c.eps);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    /// `λ·R(θ)`.
    pub reg_term: f64,
    pub normalized_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    records: Vec<TrainRecord>,
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record; steps must strictly increase.
    pub fn push(&mut self, r: TrainRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.step <= last.step {
                return Err(Error::Config(format!("trace step {} does not follow {}", r.step, last.step)));
            }
        }
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[TrainRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,train_loss,train_acc,val_acc,reg_term,normalized_margin\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step,
                r.train_loss,
                r.train_acc,
                opt_field(r.val_acc),
                r.reg_term,
                opt_field(r.normalized_margin)
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final parameters, or the last finite ones if training diverged.
    pub model: Model,
    pub initial: Model,
    pub trace: TrainTrace,
    pub divergence: Option<Divergence>,
}

/// Builds the dataset, splits it and trains.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ds = ModAddDataset::generate_full(cfg.model.p, cfg.model.k)?;
    let (tr, va) = ds.split(&SplitSpec { train_fraction: cfg.run.train_fraction, seed: cfg.run.seed })?;
    train_on(cfg, &tr, (!va.is_empty()).then_some(&va))
}

fn evaluate(
    model: &Model,
    step: usize,
    cfg: &TrainConfig,
    train: &ModAddDataset,
    val: Option<&ModAddDataset>,
) -> Result<TrainRecord> {
    let (train_loss, train_acc) = loss_and_accuracy(model, train)?;
    let val_acc = val.map(|v| accuracy(model, v)).transpose()?;
    let normalized_margin = match (model, cfg.run.track_margin) {
        (Model::Mlp(m), true) => Some(mlp::dataset_margin_h(m, train, false)?.normalized_margin),
        _ => None,
    };
    Ok(TrainRecord {
        step,
        train_loss,
        train_acc,
        val_acc,
        reg_term: cfg.run.lambda * model.regularizer_value(),
        normalized_margin,
    })
}

/// Trains on the given split. Deterministic in `cfg` and the data.
pub fn train_on(cfg: &TrainConfig, train: &ModAddDataset, val: Option<&ModAddDataset>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let initial = init_model(cfg)?;
    let r = &cfg.run;
    let mut params = initial.tensors();
    let mut opt = Optimizer::new(&cfg.optimizer, &params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = SplitMix64::derive(r.seed, 0xBA7C);
    let mut cursor = order.len();
    let mut trace = TrainTrace::new();
    let mut divergence = None;
    let mut model = initial.clone();
    let k = train.k();
    let bs = r.batch_size.min(train.len());
    let mut inputs = Vec::with_capacity(bs * k);
    let mut labels = Vec::with_capacity(bs);

    for step in 0..r.steps {
        if step % r.eval_interval == 0 {
            trace.push(evaluate(&model, step, cfg, train, val)?)?;
        }
        if cursor >= order.len() {
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let end = (cursor + bs).min(order.len());
        inputs.clear();
        labels.clear();
        for &i in &order[cursor..end] {
            inputs.extend_from_slice(train.input(i));
            labels.push(train.label(i));
        }
        cursor = end;

        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
        let loss = objective_graph(&model, &mut g, &vars, &inputs, &labels, r.lambda)?;
        let lv = g.value(loss).item();
        if !lv.is_finite() {
            divergence = Some(Divergence { step, loss: lv });
            break;
        }
        g.backward(loss)?;
        let grads: Vec<Option<&Tensor>> = vars.iter().map(|&v| g.grad(v)).collect();
        let mut next = params.clone();
        opt.step(&mut next, &grads, opt.lr_at(step));
        if next.iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
            divergence = Some(Divergence { step, loss: f64::NAN });
            break;
        }
        params = next;
        model = model.with_tensors(params.clone())?;
    }
    let done = divergence.map_or(r.steps, |d| d.step);
    if trace.last().map_or(true, |l| l.step < done) {
        trace.push(evaluate(&model, done, cfg, train, val)?)?;
    }
    Ok(TrainOutcome { model, initial, trace, divergence })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrokMetrics {
    pub step_train: Option<usize>,
    pub step_val: Option<usize>,
    /// `step_val - step_train` when both thresholds are reached.
    pub delay: Option<i64>,
}

pub const GROK_THRESHOLD: f64 = 0.99;

/// First steps at which train and validation accuracy reach `threshold`.
pub fn grokking_metrics(trace: &TrainTrace, threshold: f64) -> Result<GrokMetrics> {
    if trace.records().is_empty() {
        return Err(Error::Empty("trace"));
    }
    let first = |f: &dyn Fn(&TrainRecord) -> Option<f64>| {
        trace.records().iter().find(|r| f(r).is_some_and(|a| a >= threshold)).map(|r| r.step)
    };
    let step_train = first(&|r| Some(r.train_acc));
    let step_val = first(&|r| r.val_acc);
    let delay = match (step_train, step_val) {
        (Some(t), Some(v)) => Some(v as i64 - t as i64),
        _ => None,
    };
    Ok(GrokMetrics { step_train, step_val, delay })
}

/// Per-neuron frequency summary of an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronFrequency {
    pub neuron: usize,
    pub norm: f64,
    /// `None` when every table is constant.
    pub peak: Option<fourier::FrequencyPeak>,
}

/// Dominant frequency and max normalised power of each neuron, pooling the
/// spectra of all `k + 1` tables.
pub fn neuron_frequencies(params: &MlpParams) -> Result<Vec<NeuronFrequency>> {
    params
        .neurons()
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let power = fourier::combined_frequency_power(&n.tables(), params.p())?;
            let peak = fourier::peak_of(&power).ok();
            Ok(NeuronFrequency { neuron: i, norm: n.l2_norm(), peak })
        })
        .collect()
}

/// Neurons whose norm is at least this fraction of the largest norm.
pub const ACTIVE_NEURON_FRACTION: f64 = 0.1;

pub fn active_neurons(freqs: &[NeuronFrequency]) -> Vec<&NeuronFrequency> {
    let max = freqs.iter().map(|f| f.norm).fold(0.0, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    freqs.iter().filter(|f| f.norm >= ACTIVE_NEURON_FRACTION * max).collect()
}
