//! Penalized objectives, analytic gradients, a finite-difference oracle and
//! plain mini-batch SGD for the three classifier architectures.
//!
//! All gradients are flat vectors in the layout given by
//! [`Classifier::flat`].

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::cosine::CosineParams;
use crate::error::{Error, Result};
use crate::model::{
    self, check_dims, FeatureSet, LogisticParams, MlpParams, ProbMatrix, MLP_HIDDEN,
};
use crate::penalty::{self, PenaltyConfig, PenaltyKind};
use crate::seed;

/// A differentiable classifier producing one logit per class.
pub trait Classifier: Clone + Send + Sync {
    fn dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// [`Classifier::logits`] into a reused buffer.
    fn logits_into(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        *out = self.logits(x)?;
        Ok(())
    }

    fn param_count(&self) -> usize;

    fn flat(&self) -> Vec<f64>;

    fn set_flat(&mut self, values: &[f64]);

    /// Adds `J_xᵀ · dlogits` to `grad`, where `J_x` is the Jacobian of
    /// `logits(x)` with respect to the flat parameters.
    fn accumulate_grad(&self, x: &[f64], dlogits: &[f64], grad: &mut [f64]) -> Result<()>;

    fn probs(&self, features: &[Vec<f64>]) -> Result<ProbMatrix> {
        check_dims(features, self.dim())?;
        let logits = features
            .iter()
            .map(|x| self.logits(x))
            .collect::<Result<Vec<_>>>()?;
        ProbMatrix::from_logits(&logits)
    }
}

impl Classifier for LogisticParams {
    fn dim(&self) -> usize {
        LogisticParams::dim(self)
    }

    fn num_classes(&self) -> usize {
        LogisticParams::num_classes(self)
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(LogisticParams::logits(self, x))
    }

    fn logits_into(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        out.push(0.0);
        out.extend(self.betas().iter().map(|b| model::dot(b, x)));
        Ok(())
    }

    fn param_count(&self) -> usize {
        self.betas().len() * self.dim()
    }

    fn flat(&self) -> Vec<f64> {
        self.betas().concat()
    }

    fn set_flat(&mut self, values: &[f64]) {
        let d = LogisticParams::dim(self);
        for (b, chunk) in self.betas_mut().iter_mut().zip(values.chunks_exact(d)) {
            b.copy_from_slice(chunk);
        }
    }

    fn accumulate_grad(&self, x: &[f64], dlogits: &[f64], grad: &mut [f64]) -> Result<()> {
        let d = LogisticParams::dim(self);
        // logit 0 is the fixed reference and has no parameters
        for (g, &dz) in grad.chunks_exact_mut(d).zip(&dlogits[1..]) {
            if dz != 0.0 {
                for (gi, &xi) in g.iter_mut().zip(x) {
                    *gi += dz * xi;
                }
            }
        }
        Ok(())
    }
}

impl Classifier for MlpParams {
    fn dim(&self) -> usize {
        MlpParams::dim(self)
    }

    fn num_classes(&self) -> usize {
        MlpParams::num_classes(self)
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(MlpParams::logits(self, x))
    }

    fn param_count(&self) -> usize {
        MlpParams::param_count(self)
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(MlpParams::param_count(self));
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn set_flat(&mut self, values: &[f64]) {
        let mut rest = values;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
    }

    fn accumulate_grad(&self, x: &[f64], dlogits: &[f64], grad: &mut [f64]) -> Result<()> {
        let t = self.trace(x);
        let [l1, l2, l3] = &self.layers;
        let (g1, rest) = grad.split_at_mut(l1.weights.len() + l1.bias.len());
        let (g2, g3) = rest.split_at_mut(l2.weights.len() + l2.bias.len());

        let d_act2 = dense_backward(l3, &t.act2, dlogits, g3);
        let d_pre2: Vec<f64> = d_act2
            .iter()
            .zip(&t.pre2)
            .map(|(g, &a)| if a > 0.0 { *g } else { 0.0 })
            .collect();
        let d_act1 = dense_backward(l2, &t.act1, &d_pre2, g2);
        let d_pre1: Vec<f64> = d_act1
            .iter()
            .zip(&t.pre1)
            .map(|(g, &a)| if a > 0.0 { *g } else { 0.0 })
            .collect();
        dense_backward(l1, x, &d_pre1, g1);
        Ok(())
    }
}

/// Accumulates weight and bias gradients into `g` (weights then bias) and
/// returns the gradient with respect to the layer input.
fn dense_backward(layer: &model::Dense, input: &[f64], d_out: &[f64], g: &mut [f64]) -> Vec<f64> {
    let (gw, gb) = g.split_at_mut(layer.weights.len());
    let mut d_in = vec![0.0; layer.inputs];
    for (o, &dz) in d_out.iter().enumerate() {
        if dz == 0.0 {
            continue;
        }
        gb[o] += dz;
        let row = o * layer.inputs..(o + 1) * layer.inputs;
        for ((gwi, &w), (di, &xi)) in gw[row.clone()]
            .iter_mut()
            .zip(&layer.weights[row])
            .zip(d_in.iter_mut().zip(input))
        {
            *gwi += dz * xi;
            *di += dz * w;
        }
    }
    d_in
}

/// Mean cross-entropy plus the configured penalty, and its gradient.
pub fn loss_and_grad<C: Classifier>(
    params: &C,
    batch: &FeatureSet,
    penalty: &PenaltyConfig,
) -> Result<(f64, Vec<f64>)> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (loss, grad) = objective(params, batch, &idx, penalty, Want::Both)?;
    Ok((loss, grad.expect("gradient requested")))
}

/// Loss only.
pub fn loss<C: Classifier>(params: &C, batch: &FeatureSet, penalty: &PenaltyConfig) -> Result<f64> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    Ok(objective(params, batch, &idx, penalty, Want::Loss)?.0)
}

fn check_batch<C: Classifier>(params: &C, data: &FeatureSet) -> Result<()> {
    if data.dim() != params.dim() {
        return Err(Error::invalid(format!(
            "data dimension {} does not match model dimension {}",
            data.dim(),
            params.dim()
        )));
    }
    if data.num_classes() != params.num_classes() {
        return Err(Error::invalid(format!(
            "data has {} classes, model has {}",
            data.num_classes(),
            params.num_classes()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Want {
    Loss,
    Grad,
    Both,
}

/// With `Want::Grad` the returned loss omits the distribution penalty.
fn objective<C: Classifier>(
    params: &C,
    data: &FeatureSet,
    idx: &[usize],
    penalty: &PenaltyConfig,
    want: Want,
) -> Result<(f64, Option<Vec<f64>>)> {
    let want_grad = want != Want::Loss;
    penalty.validate()?;
    check_batch(params, data)?;
    if idx.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = idx.len() as f64;
    let mut grad = want_grad.then(|| vec![0.0; params.param_count()]);
    let row_penalty = penalty.is_active() && penalty.kind.acts_on_probs();
    let prior = penalty.prior.as_deref();
    if row_penalty {
        if let Some(p) = prior {
            if p.len() != params.num_classes() {
                return Err(Error::invalid("prior length does not match class count"));
            }
        }
    }

    let features = data.features();
    let labels = data.labels();
    let mut total = 0.0;
    let (mut z, mut dz) = (Vec::new(), Vec::new());
    for &i in idx {
        let x = &features[i];
        let y = labels[i];
        params.logits_into(x, &mut z)?;
        let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let zy = z[y] - m;
        let mut sum = 0.0;
        for v in z.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        total += -(zy - sum.ln()).max(model::PROB_FLOOR.ln());
        // z now holds probabilities
        z.iter_mut().for_each(|v| *v /= sum);
        if row_penalty && want != Want::Grad {
            total += penalty.lambda * penalty::row_value(penalty.kind, prior, &z);
        }
        if let Some(g) = grad.as_mut() {
            dz.clone_from(&z);
            dz[y] -= 1.0;
            if row_penalty {
                penalty::add_row_logit_grad(penalty.kind, prior, &z, penalty.lambda, &mut dz);
            }
            dz.iter_mut().for_each(|v| *v /= n);
            params.accumulate_grad(x, &dz, g)?;
        }
    }
    let mut loss = total / n;

    if penalty.is_active() && penalty.kind == PenaltyKind::L2MeanSquared {
        let theta = params.flat();
        loss += penalty.lambda * penalty::l2_mean_squared(&theta);
        if let Some(g) = grad.as_mut() {
            let c = 2.0 * penalty.lambda / theta.len() as f64;
            for (gi, t) in g.iter_mut().zip(&theta) {
                *gi += c * t;
            }
        }
    }
    Ok((loss, grad))
}

/// Central differences of the scalar loss, one coordinate at a time.
pub fn finite_diff_grad<C: Classifier>(
    params: &C,
    batch: &FeatureSet,
    penalty: &PenaltyConfig,
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let base = params.flat();
    let mut probe = params.clone();
    let mut theta = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        theta[k] = base[k] + step;
        probe.set_flat(&theta);
        let up = loss(&probe, batch, penalty)?;
        theta[k] = base[k] - step;
        probe.set_flat(&theta);
        let down = loss(&probe, batch, penalty)?;
        theta[k] = base[k];
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Classifier architecture trained by [`sgd_train`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arch {
    /// Features → classes → softmax, class 0 as zero reference.
    Logistic,
    /// Features → h1 → ReLU → h2 → ReLU → classes → softmax.
    Mlp { hidden: (usize, usize) },
    /// Scaled cosine similarity to every class weight.
    Cosine { tau: f64 },
}

impl Arch {
    pub const DEFAULT_TAU: f64 = 10.0;

    pub fn mlp() -> Self {
        Arch::Mlp { hidden: MLP_HIDDEN }
    }

    pub fn cosine() -> Self {
        Arch::Cosine {
            tau: Self::DEFAULT_TAU,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Arch::Logistic => "logistic",
            Arch::Mlp { .. } => "mlp",
            Arch::Cosine { .. } => "cosine",
        }
    }

    /// 400 epochs for the single-layer heads, 100 for the MLP.
    pub fn default_epochs(&self) -> usize {
        match self {
            Arch::Mlp { .. } => 100,
            _ => 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub penalty: PenaltyConfig,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            batch_size: 10,
            epochs: 400,
            penalty: PenaltyConfig::none(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn for_arch(arch: Arch) -> Self {
        Self {
            epochs: arch.default_epochs(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        self.penalty.validate()
    }
}

/// Parameters produced by [`sgd_train`].
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Logistic(LogisticParams),
    Mlp(MlpParams),
    Cosine(CosineParams),
}

impl TrainedModel {
    pub fn probs(&self, features: &[Vec<f64>]) -> Result<ProbMatrix> {
        match self {
            TrainedModel::Logistic(p) => p.probs(features),
            TrainedModel::Mlp(p) => p.probs(features),
            TrainedModel::Cosine(p) => p.probs(features),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        match self {
            TrainedModel::Logistic(p) => p.flat(),
            TrainedModel::Mlp(p) => p.flat(),
            TrainedModel::Cosine(p) => p.flat(),
        }
    }

    pub fn accuracy(&self, data: &FeatureSet) -> Result<f64> {
        Ok(self.probs(data.features())?.accuracy(data.labels()))
    }
}

/// Initial parameters for `arch`. The logistic head starts at zero; the
/// others draw from the `init` stream of `seed`.
pub fn init_params(arch: Arch, dim: usize, num_classes: usize, seed: u64) -> TrainedModel {
    let init_seed = seed::derive(seed, "init", 0);
    match arch {
        Arch::Logistic => TrainedModel::Logistic(LogisticParams::zeros(num_classes, dim)),
        Arch::Mlp { hidden } => {
            TrainedModel::Mlp(MlpParams::glorot(dim, hidden, num_classes, init_seed))
        }
        Arch::Cosine { tau } => {
            let mut rng = seed::rng(init_seed);
            let weights = (0..num_classes)
                .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            TrainedModel::Cosine(CosineParams::new(weights, tau).expect("gaussian init"))
        }
    }
}

/// Plain mini-batch SGD: no momentum, fixed learning rate, last partial
/// batch kept. Output is a pure function of `(data, config, arch)`.
pub fn sgd_train(data: &FeatureSet, config: &TrainConfig, arch: Arch) -> Result<TrainedModel> {
    config.validate()?;
    if data.num_classes() < 2 {
        return Err(Error::invalid("training needs at least two classes"));
    }
    if let Arch::Cosine { tau } = arch {
        if !(tau > 0.0) {
            return Err(Error::Config(format!("cosine scale must be positive, got {tau}")));
        }
    }
    Ok(match init_params(arch, data.dim(), data.num_classes(), config.seed) {
        TrainedModel::Logistic(p) => TrainedModel::Logistic(sgd(p, data, config)?),
        TrainedModel::Mlp(p) => TrainedModel::Mlp(sgd(p, data, config)?),
        TrainedModel::Cosine(p) => TrainedModel::Cosine(sgd(p, data, config)?),
    })
}

/// SGD from explicit starting parameters.
pub fn sgd<C: Classifier>(mut params: C, data: &FeatureSet, config: &TrainConfig) -> Result<C> {
    config.validate()?;
    check_batch(&params, data)?;
    let mut rng = seed::child_rng(config.seed, "shuffle", 0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut theta = params.flat();
    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = objective(&params, data, batch, &config.penalty, Want::Grad)?;
            let grad = grad.expect("gradient requested");
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= config.learning_rate * g;
            }
            params.set_flat(&theta);
        }
    }
    Ok(params)
}

/// Mean `KL(U ‖ P_i)` of a model over a data set.
pub fn mean_kl_to_uniform(model: &TrainedModel, data: &FeatureSet) -> Result<f64> {
    Ok(penalty::kl_uniform(&model.probs(data.features())?))
}
