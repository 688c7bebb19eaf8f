//! Generator and discriminator.
//!
//! Both stacks are parameterized by the patch side `sp` (a multiple of 4)
//! and the class count `n`. The discriminator's class head has `2n` slots:
//! slots `0..n` are the real classes and slot `n + i` is "generated sample of
//! class `i + 1`".
//!
//! Models hold their weights in a [`ParamSet`]. A forward pass binds that set
//! onto a [`Tape`] (see [`ParamSet::bind`]) and threads the resulting vars
//! through [`Generator::forward`] or [`Discriminator::forward`], so the same
//! code serves training, frozen evaluation and gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{BnStats, Element, EngineError, Mode, ParamSet, Tape, Tensor, Var};

pub const Z_DIM: usize = 100;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const DROPOUT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("invalid architecture: {0}")]
    Parameter(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Architecture hyperparameters shared by G and D.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetSpec {
    pub sp: usize,
    pub classes: usize,
    pub z_dim: usize,
    /// Feature widths of the three convolution stages, narrowest first.
    pub widths: [usize; 3],
}

impl NetSpec {
    /// Full-size stacks: widths 128/256/512, 100-dimensional noise.
    pub fn new(sp: usize, classes: usize) -> Result<Self, NetError> {
        Self::with_widths(sp, classes, Z_DIM, [128, 256, 512])
    }

    /// Same layer arithmetic with custom widths, for miniature models.
    pub fn with_widths(sp: usize, classes: usize, z_dim: usize, widths: [usize; 3]) -> Result<Self, NetError> {
        if sp == 0 || !sp.is_multiple_of(4) {
            return Err(NetError::Parameter(format!("patch side {sp} is not a positive multiple of 4")));
        }
        if classes < 2 {
            return Err(NetError::Parameter(format!("need at least 2 classes, got {classes}")));
        }
        if z_dim == 0 || widths.contains(&0) {
            return Err(NetError::Parameter("noise and feature widths must be positive".into()));
        }
        Ok(Self { sp, classes, z_dim, widths })
    }

    /// Kernel side of the collapsing/expanding stage.
    pub fn k0(&self) -> usize {
        self.sp / 4
    }

    pub fn trunk_width(&self) -> usize {
        self.widths[2]
    }

    /// Exact parameter count of the generator.
    pub fn generator_params(&self) -> usize {
        let [w1, w2, w3] = self.widths;
        let k = self.k0();
        (self.z_dim + self.classes) * w3 + w3 + w3 * w2 * k * k + 2 * w2 + w2 * w1 * 16 + 2 * w1 + w1 * 3 * 16 + 3
    }

    /// Exact parameter count of the discriminator.
    pub fn discriminator_params(&self) -> usize {
        let [w1, w2, w3] = self.widths;
        let k = self.k0();
        let n2 = 2 * self.classes;
        3 * w1 * 16 + 2 * w1 + w1 * w2 * 16 + 2 * w2 + w2 * w3 * k * k + 2 * w3 + w3 + 1 + w3 * n2 + n2
    }
}

fn normal<T: Element>(shape: &[usize], mean: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::randn(shape, mean, 0.02, rng)
}

/// Indices of one batch-norm layer inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct BnSlot {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

impl BnSlot {
    fn add<T: Element>(p: &mut ParamSet<T>, prefix: &str, c: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            gamma: p.push(format!("{prefix}.gamma"), normal(&[c], 1.0, rng)),
            beta: p.push(format!("{prefix}.beta"), Tensor::zeros(&[c])),
            mean: p.push_buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[c])),
            var: p.push_buffer(format!("{prefix}.running_var"), Tensor::full(&[c], T::one())),
        }
    }

    fn apply<T: Element>(
        &self,
        tape: &mut Tape<T>,
        p: &ParamSet<T>,
        vars: &[Var],
        x: Var,
        mode: Mode,
        stats: &mut Vec<BnStats<T>>,
    ) -> Result<Var, EngineError> {
        let running = (p.buffer(self.mean).data(), p.buffer(self.var).data());
        let out = tape.batch_norm2d(x, vars[self.gamma], vars[self.beta], mode, running, T::of(BN_EPS))?;
        stats.extend(out.stats);
        Ok(out.out)
    }

    fn absorb<T: Element>(&self, p: &mut ParamSet<T>, stats: &BnStats<T>) {
        p.update_running(self.mean, self.var, stats, T::of(BN_MOMENTUM));
    }
}

/// Result of a generator pass.
#[derive(Debug)]
pub struct GenOut<T = f32> {
    /// `[B, 3, sp, sp]`, values in (0, 1).
    pub x: Var,
    /// Batch statistics of the two normalization layers (train mode only).
    pub stats: Vec<BnStats<T>>,
}

/// Noise-plus-label to patch network.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T = f32> {
    pub spec: NetSpec,
    pub params: ParamSet<T>,
    fc_w: usize,
    fc_b: usize,
    k1: usize,
    bn1: BnSlot,
    k2: usize,
    bn2: BnSlot,
    k3: usize,
    b3: usize,
}

impl<T: Element> Generator<T> {
    pub fn new(spec: NetSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w1, w2, w3] = spec.widths;
        let k = spec.k0();
        let mut p = ParamSet::new();
        let fc_w = p.push("g.fc.w", normal(&[spec.z_dim + spec.classes, w3], 0.0, &mut rng));
        let fc_b = p.push("g.fc.b", Tensor::zeros(&[w3]));
        let k1 = p.push("g.deconv1.k", normal(&[w3, w2, k, k], 0.0, &mut rng));
        let bn1 = BnSlot::add(&mut p, "g.bn1", w2, &mut rng);
        let k2 = p.push("g.deconv2.k", normal(&[w2, w1, 4, 4], 0.0, &mut rng));
        let bn2 = BnSlot::add(&mut p, "g.bn2", w1, &mut rng);
        let k3 = p.push("g.deconv3.k", normal(&[w1, 3, 4, 4], 0.0, &mut rng));
        let b3 = p.push("g.deconv3.b", Tensor::zeros(&[3]));
        Self { spec, params: p, fc_w, fc_b, k1, bn1, k2, bn2, k3, b3 }
    }

    /// `input` is `[B, z_dim + n]`: noise followed by the one-hot label.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], input: Var, mode: Mode) -> Result<GenOut<T>, EngineError> {
        let s = &self.spec;
        let width = s.z_dim + s.classes;
        if tape.shape(input).len() != 2 || tape.shape(input)[1] != width {
            return Err(EngineError::Contract(format!(
                "generator input must be [B, {width}], got {:?}",
                tape.shape(input)
            )));
        }
        let b = tape.shape(input)[0];
        let mut stats = Vec::new();
        let h = tape.linear(input, vars[self.fc_w], Some(vars[self.fc_b]))?;
        let h = tape.relu(h)?;
        let h = tape.reshape(h, vec![b, s.widths[2], 1, 1])?;
        let h = tape.deconv2d(h, vars[self.k1], None, 1, 0)?;
        let h = self.bn1.apply(tape, &self.params, vars, h, mode, &mut stats)?;
        let h = tape.relu(h)?;
        let h = tape.deconv2d(h, vars[self.k2], None, 2, 1)?;
        let h = self.bn2.apply(tape, &self.params, vars, h, mode, &mut stats)?;
        let h = tape.relu(h)?;
        let h = tape.deconv2d(h, vars[self.k3], Some(vars[self.b3]), 2, 1)?;
        let x = tape.sigmoid(h)?;
        Ok(GenOut { x, stats })
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn absorb(&mut self, stats: &[BnStats<T>]) {
        for (slot, s) in [self.bn1, self.bn2].iter().zip(stats) {
            slot.absorb(&mut self.params, s);
        }
    }

    /// Runs the generator without recording gradients.
    pub fn generate(&self, batch: &LatentBatch<T>, mode: Mode) -> Result<Tensor<T>, EngineError> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let input = tape.constant(batch.input(self.spec.classes)?);
        let out = self.forward(&mut tape, &vars, input, mode)?;
        Ok(tape.value(out.x).clone())
    }

    pub fn cast<U: Element>(&self) -> Generator<U> {
        Generator {
            spec: self.spec,
            params: cast_params(&self.params),
            fc_w: self.fc_w,
            fc_b: self.fc_b,
            k1: self.k1,
            bn1: self.bn1,
            k2: self.k2,
            bn2: self.bn2,
            k3: self.k3,
            b3: self.b3,
        }
    }
}

/// Result of a discriminator pass.
#[derive(Debug)]
pub struct DiscOut<T = f32> {
    /// `[B, 1]` probability that each input is real.
    pub source: Var,
    /// `[B, 2n]` class log-probabilities.
    pub class_logprob: Var,
    /// `[B, 2n]` raw class logits, for heads restricted to a slot subset.
    pub class_logits: Var,
    pub stats: Vec<BnStats<T>>,
}

/// Patch to (source probability, class log-probabilities) network.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T = f32> {
    pub spec: NetSpec,
    pub params: ParamSet<T>,
    k1: usize,
    bn1: BnSlot,
    k2: usize,
    bn2: BnSlot,
    k3: usize,
    bn3: BnSlot,
    src_w: usize,
    src_b: usize,
    cls_w: usize,
    cls_b: usize,
}

/// Parameter-name prefix of the source head.
pub const SOURCE_HEAD: &str = "d.src.";
/// Parameter-name prefix of the class head.
pub const CLASS_HEAD: &str = "d.cls.";

impl<T: Element> Discriminator<T> {
    pub fn new(spec: NetSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w1, w2, w3] = spec.widths;
        let k = spec.k0();
        let mut p = ParamSet::new();
        let k1 = p.push("d.conv1.k", normal(&[w1, 3, 4, 4], 0.0, &mut rng));
        let bn1 = BnSlot::add(&mut p, "d.bn1", w1, &mut rng);
        let k2 = p.push("d.conv2.k", normal(&[w2, w1, 4, 4], 0.0, &mut rng));
        let bn2 = BnSlot::add(&mut p, "d.bn2", w2, &mut rng);
        let k3 = p.push("d.conv3.k", normal(&[w3, w2, k, k], 0.0, &mut rng));
        let bn3 = BnSlot::add(&mut p, "d.bn3", w3, &mut rng);
        let src_w = p.push("d.src.w", normal(&[w3, 1], 0.0, &mut rng));
        let src_b = p.push("d.src.b", Tensor::zeros(&[1]));
        let cls_w = p.push("d.cls.w", normal(&[w3, 2 * spec.classes], 0.0, &mut rng));
        let cls_b = p.push("d.cls.b", Tensor::zeros(&[2 * spec.classes]));
        Self { spec, params: p, k1, bn1, k2, bn2, k3, bn3, src_w, src_b, cls_w, cls_b }
    }

    /// Trunk and both heads. Dropout draws from `rng` in train mode.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<DiscOut<T>, EngineError> {
        let s = &self.spec;
        let xs = tape.shape(x);
        if xs.len() != 4 || xs[1..] != [3, s.sp, s.sp] {
            return Err(EngineError::Contract(format!("discriminator input must be [B, 3, {0}, {0}], got {xs:?}", s.sp)));
        }
        let b = xs[0];
        let slope = T::of(LEAKY_SLOPE);
        let mut stats = Vec::new();
        let mut h = x;
        for (k, bn, stride, pad) in [(self.k1, self.bn1, 2, 1), (self.k2, self.bn2, 2, 1), (self.k3, self.bn3, 1, 0)] {
            h = tape.conv2d(h, vars[k], stride, pad)?;
            h = bn.apply(tape, &self.params, vars, h, mode, &mut stats)?;
            h = tape.leaky_relu(h, slope)?;
            h = tape.dropout(h, DROPOUT, mode, rng)?;
        }
        let feat = tape.reshape(h, vec![b, s.trunk_width()])?;
        let src = tape.linear(feat, vars[self.src_w], Some(vars[self.src_b]))?;
        let source = tape.sigmoid(src)?;
        let class_logits = tape.linear(feat, vars[self.cls_w], Some(vars[self.cls_b]))?;
        let class_logprob = tape.log_softmax(class_logits)?;
        Ok(DiscOut { source, class_logprob, class_logits, stats })
    }

    pub fn absorb(&mut self, stats: &[BnStats<T>]) {
        for (slot, s) in [self.bn1, self.bn2, self.bn3].iter().zip(stats) {
            slot.absorb(&mut self.params, s);
        }
    }

    /// Eval-mode pass without gradients: per-sample source probability and
    /// `[B, 2n]` class log-probabilities.
    pub fn discriminate(&self, x: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>), EngineError> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &vars, xv, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok((tape.value(out.source).data().to_vec(), tape.value(out.class_logprob).clone()))
    }

    /// Predicted class ids (1-based) for a `[B, 3, sp, sp]` batch.
    pub fn classify(&self, x: &Tensor<T>) -> Result<Vec<u16>, EngineError> {
        let (_, lp) = self.discriminate(x)?;
        Ok(argmax_real(lp.data(), self.spec.classes))
    }

    pub fn cast<U: Element>(&self) -> Discriminator<U> {
        Discriminator {
            spec: self.spec,
            params: cast_params(&self.params),
            k1: self.k1,
            bn1: self.bn1,
            k2: self.k2,
            bn2: self.bn2,
            k3: self.k3,
            bn3: self.bn3,
            src_w: self.src_w,
            src_b: self.src_b,
            cls_w: self.cls_w,
            cls_b: self.cls_b,
        }
    }
}

/// Argmax over the first `n` slots of each `2n`-wide row, as 1-based class
/// ids. Ties go to the lower id.
pub fn argmax_real<T: Element>(logprob: &[T], n: usize) -> Vec<u16> {
    logprob
        .chunks(2 * n)
        .map(|row| {
            let mut best = 0;
            for i in 1..n {
                if row[i] > row[best] {
                    best = i;
                }
            }
            best as u16 + 1
        })
        .collect()
}

fn cast_params<T: Element, U: Element>(p: &ParamSet<T>) -> ParamSet<U> {
    let mut out = ParamSet::new();
    for q in p.params() {
        let i = out.push(q.name.clone(), q.value.cast());
        out.params_mut()[i].trainable = q.trainable;
    }
    for (name, b) in p.buffers() {
        out.push_buffer(name.clone(), b.cast());
    }
    out
}

/// How [`sample_latent`] picks labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ClassSampler {
    Uniform,
    Given(Vec<u16>),
}

/// Noise rows and the class ids they are conditioned on.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch<T = f32> {
    /// `[B, z_dim]`, entries in [-1, 1].
    pub z: Tensor<T>,
    /// 1-based class ids.
    pub labels: Vec<u16>,
}

impl<T: Element> LatentBatch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn one_hot(&self, classes: usize) -> Result<Tensor<T>, EngineError> {
        let mut data = vec![T::zero(); self.len() * classes];
        for (r, &l) in self.labels.iter().enumerate() {
            if l == 0 || l as usize > classes {
                return Err(EngineError::Contract(format!("label {l} outside 1..{classes}")));
            }
            data[r * classes + l as usize - 1] = T::one();
        }
        Tensor::new(vec![self.len(), classes], data)
    }

    /// `[B, z_dim + classes]`: each noise row followed by its one-hot label.
    pub fn input(&self, classes: usize) -> Result<Tensor<T>, EngineError> {
        let oh = self.one_hot(classes)?;
        let zd = self.z.shape()[1];
        let mut data = Vec::with_capacity(self.len() * (zd + classes));
        for r in 0..self.len() {
            data.extend_from_slice(&self.z.data()[r * zd..(r + 1) * zd]);
            data.extend_from_slice(&oh.data()[r * classes..(r + 1) * classes]);
        }
        Tensor::new(vec![self.len(), zd + classes], data)
    }
}

/// Draws `b` noise rows uniformly from [-1, 1] and labels per `sampler`.
pub fn sample_latent<T: Element>(
    b: usize,
    classes: usize,
    z_dim: usize,
    sampler: &ClassSampler,
    rng: &mut impl Rng,
) -> Result<LatentBatch<T>, EngineError> {
    if b == 0 {
        return Err(EngineError::Parameter("latent batch must be nonempty".into()));
    }
    let labels = match sampler {
        ClassSampler::Uniform => (0..b).map(|_| rng.random_range(1..=classes as u16)).collect(),
        ClassSampler::Given(l) if l.len() == b => l.clone(),
        ClassSampler::Given(l) => {
            return Err(EngineError::Contract(format!("{} labels given for a batch of {b}", l.len())));
        }
    };
    let z = Tensor::uniform(&[b, z_dim], -1.0, 1.0, rng);
    Ok(LatentBatch { z, labels })
}
