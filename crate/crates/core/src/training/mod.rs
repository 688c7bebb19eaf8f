//! Adversarial and supervised training loops.
//!
//! All randomness is drawn from generators seeded by [`derive_seed`], keyed
//! on the run seed plus a purpose tag and step counters, so a run is a pure
//! function of its [`TrainConfig`] and data.

mod trace;

pub use trace::{TraceRow, TrainTrace};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{oversample_indices, PatchSet};
use crate::losses::{
    d_loss, fitness_diversity, fitness_quality, g_mutation_loss, nll, select_survivor, ClassTerm, FakeTarget,
    FitnessScore, LossError, LossReport, MutationKind, DEFAULT_LAMBDA,
};
use crate::networks::{sample_latent, ClassSampler, Discriminator, Generator, NetError, NetSpec, SOURCE_HEAD};
use crate::tensor::{Adam, AdamConfig, EngineError, Mode, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training aborted at epoch {epoch}, batch {batch}: {reason}")]
    Abort { epoch: usize, batch: usize, reason: String, last_row: Option<Box<TraceRow>> },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Which model family a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Mfegan,
    Acgan,
    Cnn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub sp: usize,
    pub classes: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lambda: f64,
    pub adam: AdamConfig,
    pub d_steps: usize,
    /// Oversample minority classes in the real stream.
    pub oversample: bool,
    pub class_term: ClassTerm,
    pub z_dim: usize,
    pub widths: [usize; 3],
}

impl TrainConfig {
    pub fn new(sp: usize, classes: usize) -> Self {
        Self {
            sp,
            classes,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            lambda: DEFAULT_LAMBDA,
            adam: AdamConfig::default(),
            d_steps: 1,
            oversample: false,
            class_term: ClassTerm::LogProb,
            z_dim: crate::networks::Z_DIM,
            widths: [128, 256, 512],
        }
    }

    pub fn net_spec(&self) -> Result<NetSpec, TrainError> {
        Ok(NetSpec::with_widths(self.sp, self.classes, self.z_dim, self.widths)?)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.net_spec()?;
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!("batch size {} is below 2", self.batch_size)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::Config(format!("lambda {} is outside [0, 1]", self.lambda)));
        }
        if self.d_steps == 0 {
            return Err(TrainError::Config("d_steps must be at least 1".into()));
        }
        Ok(())
    }

    fn check_data(&self, data: &PatchSet) -> Result<(), TrainError> {
        if data.sp != self.sp || data.classes != self.classes {
            return Err(TrainError::Config(format!(
                "data has sp={} and {} classes, configuration expects sp={} and {}",
                data.sp, data.classes, self.sp, self.classes
            )));
        }
        if let Some(c) = data.class_counts().iter().position(|&n| n == 0) {
            return Err(TrainError::Config(format!("training data has no sample of class {}", c + 1)));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer over the run seed and a sequence of keys.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    keys.iter().fold(mix(seed), |acc, &k| mix(acc ^ mix(k)))
}

fn rng_for(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, keys))
}

// purpose tags for derive_seed
const TAG_G_INIT: u64 = 1;
const TAG_D_INIT: u64 = 2;
const TAG_SHUFFLE: u64 = 3;
const TAG_OVERSAMPLE: u64 = 4;
const TAG_D_STEP: u64 = 5;
const TAG_G_STEP: u64 = 6;

/// A generator with its optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct GenState {
    pub net: Generator,
    pub opt: Adam,
}

/// A discriminator with its optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscState {
    pub net: Discriminator,
    pub opt: Adam,
}

impl GenState {
    pub fn new(spec: NetSpec, seed: u64, adam: AdamConfig) -> Self {
        let net = Generator::new(spec, derive_seed(seed, &[TAG_G_INIT]));
        let opt = Adam::new(&net.params, adam);
        Self { net, opt }
    }
}

impl DiscState {
    pub fn new(spec: NetSpec, seed: u64, adam: AdamConfig) -> Self {
        let net = Discriminator::new(spec, derive_seed(seed, &[TAG_D_INIT]));
        let opt = Adam::new(&net.params, adam);
        Self { net, opt }
    }
}

fn finite(name: &'static str, v: f64) -> Result<f64, EngineError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EngineError::NonFinite(name))
    }
}

/// One discriminator update on a real batch and an equally sized generated
/// batch with uniformly drawn labels. Only `d` changes.
pub fn train_step_d(
    d: &mut DiscState,
    g: &Generator,
    x_real: &Tensor,
    y_real: &[u16],
    target: FakeTarget,
    seed: u64,
) -> Result<LossReport, EngineError> {
    let b = y_real.len();
    if b < 2 {
        return Err(EngineError::DegenerateBatch("discriminator step"));
    }
    let n = d.net.spec.classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = sample_latent(b, n, g.spec.z_dim, &ClassSampler::Uniform, &mut rng)?;
    let x_fake = g.generate(&latent, Mode::Train)?;

    let mut tape = Tape::new();
    let vars = d.net.params.bind(&mut tape, true);
    let xr = tape.constant(x_real.clone());
    let xf = tape.constant(x_fake);
    let real = d.net.forward(&mut tape, &vars, xr, Mode::Train, &mut rng)?;
    let fake = d.net.forward(&mut tape, &vars, xf, Mode::Train, &mut rng)?;
    let loss = d_loss(&mut tape, &real, y_real, &fake, &latent.labels, n, target)?;
    let report = loss.report(&tape);
    finite("discriminator loss", report.total)?;
    tape.backward(loss.total)?;
    d.net.params.accumulate_grads(&tape, &vars);
    d.opt.step(&mut d.net.params)?;
    // running statistics follow the real data only
    d.net.absorb(&real.stats);
    Ok(report)
}

/// One generator update of `g` on `kind`'s loss against a frozen `d`.
/// Returns the loss value.
fn generator_update(
    g: &mut GenState,
    d: &Discriminator,
    kind: MutationKind,
    form: ClassTerm,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, EngineError> {
    let n = d.spec.classes;
    let latent = sample_latent(batch, n, g.net.spec.z_dim, &ClassSampler::Uniform, rng)?;
    let mut tape = Tape::new();
    let gv = g.net.params.bind(&mut tape, true);
    let dv = d.params.bind(&mut tape, false);
    let input = tape.constant(latent.input(n)?);
    let out = g.net.forward(&mut tape, &gv, input, Mode::Train)?;
    let dout = d.forward(&mut tape, &dv, out.x, Mode::Train, rng)?;
    let loss = g_mutation_loss(&mut tape, kind, &dout, &latent.labels, n, form)?;
    let value = finite("generator loss", tape.value(loss).item() as f64)?;
    tape.backward(loss)?;
    g.net.params.accumulate_grads(&tape, &gv);
    g.opt.step(&mut g.net.params)?;
    g.net.absorb(&out.stats);
    Ok(value)
}

/// Outcome of one evolutionary generator round.
#[derive(Clone, Debug)]
pub struct Evolution {
    pub survivor: MutationKind,
    /// Indexed by [`MutationKind::index`]; a child that produced non-finite
    /// values has total `-∞`.
    pub scores: [FitnessScore; 3],
}

/// Mutates `parent` three ways, scores the children and replaces `parent`
/// by the fittest one (generator and optimizer state).
#[allow(clippy::too_many_arguments)]
pub fn train_step_g_evolutionary(
    parent: &mut GenState,
    d: &Discriminator,
    x_real: &Tensor,
    y_real: &[u16],
    lambda: f64,
    form: ClassTerm,
    seed: u64,
) -> Result<Evolution, LossError> {
    let b = y_real.len();
    let n = d.spec.classes;
    // children share the update batch, the scoring batch and dropout masks
    let mut scoring_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let scoring = sample_latent(b, n, parent.net.spec.z_dim, &ClassSampler::Uniform, &mut scoring_rng)?;
    let mut children = Vec::with_capacity(3);
    let mut scores = [FitnessScore::new(f64::NEG_INFINITY, f64::NEG_INFINITY, lambda); 3];
    for kind in MutationKind::ALL {
        let mut child = parent.clone();
        let mut update_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
        let evaluated = (|| -> Result<FitnessScore, EngineError> {
            generator_update(&mut child, d, kind, form, b, &mut update_rng)?;
            let x_fake = child.net.generate(&scoring, Mode::Train)?;
            let fq = finite("quality", fitness_quality(d, &x_fake, &scoring.labels, kind, form)?)?;
            let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2]));
            let fd = fitness_diversity(
                d,
                x_real,
                y_real,
                &x_fake,
                &scoring.labels,
                FakeTarget::FakeSlot,
                Mode::Train,
                &mut drop_rng,
            )?;
            let fd = finite("diversity", fd)?;
            Ok(FitnessScore::new(fq, fd, lambda))
        })();
        match evaluated {
            Ok(s) => scores[kind.index()] = s,
            Err(EngineError::NonFinite(_)) => {}
            Err(e) => return Err(e.into()),
        }
        children.push(child);
    }
    if scores.iter().all(|s| s.total == f64::NEG_INFINITY) {
        return Err(EngineError::Contract("every generator child produced non-finite values".into()).into());
    }
    let survivor = select_survivor(scores.map(|s| s.total))?;
    *parent = children.swap_remove(survivor.index());
    Ok(Evolution { survivor, scores })
}

/// Trained networks and the per-batch record.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub d: DiscState,
    pub g: Option<GenState>,
    pub trace: TrainTrace,
}

/// Indices of the real stream for one epoch, split into batches. A trailing
/// batch too small for batch normalization is dropped.
fn epoch_batches(cfg: &TrainConfig, pool: &[usize], epoch: usize) -> Vec<Vec<usize>> {
    let mut order = pool.to_vec();
    order.shuffle(&mut rng_for(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
    order.chunks(cfg.batch_size).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
}

fn real_pool(cfg: &TrainConfig, data: &PatchSet) -> Vec<usize> {
    if cfg.oversample {
        oversample_indices(&data.labels, data.classes, derive_seed(cfg.seed, &[TAG_OVERSAMPLE]))
    } else {
        (0..data.len()).collect()
    }
}

fn abort(epoch: usize, batch: usize, reason: impl ToString, trace: &TrainTrace) -> TrainError {
    TrainError::Abort { epoch, batch, reason: reason.to_string(), last_row: trace.rows.last().cloned().map(Box::new) }
}

fn adversarial(cfg: &TrainConfig, data: &PatchSet, variant: Variant) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    cfg.check_data(data)?;
    let spec = cfg.net_spec()?;
    let mut d = DiscState::new(spec, cfg.seed, cfg.adam);
    let mut g = GenState::new(spec, cfg.seed, cfg.adam);
    let mut trace = TrainTrace::new(variant);
    let pool = real_pool(cfg, data);
    let target = if variant == Variant::Mfegan { FakeTarget::FakeSlot } else { FakeTarget::RealSlot };
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        for (bi, idx) in epoch_batches(cfg, &pool, epoch).iter().enumerate() {
            let x = data.batch(idx);
            let y: Vec<u16> = idx.iter().map(|&i| data.labels[i]).collect();
            let mut report = None;
            for s in 0..cfg.d_steps {
                let seed = derive_seed(cfg.seed, &[TAG_D_STEP, epoch as u64, bi as u64, s as u64]);
                let r = train_step_d(&mut d, &g.net, &x, &y, target, seed).map_err(|e| abort(epoch, bi, e, &trace))?;
                report = Some(r);
            }
            let seed = derive_seed(cfg.seed, &[TAG_G_STEP, epoch as u64, bi as u64]);
            let mut row = TraceRow { epoch, batch: bi, d: report, ..TraceRow::default() };
            match variant {
                Variant::Mfegan => {
                    let evo = train_step_g_evolutionary(&mut g, &d.net, &x, &y, cfg.lambda, cfg.class_term, seed)
                        .map_err(|e| abort(epoch, bi, e, &trace))?;
                    row.fitness = Some(evo.scores);
                    row.survivor = Some(evo.survivor);
                }
                _ => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let loss = generator_update(&mut g, &d.net, MutationKind::Heuristic, cfg.class_term, y.len(), &mut rng)
                        .map_err(|e| abort(epoch, bi, e, &trace))?;
                    row.g_loss = Some(loss);
                }
            }
            trace.rows.push(row);
        }
        trace.epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(TrainOutcome { d, g: Some(g), trace })
}

/// Multi-fake evolutionary training.
pub fn train_mfegan(cfg: &TrainConfig, data: &PatchSet) -> Result<TrainOutcome, TrainError> {
    adversarial(cfg, data, Variant::Mfegan)
}

/// Auxiliary-classifier GAN baseline: generated samples target the real
/// class slots and the generator always uses the heuristic loss.
pub fn train_acgan(cfg: &TrainConfig, data: &PatchSet) -> Result<TrainOutcome, TrainError> {
    adversarial(cfg, data, Variant::Acgan)
}

/// The discriminator trained as a plain `n`-way classifier on the real class
/// slots. The source head is frozen and fake-slot weights receive zero
/// gradient. `cfg.oversample` selects the oversampled baseline.
pub fn train_cnn(cfg: &TrainConfig, data: &PatchSet) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    cfg.check_data(data)?;
    let spec = cfg.net_spec()?;
    let n = spec.classes;
    let mut d = DiscState::new(spec, cfg.seed, cfg.adam);
    d.net.params.set_trainable(SOURCE_HEAD, false);
    let mut trace = TrainTrace::new(Variant::Cnn);
    let pool = real_pool(cfg, data);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        for (bi, idx) in epoch_batches(cfg, &pool, epoch).iter().enumerate() {
            let mut step = || -> Result<f64, EngineError> {
                let mut rng = rng_for(cfg.seed, &[TAG_D_STEP, epoch as u64, bi as u64]);
                let mut tape = Tape::new();
                let vars = d.net.params.bind(&mut tape, true);
                let x = tape.constant(data.batch(idx));
                let out = d.net.forward(&mut tape, &vars, x, Mode::Train, &mut rng)?;
                let logits = tape.slice_cols(out.class_logits, 0, n)?;
                let lp = tape.log_softmax(logits)?;
                let slots: Vec<usize> = idx.iter().map(|&i| data.labels[i] as usize - 1).collect();
                let loss = nll(&mut tape, lp, &slots)?;
                let value = finite("classification loss", tape.value(loss).item() as f64)?;
                tape.backward(loss)?;
                d.net.params.accumulate_grads(&tape, &vars);
                d.opt.step(&mut d.net.params)?;
                d.net.absorb(&out.stats);
                Ok(value)
            };
            let loss = step().map_err(|e| abort(epoch, bi, e, &trace))?;
            trace.rows.push(TraceRow { epoch, batch: bi, class_loss: Some(loss), ..TraceRow::default() });
        }
        trace.epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(TrainOutcome { d, g: None, trace })
}

/// Eval-mode predictions (1-based class ids) for every patch, in chunks.
pub fn predict(d: &Discriminator, data: &PatchSet, indices: &[usize]) -> Result<Vec<u16>, EngineError> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(256) {
        out.extend(d.classify(&data.batch(chunk))?);
    }
    Ok(out)
}
