//! Discriminator and generator objectives, fitness scores and survivor
//! selection.
//!
//! Every loss is in minimization form. Log arguments are clamped at
//! [`LOG_FLOOR`] so saturated discriminators give large but finite values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::networks::{DiscOut, Discriminator};
use crate::tensor::{Element, EngineError, Mode, Tape, Tensor, Var};

pub const LOG_FLOOR: f64 = 1e-12;
pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("fitness score for {0:?} is NaN")]
    NanScore(MutationKind),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// The three generator objectives, in tie-breaking order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MutationKind {
    MinMax,
    Heuristic,
    LeastSquare,
}

impl MutationKind {
    pub const ALL: [MutationKind; 3] = [MutationKind::MinMax, MutationKind::Heuristic, MutationKind::LeastSquare];

    pub fn name(self) -> &'static str {
        match self {
            MutationKind::MinMax => "minmax",
            MutationKind::Heuristic => "heuristic",
            MutationKind::LeastSquare => "leastsquare",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Which class slot generated samples are trained towards in the
/// discriminator update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FakeTarget {
    /// Slot `n + y - 1`: the per-class fake slots.
    FakeSlot,
    /// Slot `y - 1`: generated samples share the real class slots.
    RealSlot,
}

/// Form of the generator's classification term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ClassTerm {
    /// `-mean log P(real slot y | x_fake)`.
    #[default]
    LogProb,
    /// `mean log(1 - P(real slot y | x_fake))`.
    Complement,
}

/// Discriminator loss as numbers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub source: f64,
    pub class: f64,
    pub total: f64,
}

/// Discriminator loss as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct DLossVars {
    pub source: Var,
    pub class: Var,
    pub total: Var,
}

impl DLossVars {
    pub fn report<T: Element>(&self, tape: &Tape<T>) -> LossReport {
        let v = |x: Var| tape.value(x).item().to_f64().unwrap_or(f64::NAN);
        LossReport { source: v(self.source), class: v(self.class), total: v(self.total) }
    }
}

/// Quality, diversity and combined fitness of one generator child.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitnessScore {
    pub quality: f64,
    pub diversity: f64,
    pub total: f64,
    pub lambda: f64,
}

impl FitnessScore {
    pub fn new(quality: f64, diversity: f64, lambda: f64) -> Self {
        Self { quality, diversity, total: fitness_total(quality, diversity, lambda), lambda }
    }
}

fn floor<T: Element>() -> T {
    T::of(LOG_FLOOR)
}

fn check_labels(y: &[u16], n: usize) -> Result<(), EngineError> {
    match y.iter().find(|&&l| l == 0 || l as usize > n) {
        Some(l) => Err(EngineError::Contract(format!("label {l} outside 1..{n}"))),
        None => Ok(()),
    }
}

/// `-mean log P(slot | x)` for the given 0-based slots.
pub fn nll<T: Element>(tape: &mut Tape<T>, logprob: Var, slots: &[usize]) -> Result<Var, EngineError> {
    let picked = tape.gather(logprob, slots)?;
    let m = tape.mean(picked)?;
    tape.affine(m, -T::one(), T::zero())
}

/// `mean log(max(1 - p, floor))`.
fn mean_log_complement<T: Element>(tape: &mut Tape<T>, p: Var) -> Result<Var, EngineError> {
    let q = tape.affine(p, -T::one(), T::one())?;
    let l = tape.clamp_log(q, floor())?;
    tape.mean(l)
}

/// `mean log(max(p, floor))`.
fn mean_log<T: Element>(tape: &mut Tape<T>, p: Var) -> Result<Var, EngineError> {
    let l = tape.clamp_log(p, floor())?;
    tape.mean(l)
}

/// Source plus class loss of a discriminator that saw a real and a generated
/// batch.
pub fn d_loss<T: Element>(
    tape: &mut Tape<T>,
    real: &DiscOut<T>,
    y_real: &[u16],
    fake: &DiscOut<T>,
    y_fake: &[u16],
    n: usize,
    target: FakeTarget,
) -> Result<DLossVars, EngineError> {
    check_labels(y_real, n)?;
    check_labels(y_fake, n)?;
    let lr = mean_log(tape, real.source)?;
    let lf = mean_log_complement(tape, fake.source)?;
    let s = tape.add(lr, lf)?;
    let source = tape.affine(s, -T::one(), T::zero())?;

    let real_slots: Vec<usize> = y_real.iter().map(|&y| y as usize - 1).collect();
    let fake_slots: Vec<usize> = match target {
        FakeTarget::FakeSlot => y_fake.iter().map(|&y| n + y as usize - 1).collect(),
        FakeTarget::RealSlot => y_fake.iter().map(|&y| y as usize - 1).collect(),
    };
    let cr = nll(tape, real.class_logprob, &real_slots)?;
    let cf = nll(tape, fake.class_logprob, &fake_slots)?;
    let class = tape.add(cr, cf)?;
    let total = tape.add(source, class)?;
    Ok(DLossVars { source, class, total })
}

/// The adversarial half of a mutation loss, from `D_src(x_fake)`.
pub fn adversarial_term<T: Element>(tape: &mut Tape<T>, kind: MutationKind, source: Var) -> Result<Var, EngineError> {
    match kind {
        MutationKind::MinMax => mean_log_complement(tape, source),
        MutationKind::Heuristic => {
            let l = mean_log(tape, source)?;
            tape.affine(l, -T::one(), T::zero())
        }
        MutationKind::LeastSquare => {
            let d = tape.affine(source, T::one(), -T::one())?;
            let sq = tape.square(d)?;
            tape.mean(sq)
        }
    }
}

/// The classification half of a mutation loss: generated samples of class
/// `y` are pushed towards real slot `y`.
pub fn generator_class_term<T: Element>(
    tape: &mut Tape<T>,
    class_logprob: Var,
    y: &[u16],
    n: usize,
    form: ClassTerm,
) -> Result<Var, EngineError> {
    check_labels(y, n)?;
    let slots: Vec<usize> = y.iter().map(|&l| l as usize - 1).collect();
    match form {
        ClassTerm::LogProb => nll(tape, class_logprob, &slots),
        ClassTerm::Complement => {
            let lp = tape.gather(class_logprob, &slots)?;
            let p = tape.exp(lp)?;
            mean_log_complement(tape, p)
        }
    }
}

/// Full mutation loss: adversarial term plus classification term.
pub fn g_mutation_loss<T: Element>(
    tape: &mut Tape<T>,
    kind: MutationKind,
    fake: &DiscOut<T>,
    y: &[u16],
    n: usize,
    form: ClassTerm,
) -> Result<Var, EngineError> {
    let adv = adversarial_term(tape, kind, fake.source)?;
    let cls = generator_class_term(tape, fake.class_logprob, y, n, form)?;
    tape.add(adv, cls)
}

/// `-g_mutation_loss` of generated samples under an eval-mode, gradient-free
/// discriminator. Higher is better.
pub fn fitness_quality<T: Element>(
    d: &Discriminator<T>,
    x_fake: &Tensor<T>,
    y: &[u16],
    kind: MutationKind,
    form: ClassTerm,
) -> Result<f64, EngineError> {
    let mut tape = Tape::new();
    let vars = d.params.bind(&mut tape, false);
    let x = tape.constant(x_fake.clone());
    // eval mode draws nothing from the generator
    let out = d.forward(&mut tape, &vars, x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?;
    let loss = g_mutation_loss(&mut tape, kind, &out, y, d.spec.classes, form)?;
    Ok(-tape.value(loss).item().to_f64().unwrap_or(f64::NAN))
}

/// `-ln ‖∇_D L^D‖` on the given real and generated batches. The
/// discriminator is not modified; batch statistics and gradients are
/// discarded.
#[allow(clippy::too_many_arguments)]
pub fn fitness_diversity<T: Element>(
    d: &Discriminator<T>,
    x_real: &Tensor<T>,
    y_real: &[u16],
    x_fake: &Tensor<T>,
    y_fake: &[u16],
    target: FakeTarget,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<f64, EngineError> {
    let mut tape = Tape::new();
    let vars = d.params.bind(&mut tape, true);
    let xr = tape.constant(x_real.clone());
    let xf = tape.constant(x_fake.clone());
    let real = d.forward(&mut tape, &vars, xr, mode, rng)?;
    let fake = d.forward(&mut tape, &vars, xf, mode, rng)?;
    let loss = d_loss(&mut tape, &real, y_real, &fake, y_fake, d.spec.classes, target)?;
    tape.backward(loss.total)?;
    let sq: f64 = vars
        .iter()
        .filter_map(|&v| tape.grad(v))
        .flat_map(|g| g.iter())
        .map(|&g| g.to_f64().unwrap_or(f64::NAN).powi(2))
        .sum();
    Ok(diversity_from_norm(sq.sqrt()))
}

/// `-ln(max(norm, 1e-12))`.
pub fn diversity_from_norm(norm: f64) -> f64 {
    -norm.max(LOG_FLOOR).ln()
}

/// `λ·F_q + F_d`.
pub fn fitness_total(quality: f64, diversity: f64, lambda: f64) -> f64 {
    lambda * quality + diversity
}

/// Kind with the largest score, earlier kinds winning ties. Scores are indexed
/// by [`MutationKind::index`]; `-∞` is allowed, NaN is not.
pub fn select_survivor(scores: [f64; 3]) -> Result<MutationKind, LossError> {
    if let Some(k) = MutationKind::ALL.into_iter().find(|k| scores[k.index()].is_nan()) {
        return Err(LossError::NanScore(k));
    }
    let mut best = MutationKind::MinMax;
    for k in MutationKind::ALL {
        if scores[k.index()] > scores[best.index()] {
            best = k;
        }
    }
    Ok(best)
}
