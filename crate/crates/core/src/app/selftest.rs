//! Built-in engine checks: finite-difference gradients for every layer and a
//! miniature composed model, network shape contracts and metric oracles.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::eval::{metrics, ConfusionMatrix, McNemarResult};
use crate::losses::{g_mutation_loss, ClassTerm, MutationKind};
use crate::networks::{sample_latent, ClassSampler, Discriminator, Generator, NetSpec, Z_DIM};
use crate::tensor::{grad_check, EngineError, Mode, Tape, Tensor, Var};

/// Largest accepted relative gradient error.
pub const GRAD_TOL: f64 = 1e-3;
/// Central-difference step (float64).
pub const GRAD_STEP: f64 = 1e-5;

type CheckFn = Box<dyn Fn() -> Result<String, String>>;

/// A named check returning a detail line on success and a reason on failure.
pub struct Check {
    pub name: String,
    pub run: CheckFn,
}

impl Check {
    pub fn new(name: impl Into<String>, run: impl Fn() -> Result<String, String> + 'static) -> Self {
        Self { name: name.into(), run: Box::new(run) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// A check that `f` (a scalar function of `x`) passes the gradient test.
pub fn grad_case(
    name: impl Into<String>,
    x: Tensor<f64>,
    f: impl Fn(&mut Tape<f64>, Var) -> Result<Var, EngineError> + 'static,
) -> Check {
    Check::new(name, move || {
        let err = grad_check(&f, &x, GRAD_STEP).map_err(|e| e.to_string())?;
        if err < GRAD_TOL {
            Ok(format!("max rel err {err:.2e}"))
        } else {
            Err(format!("max rel err {err:.2e} exceeds {GRAD_TOL:.0e}"))
        }
    })
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, lo, hi, &mut rng(seed))
}

/// `Σ r ⊙ y` with fixed random weights so every output element matters.
fn weighted_sum(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, EngineError> {
    let r = t.constant(uniform(t.shape(y), -1.0, 1.0, seed));
    let p = t.mul(y, r)?;
    t.sum(p)
}

fn layer_checks() -> Vec<Check> {
    let x2 = uniform(&[3, 6], -2.0, 2.0, 1);
    let w = uniform(&[6, 4], -2.0, 2.0, 2);
    let b = uniform(&[4], -2.0, 2.0, 3);
    let x4 = uniform(&[2, 3, 6, 6], -2.0, 2.0, 4);
    let k = uniform(&[4, 3, 4, 4], -2.0, 2.0, 5);
    let xd = uniform(&[2, 4, 3, 3], -2.0, 2.0, 6);
    let kd = uniform(&[4, 2, 4, 4], -2.0, 2.0, 7);
    let bd = uniform(&[2], -2.0, 2.0, 8);
    let gamma = uniform(&[3], -2.0, 2.0, 9);
    let beta = uniform(&[3], -2.0, 2.0, 10);

    let mut v = Vec::new();
    {
        let (w, b) = (w.clone(), b.clone());
        v.push(grad_case("linear", x2.clone(), move |t, x| {
            let (w, b) = (t.constant(w.clone()), t.constant(b.clone()));
            let y = t.linear(x, w, Some(b))?;
            weighted_sum(t, y, 11)
        }));
    }
    {
        let x2 = x2.clone();
        v.push(grad_case("linear weights", w, move |t, w| {
            let x = t.constant(x2.clone());
            let y = t.linear(x, w, None)?;
            weighted_sum(t, y, 11)
        }));
    }
    {
        let k = k.clone();
        v.push(grad_case("conv", x4.clone(), move |t, x| {
            let k = t.constant(k.clone());
            let y = t.conv2d(x, k, 2, 1)?;
            weighted_sum(t, y, 12)
        }));
    }
    {
        let x4 = x4.clone();
        v.push(grad_case("conv kernel", k, move |t, k| {
            let x = t.constant(x4.clone());
            let y = t.conv2d(x, k, 2, 1)?;
            weighted_sum(t, y, 12)
        }));
    }
    {
        let (kd, bd) = (kd.clone(), bd.clone());
        v.push(grad_case("deconv", xd.clone(), move |t, x| {
            let (k, b) = (t.constant(kd.clone()), t.constant(bd.clone()));
            let y = t.deconv2d(x, k, Some(b), 2, 1)?;
            weighted_sum(t, y, 13)
        }));
    }
    {
        let xd = xd.clone();
        v.push(grad_case("deconv kernel", kd, move |t, k| {
            let x = t.constant(xd.clone());
            let y = t.deconv2d(x, k, None, 2, 1)?;
            weighted_sum(t, y, 13)
        }));
    }
    for mode in [Mode::Train, Mode::Eval] {
        let label = if mode == Mode::Train { "train" } else { "eval" };
        let (g1, b1) = (gamma.clone(), beta.clone());
        v.push(grad_case(format!("batchnorm ({label})"), x4.clone(), move |t, x| {
            let (g, b) = (t.constant(g1.clone()), t.constant(b1.clone()));
            let y = t.batch_norm2d(x, g, b, mode, (&[0.3, -0.2, 0.1], &[0.5, 1.5, 2.0]), 1e-5)?.out;
            weighted_sum(t, y, 14)
        }));
        let (x1, b1) = (x4.clone(), beta.clone());
        v.push(grad_case(format!("batchnorm scale ({label})"), gamma.clone(), move |t, g| {
            let (x, b) = (t.constant(x1.clone()), t.constant(b1.clone()));
            let y = t.batch_norm2d(x, g, b, mode, (&[0.3, -0.2, 0.1], &[0.5, 1.5, 2.0]), 1e-5)?.out;
            weighted_sum(t, y, 14)
        }));
    }
    v.push(grad_case("relu", x2.clone(), |t, x| {
        let y = t.relu(x)?;
        weighted_sum(t, y, 15)
    }));
    v.push(grad_case("leaky relu", x2.clone(), |t, x| {
        let y = t.leaky_relu(x, 0.2)?;
        weighted_sum(t, y, 15)
    }));
    v.push(grad_case("sigmoid", x2.clone(), |t, x| {
        let y = t.sigmoid(x)?;
        weighted_sum(t, y, 15)
    }));
    v.push(grad_case("log softmax", x2.clone(), |t, x| {
        let y = t.log_softmax(x)?;
        weighted_sum(t, y, 15)
    }));
    v.push(grad_case("dropout (fixed mask)", x2, |t, x| {
        let y = t.dropout(x, 0.5, Mode::Train, &mut rng(16))?;
        weighted_sum(t, y, 15)
    }));
    v
}

/// D(G(z)) on a tiny model (sp 4, 2 classes, narrow stacks) in train mode,
/// differentiated with respect to the generator input and to one weight
/// tensor of each network.
pub fn composed_checks() -> Vec<Check> {
    let spec = NetSpec::with_widths(4, 2, 3, [2, 3, 4]).expect("valid miniature spec");
    let g = Generator::<f64>::new(spec, 21);
    let d = Discriminator::<f64>::new(spec, 22);
    let latent = sample_latent::<f64>(4, 2, 3, &ClassSampler::Given(vec![1, 2, 2, 1]), &mut rng(23)).expect("latent");
    let input = latent.input(2).expect("input");
    let labels = latent.labels.clone();

    // `slot` names the parameter replaced by the checked variable, if any
    let make = |slot: Option<(&'static str, bool)>| {
        let (g, d, labels, input) = (g.clone(), d.clone(), labels.clone(), input.clone());
        move |t: &mut Tape<f64>, v: Var| -> Result<Var, EngineError> {
            let mut gv = g.params.bind(t, false);
            let mut dv = d.params.bind(t, false);
            let x = match slot {
                None => v,
                Some((name, in_g)) => {
                    let (set, vars) = if in_g { (&g.params, &mut gv) } else { (&d.params, &mut dv) };
                    vars[set.index_of(name).expect("parameter exists")] = v;
                    t.constant(input.clone())
                }
            };
            let fake = g.forward(t, &gv, x, Mode::Train)?;
            let out = d.forward(t, &dv, fake.x, Mode::Train, &mut rng(24))?;
            g_mutation_loss(t, MutationKind::LeastSquare, &out, &labels, 2, ClassTerm::LogProb)
        }
    };
    let param = |set: &crate::tensor::ParamSet<f64>, name: &str| {
        set.params()[set.index_of(name).expect("parameter exists")].value.clone()
    };
    vec![
        grad_case("D(G(z)) input", input.clone(), make(None)),
        grad_case("D(G(z)) generator weights", param(&g.params, "g.deconv2.k"), make(Some(("g.deconv2.k", true)))),
        grad_case("D(G(z)) discriminator weights", param(&d.params, "d.conv1.k"), make(Some(("d.conv1.k", false)))),
    ]
}

fn shape_checks() -> Vec<Check> {
    let mut v = Vec::new();
    for sp in [20, 24, 28] {
        for n in [2, 13, 16] {
            v.push(Check::new(format!("shapes sp={sp} n={n}"), move || {
                let spec = NetSpec::new(sp, n).map_err(|e| e.to_string())?;
                let g = Generator::<f32>::new(spec, 1);
                let d = Discriminator::<f32>::new(spec, 2);
                let lat = sample_latent::<f32>(2, n, Z_DIM, &ClassSampler::Uniform, &mut rng(3)).map_err(|e| e.to_string())?;
                let x = g.generate(&lat, Mode::Eval).map_err(|e| e.to_string())?;
                if x.shape() != [2, 3, sp, sp] {
                    return Err(format!("generator output {:?}", x.shape()));
                }
                let (src, lp) = d.discriminate(&x).map_err(|e| e.to_string())?;
                if src.len() != 2 || lp.shape() != [2, 2 * n] || spec.trunk_width() != 512 {
                    return Err(format!("discriminator output {} / {:?}", src.len(), lp.shape()));
                }
                Ok(format!("G -> [2,3,{sp},{sp}], D -> [2,1],[2,{}]", 2 * n))
            }));
        }
    }
    v
}

fn metric_checks() -> Vec<Check> {
    vec![
        Check::new("kappa worked case", || {
            let cm = ConfusionMatrix::from_counts(2, vec![40, 10, 5, 45]).map_err(|e| e.to_string())?;
            let r = metrics(&cm).map_err(|e| e.to_string())?;
            if (r.oa - 0.85).abs() < 1e-12 && (r.kappa - 0.70).abs() < 1e-12 {
                Ok(format!("OA {:.2} Kappa {:.2}", r.oa, r.kappa))
            } else {
                Err(format!("OA {} Kappa {}", r.oa, r.kappa))
            }
        }),
        Check::new("mcnemar worked case", || {
            let s = McNemarResult::from_counts(40, 10).statistic;
            if (s - 4.2426).abs() < 1e-3 {
                Ok(format!("M_t {s:.3}"))
            } else {
                Err(format!("M_t {s}"))
            }
        }),
    ]
}

/// Gradient checks of every layer type and of the composed miniature.
pub fn gradient_checks() -> Vec<Check> {
    let mut v = layer_checks();
    v.extend(composed_checks());
    v
}

/// Every built-in check.
pub fn default_checks() -> Vec<Check> {
    let mut v = gradient_checks();
    v.extend(shape_checks());
    v.extend(metric_checks());
    v
}

pub fn run_checks(checks: &[Check]) -> Vec<CheckResult> {
    checks
        .iter()
        .map(|c| match (c.run)() {
            Ok(detail) => CheckResult { name: c.name.clone(), passed: true, detail },
            Err(detail) => CheckResult { name: c.name.clone(), passed: false, detail },
        })
        .collect()
}

/// Prints one line per check; true when all passed.
pub fn print_table(results: &[CheckResult], out: &mut dyn Write) -> std::io::Result<bool> {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in results {
        writeln!(out, "{:width$}  {}  {}", r.name, if r.passed { "ok  " } else { "FAIL" }, r.detail)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    writeln!(out, "{} checks, {failed} failed", results.len())?;
    Ok(failed == 0)
}
