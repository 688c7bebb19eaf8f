use std::f64::consts::LN_2;

use mfegan::losses::*;
use mfegan::networks::*;
use mfegan::tensor::{Mode, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A discriminator whose heads are zeroed: source 0.5 and a uniform class
/// distribution for every input.
fn constant_d(n: usize) -> Discriminator {
    let spec = NetSpec::with_widths(8, n, 4, [2, 3, 4]).unwrap();
    let mut d = Discriminator::new(spec, 1);
    for name in ["d.src.w", "d.src.b", "d.cls.w", "d.cls.b"] {
        let i = d.params.index_of(name).unwrap();
        let shape = d.params.params()[i].value.shape().to_vec();
        d.params.params_mut()[i].value = Tensor::zeros(&shape);
    }
    d
}

fn batch(sp: usize, b: usize, seed: u64) -> Tensor {
    Tensor::uniform(&[b, 3, sp, sp], 0.0, 1.0, &mut rng(seed))
}

#[test]
fn constant_discriminator_plug_ins() {
    let d = constant_d(4);
    let x = batch(8, 6, 2);
    let y = vec![1, 2, 3, 4, 1, 2];
    let mut tape = Tape::new();
    let vars = d.params.bind(&mut tape, false);
    let xr = tape.constant(x.clone());
    let xf = tape.constant(x.clone());
    let real = d.forward(&mut tape, &vars, xr, Mode::Eval, &mut rng(0)).unwrap();
    let fake = d.forward(&mut tape, &vars, xf, Mode::Eval, &mut rng(0)).unwrap();
    let loss = d_loss(&mut tape, &real, &y, &fake, &y, 4, FakeTarget::FakeSlot).unwrap().report(&tape);
    assert!((loss.source - 4f64.ln()).abs() < 1e-4, "{loss:?}");
    assert!((loss.class - 2.0 * 8f64.ln()).abs() < 1e-4, "{loss:?}");
    assert!((loss.total - loss.source - loss.class).abs() < 1e-6);
    assert!((loss.source - 1.3863).abs() < 1e-3 && (loss.class - 4.1589).abs() < 1e-3);

    let adv: Vec<f64> = MutationKind::ALL
        .iter()
        .map(|&k| {
            let v = adversarial_term(&mut tape, k, fake.source).unwrap();
            tape.value(v).item() as f64
        })
        .collect();
    for (a, want) in adv.iter().zip([-LN_2, LN_2, 0.25]) {
        assert!((a - want).abs() < 1e-4, "{adv:?}");
    }

    let fq: Vec<f64> =
        MutationKind::ALL.iter().map(|&k| fitness_quality(&d, &x, &y, k, ClassTerm::LogProb).unwrap()).collect();
    for (q, want) in fq.iter().zip([-1.3863, -2.7726, -2.3294]) {
        assert!((q - want).abs() < 1e-3, "{fq:?}");
    }
}

#[test]
fn mutation_loss_is_adversarial_plus_class_term() {
    let spec = NetSpec::with_widths(8, 3, 4, [2, 3, 4]).unwrap();
    let d = Discriminator::new(spec, 5);
    let x = batch(8, 5, 6);
    let y = vec![3, 1, 2, 2, 1];
    for form in [ClassTerm::LogProb, ClassTerm::Complement] {
        for kind in MutationKind::ALL {
            let mut tape = Tape::new();
            let vars = d.params.bind(&mut tape, false);
            let xv = tape.constant(x.clone());
            let out = d.forward(&mut tape, &vars, xv, Mode::Eval, &mut rng(0)).unwrap();
            let total = g_mutation_loss(&mut tape, kind, &out, &y, 3, form).unwrap();
            let adv = adversarial_term(&mut tape, kind, out.source).unwrap();
            let cls = generator_class_term(&mut tape, out.class_logprob, &y, 3, form).unwrap();
            let (t, a, c) = (tape.value(total).item(), tape.value(adv).item(), tape.value(cls).item());
            assert!((t - a - c).abs() < 1e-6);
        }
    }
}

#[test]
fn complement_term_matches_direct_formula() {
    let mut tape: Tape<f64> = Tape::new();
    let logits = Tensor::<f64>::new(vec![2, 4], vec![0.5, -1.0, 2.0, 0.0, 1.0, 1.0, -2.0, 0.3]).unwrap();
    let l = tape.constant(logits.clone());
    let lp = tape.log_softmax(l).unwrap();
    let v = generator_class_term(&mut tape, lp, &[2, 1], 2, ClassTerm::Complement).unwrap();
    let p = |row: &[f64], i: usize| row[i].exp() / row.iter().map(|x| x.exp()).sum::<f64>();
    let d = logits.data();
    let want = ((1.0 - p(&d[..4], 1)).ln() + (1.0 - p(&d[4..], 0)).ln()) / 2.0;
    assert!((tape.value(v).item() - want).abs() < 1e-12);
}

#[test]
fn saturated_discriminator_gives_finite_losses() {
    let mut tape: Tape<f64> = Tape::new();
    let s = tape.constant(Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap());
    for kind in MutationKind::ALL {
        let v = adversarial_term(&mut tape, kind, s).unwrap();
        assert!(tape.value(v).item().is_finite());
    }
}

#[test]
fn fitness_diversity_leaves_discriminator_untouched() {
    let spec = NetSpec::with_widths(8, 2, 4, [2, 3, 4]).unwrap();
    let d = Discriminator::new(spec, 7);
    let before = d.clone();
    let (xr, xf) = (batch(8, 4, 1), batch(8, 4, 2));
    let f1 = fitness_diversity(&d, &xr, &[1, 2, 1, 2], &xf, &[2, 2, 1, 1], FakeTarget::FakeSlot, Mode::Train, &mut rng(3))
        .unwrap();
    let f2 = fitness_diversity(&d, &xr, &[1, 2, 1, 2], &xf, &[2, 2, 1, 1], FakeTarget::FakeSlot, Mode::Train, &mut rng(3))
        .unwrap();
    assert_eq!(d, before);
    assert_eq!(f1.to_bits(), f2.to_bits());
    assert!(f1.is_finite());
}

#[test]
fn architecture_shapes_for_every_size() {
    for sp in [20, 24, 28] {
        for n in [2, 13, 16] {
            let spec = NetSpec::new(sp, n).unwrap();
            assert_eq!(spec.trunk_width(), 512);
            assert_eq!(spec.k0(), sp / 4);
            let g = Generator::<f32>::new(spec, 1);
            let d = Discriminator::<f32>::new(spec, 2);
            assert_eq!(g.params.count(), spec.generator_params());
            assert_eq!(d.params.count(), spec.discriminator_params());
            let lat = sample_latent::<f32>(3, n, Z_DIM, &ClassSampler::Uniform, &mut rng(4)).unwrap();
            assert_eq!(lat.input(n).unwrap().shape(), [3, Z_DIM + n]);
            let x = g.generate(&lat, Mode::Train).unwrap();
            assert_eq!(x.shape(), [3, 3, sp, sp]);
            assert!(x.data().iter().all(|&v| v > 0.0 && v < 1.0));
            let (src, lp) = d.discriminate(&x).unwrap();
            assert_eq!((src.len(), lp.shape()), (3, &[3, 2 * n][..]));
        }
    }
}

#[test]
fn generator_rejects_wrong_input_width() {
    let spec = NetSpec::with_widths(8, 3, 4, [2, 3, 4]).unwrap();
    let g = Generator::<f32>::new(spec, 1);
    let mut tape = Tape::new();
    let vars = g.params.bind(&mut tape, false);
    let x = tape.constant(Tensor::zeros(&[2, 6]));
    assert!(g.forward(&mut tape, &vars, x, Mode::Eval).is_err());
}

#[test]
fn latent_labels_are_uniform() {
    let lat = sample_latent::<f32>(40_000, 4, 2, &ClassSampler::Uniform, &mut rng(9)).unwrap();
    let mut c = [0usize; 4];
    lat.labels.iter().for_each(|&l| c[l as usize - 1] += 1);
    for n in c {
        assert!((n as f64 / 40_000.0 - 0.25).abs() < 0.01, "{c:?}");
    }
    let mean = lat.z.data().iter().map(|&v| v as f64).sum::<f64>() / lat.z.numel() as f64;
    assert!(mean.abs() < 0.01);
    let given = sample_latent::<f32>(3, 4, 2, &ClassSampler::Given(vec![4, 4, 1]), &mut rng(9)).unwrap();
    assert_eq!(given.labels, vec![4, 4, 1]);
    assert!(sample_latent::<f32>(2, 4, 2, &ClassSampler::Given(vec![1]), &mut rng(9)).is_err());
}

#[test]
fn eval_mode_rows_do_not_interact() {
    let spec = NetSpec::with_widths(8, 3, 4, [2, 3, 4]).unwrap();
    let d = Discriminator::<f64>::new(spec, 3);
    let x = Tensor::<f64>::uniform(&[4, 3, 8, 8], 0.0, 1.0, &mut rng(1));
    let (src_all, lp_all) = d.discriminate(&x).unwrap();
    let row = 3 * 64;
    let x2 = Tensor::new(vec![1, 3, 8, 8], x.data()[2 * row..3 * row].to_vec()).unwrap();
    let (src_one, lp_one) = d.discriminate(&x2).unwrap();
    assert!((src_all[2] - src_one[0]).abs() < 1e-12);
    for (a, b) in lp_all.data()[12..18].iter().zip(lp_one.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn selection_ignores_monotone_rescaling(s in prop::array::uniform3(-50.0f64..50.0), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let k = select_survivor(s).unwrap();
        prop_assert_eq!(select_survivor(s.map(|v| a * v + b)).unwrap(), k);
        prop_assert_eq!(select_survivor(s.map(f64::exp)).unwrap(), k);
    }

    #[test]
    fn survivor_has_maximal_score(s in prop::array::uniform3(-3i32..3)) {
        let f = s.map(f64::from);
        let k = select_survivor(f).unwrap();
        prop_assert!(f.iter().all(|&v| v <= f[k.index()]));
        prop_assert!(f[..k.index()].iter().all(|&v| v < f[k.index()]));
    }

    #[test]
    fn argmax_ignores_fake_slots(real in prop::collection::vec(-5.0f64..0.0, 3), fake in prop::collection::vec(-5.0f64..0.0, 3)) {
        let row: Vec<f64> = real.iter().chain(&fake).copied().collect();
        let want = (0..3).fold(0, |best, i| if real[i] > real[best] { i } else { best }) as u16 + 1;
        prop_assert_eq!(argmax_real(&row, 3), vec![want]);
    }
}
