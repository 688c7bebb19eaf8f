use mfegan::data::PatchSet;
use mfegan::losses::{select_survivor, ClassTerm, FakeTarget};
use mfegan::tensor::AdamConfig;
use mfegan::training::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SP: usize = 8;

/// `per_class` patches per class; class `c` has mean intensity `c / (n + 1)`.
fn separable(n: usize, per_class: usize, seed: u64) -> PatchSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = 3 * SP * SP;
    let (mut data, mut labels) = (Vec::new(), Vec::new());
    for c in 1..=n {
        for _ in 0..per_class {
            let base = c as f32 / (n + 1) as f32;
            data.extend((0..len).map(|_| base + rng.random_range(-0.05..0.05)));
            labels.push(c as u16);
        }
    }
    let pixels = (0..labels.len()).collect();
    PatchSet::new(SP, n, data, labels, pixels).unwrap()
}

fn small_config(n: usize, epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 8, seed: 11, z_dim: 6, widths: [4, 6, 8], ..TrainConfig::new(SP, n) }
}

fn states(cfg: &TrainConfig) -> (GenState, DiscState) {
    let spec = cfg.net_spec().unwrap();
    (GenState::new(spec, cfg.seed, cfg.adam), DiscState::new(spec, cfg.seed, cfg.adam))
}

#[test]
fn discriminator_steps_reduce_its_loss() {
    let data = separable(3, 6, 1);
    let cfg = TrainConfig { widths: [16, 32, 64], ..small_config(3, 1) };
    let (g, mut d) = states(&cfg);
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, y) = (data.batch(&idx), data.labels.clone());
    // one seed: the same generated batch and dropout masks every step
    let first = train_step_d(&mut d, &g.net, &x, &y, FakeTarget::FakeSlot, 1).unwrap();
    let mut last = first;
    for _ in 0..10 {
        last = train_step_d(&mut d, &g.net, &x, &y, FakeTarget::FakeSlot, 1).unwrap();
    }
    assert!(last.total < first.total, "{first:?} -> {last:?}");
}

#[test]
fn steps_are_pure_functions_of_their_inputs() {
    let data = separable(2, 4, 2);
    let cfg = small_config(2, 1);
    let (g, d0) = states(&cfg);
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, y) = (data.batch(&idx), data.labels.clone());
    let (mut a, mut b) = (d0.clone(), d0.clone());
    let ra = train_step_d(&mut a, &g.net, &x, &y, FakeTarget::FakeSlot, 5).unwrap();
    let rb = train_step_d(&mut b, &g.net, &x, &y, FakeTarget::FakeSlot, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.total.to_bits(), rb.total.to_bits());
    assert_ne!(a.net, d0.net);
    assert_eq!(a.opt.steps(), 1);

    let (mut pa, mut pb) = (g.clone(), g.clone());
    let ea = train_step_g_evolutionary(&mut pa, &d0.net, &x, &y, 0.5, ClassTerm::LogProb, 9).unwrap();
    let eb = train_step_g_evolutionary(&mut pb, &d0.net, &x, &y, 0.5, ClassTerm::LogProb, 9).unwrap();
    assert_eq!(pa, pb);
    assert_eq!(ea.survivor, eb.survivor);
}

#[test]
fn survivor_replaces_parent() {
    let data = separable(2, 4, 3);
    let cfg = small_config(2, 1);
    let (g, d) = states(&cfg);
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, y) = (data.batch(&idx), data.labels.clone());
    let mut parent = g.clone();
    let evo = train_step_g_evolutionary(&mut parent, &d.net, &x, &y, 0.5, ClassTerm::LogProb, 4).unwrap();
    assert_eq!(evo.survivor, select_survivor(evo.scores.map(|s| s.total)).unwrap());
    for s in evo.scores {
        assert!((s.total - (0.5 * s.quality + s.diversity)).abs() < 1e-12);
    }
    assert_ne!(parent.net, g.net);
    assert_eq!(parent.opt.steps(), 1);
}

#[test]
fn training_runs_are_reproducible() {
    let data = separable(3, 6, 4);
    let cfg = small_config(3, 2);
    let a = train_mfegan(&cfg, &data).unwrap();
    let b = train_mfegan(&cfg, &data).unwrap();
    assert_eq!(a.d, b.d);
    assert_eq!(a.g, b.g);
    assert_eq!(a.trace.to_csv(), b.trace.to_csv());
    let other = train_mfegan(&TrainConfig { seed: 12, ..cfg }, &data).unwrap();
    assert_ne!(a.d, other.d);
}

#[test]
fn zero_epochs_returns_initial_networks() {
    let data = separable(2, 4, 5);
    let cfg = small_config(2, 0);
    let (g, d) = states(&cfg);
    let out = train_mfegan(&cfg, &data).unwrap();
    assert_eq!(out.d, d);
    assert_eq!(out.g, Some(g));
    assert!(out.trace.rows.is_empty());
    assert_eq!(out.trace.to_csv().lines().count(), 1);
}

#[test]
fn trace_columns_per_variant() {
    let data = separable(2, 4, 6);
    let cfg = small_config(2, 1);
    let m = train_mfegan(&cfg, &data).unwrap();
    let a = train_acgan(&cfg, &data).unwrap();
    assert!(m.trace.to_csv().lines().next().unwrap().ends_with(",survivor"));
    assert!(m.trace.rows.iter().all(|r| r.survivor.is_some() && r.fitness.is_some()));
    assert!(!a.trace.to_csv().contains("survivor"));
    assert!(a.trace.rows.iter().all(|r| r.g_loss.is_some() && r.survivor.is_none()));
    assert_eq!(m.trace.survivor_counts().iter().sum::<usize>(), m.trace.rows.len());
    // same networks, only the objectives differ
    assert_eq!(m.d.net.params.count(), a.d.net.params.count());
    assert_eq!(m.g.unwrap().net.params.count(), a.g.unwrap().net.params.count());
}

#[test]
fn trailing_single_sample_batch_is_dropped() {
    let data = separable(3, 3, 7);
    let cfg = small_config(3, 1);
    // 9 samples in batches of 8: the single leftover cannot be normalized
    let out = train_cnn(&cfg, &data).unwrap();
    assert_eq!(out.trace.rows.len(), 1);
}

#[test]
fn cnn_keeps_source_head_and_fake_slots_fixed() {
    let data = separable(3, 8, 8);
    let cfg = small_config(3, 3);
    let (_, d0) = states(&cfg);
    let out = train_cnn(&cfg, &data).unwrap();
    let p = |d: &DiscState, name: &str| d.net.params.params()[d.net.params.index_of(name).unwrap()].value.clone();
    assert_eq!(p(&out.d, "d.src.w"), p(&d0, "d.src.w"));
    assert_eq!(p(&out.d, "d.src.b"), p(&d0, "d.src.b"));
    // the class head is [trunk, 2n]; columns n.. are the fake slots
    let (w0, w1) = (p(&d0, "d.cls.w"), p(&out.d, "d.cls.w"));
    let n = 3;
    for (r, (a, b)) in w0.data().chunks(2 * n).zip(w1.data().chunks(2 * n)).enumerate() {
        assert_eq!(a[n..], b[n..], "row {r}");
    }
    assert_ne!(w0, w1);
    assert!(out.g.is_none());
}

#[test]
fn cnn_fits_separable_data() {
    let data = separable(3, 16, 9);
    let cfg = TrainConfig {
        adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
        widths: [16, 32, 64],
        ..small_config(3, 15)
    };
    let out = train_cnn(&cfg, &data).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    let pred = predict(&out.d.net, &data, &idx).unwrap();
    let correct = pred.iter().zip(&data.labels).filter(|(a, b)| a == b).count();
    assert!(correct as f64 / data.len() as f64 > 0.95, "{correct}/{}", data.len());
}

#[test]
fn oversampling_balances_the_real_stream() {
    let mut data = separable(2, 8, 10);
    // 14 of class 1, 2 of class 2
    for l in data.labels.iter_mut().skip(8).take(6) {
        *l = 1;
    }
    let plain = train_cnn(&small_config(2, 1), &data).unwrap();
    let ro = train_cnn(&TrainConfig { oversample: true, ..small_config(2, 1) }, &data).unwrap();
    // 16 samples vs 28 after oversampling, batches of 8
    assert_eq!(plain.trace.rows.len(), 2);
    assert_eq!(ro.trace.rows.len(), 4);
}

#[test]
fn mismatched_data_is_rejected() {
    let data = separable(3, 4, 11);
    assert!(matches!(train_cnn(&small_config(2, 1), &data), Err(TrainError::Config(_))));
    let mut missing = separable(3, 4, 11);
    missing.labels.iter_mut().for_each(|l| *l = (*l).min(2));
    assert!(matches!(train_mfegan(&small_config(3, 1), &missing), Err(TrainError::Config(_))));
}
