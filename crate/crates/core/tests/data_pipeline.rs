use mfegan::data::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IN_SIZES: [usize; 16] = [46, 1428, 830, 237, 483, 730, 28, 478, 20, 972, 2455, 593, 205, 1265, 386, 93];
const IN_TRAIN: [usize; 16] = [2, 71, 42, 12, 24, 36, 1, 24, 1, 49, 123, 30, 10, 63, 19, 5];

fn labels_from_sizes(sizes: &[usize]) -> Vec<u16> {
    sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c as u16 + 1, n)).collect()
}

#[test]
fn indian_pines_training_column() {
    assert_eq!(split_counts(&IN_SIZES, 0.05).unwrap(), IN_TRAIN.to_vec());
    let labels = labels_from_sizes(&IN_SIZES);
    let s = stratified_split(&labels, 16, 0.05, 42).unwrap();
    assert_eq!(s.train_counts(&labels, 16), IN_TRAIN.to_vec());
    assert_eq!((s.train.len(), s.test.len()), (512, 9737));
}

#[test]
fn indian_pines_shaped_cube_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.hsc");
    let values: Vec<f32> = (0..145 * 145 * 200).map(|i| (i % 997) as f32).collect();
    let cube = HsiCube::new(145, 145, 200, values).unwrap();
    save_cube(&path, &cube).unwrap();
    let back = load_cube(&path).unwrap();
    assert_eq!((back.height, back.width, back.bands), (145, 145, 200));
    assert_eq!(back, cube);
}

/// Cyclic Jacobi eigenvalue iteration on a dense symmetric matrix.
#[allow(clippy::needless_range_loop)]
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

#[test]
fn explained_variance_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (h, w, b) = (9, 11, 7);
    let values: Vec<f32> = (0..h * w * b).map(|i| rng.random::<f32>() * (1.0 + (i / (h * w)) as f32)).collect();
    let cube = HsiCube::new(h, w, b, values).unwrap();
    let n = h * w;
    let mean: Vec<f64> = (0..b).map(|i| cube.band(i).iter().map(|&v| v as f64).sum::<f64>() / n as f64).collect();
    let cov: Vec<Vec<f64>> = (0..b)
        .map(|i| {
            (0..b)
                .map(|j| {
                    (0..n).map(|p| (cube.band(i)[p] as f64 - mean[i]) * (cube.band(j)[p] as f64 - mean[j])).sum::<f64>()
                        / (n - 1) as f64
                })
                .collect()
        })
        .collect();
    let oracle = jacobi_eigenvalues(cov);
    let want = oracle[..3].iter().sum::<f64>() / oracle.iter().sum::<f64>();
    let (reduced, pca) = pca_reduce(&cube, 3).unwrap();
    assert!((pca.explained_ratio() - want).abs() < 1e-9, "{} vs {want}", pca.explained_ratio());
    for (a, b) in pca.eigenvalues.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-9);
    }
    assert_eq!(reduced.bands, 3);
    assert!(reduced.values.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn pca_is_deterministic_in_sign() {
    let (cube, _) = synth_cube(&SynthSpec::reference(3)).unwrap();
    let a = Pca::fit(&cube, 3).unwrap();
    for axis in &a.components {
        let lead = axis.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        assert!(lead > 0.0);
    }
    assert_eq!(a, Pca::fit(&cube, 3).unwrap());
}

fn scene(h: usize, w: usize, seed: u64) -> (HsiCube, LabelRaster) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..3 * h * w).map(|_| rng.random::<f32>()).collect();
    let mut labels: Vec<u16> = (0..h * w).map(|_| rng.random_range(0..4u16)).collect();
    labels[0] = 1;
    labels[(h / 2) * w + w / 2] = 1;
    (1..=3).for_each(|c| labels[c as usize] = c);
    (HsiCube::new(h, w, 3, values).unwrap(), LabelRaster::new(h, w, labels).unwrap())
}

#[test]
fn corner_and_interior_patches() {
    let (cube, labels) = scene(145, 145, 1);
    let p = extract_patches(&cube, &labels, 20).unwrap();
    assert_eq!(p.pixels[0], 0);
    // corner patch: row offset 10 col offset 10 is the pixel itself; offset 9 mirrors to index 1
    let first = p.patch(0);
    assert_eq!(first[10 * 20 + 10], cube.get(0, 0, 0));
    assert_eq!(first[9 * 20 + 10], cube.get(0, 1, 0));
    assert_eq!(first[10 * 20 + 9], cube.get(0, 0, 1));
    let interior = (0..p.len()).position(|i| p.pixels[i] == 72 * 145 + 72).unwrap();
    let patch = p.patch(interior);
    for band in 0..3 {
        for r in 0..20 {
            for c in 0..20 {
                assert_eq!(patch[(band * 20 + r) * 20 + c], cube.get(band, 62 + r, 62 + c));
            }
        }
    }
}

#[test]
fn patch_archive_round_trips() {
    let (cube, labels) = scene(12, 9, 2);
    let p = extract_patches(&cube, &labels, 8).unwrap();
    let mut buf = Vec::new();
    write_patches(&mut buf, &p).unwrap();
    assert_eq!(read_patches(&buf[..]).unwrap(), p);
}

#[test]
fn oversampling_narrative_ratios_collapse() {
    for (major, minor) in [(123usize, 1usize), (100, 2)] {
        let labels = labels_from_sizes(&[major, minor]);
        let idx = oversample_indices(&labels, 2, 9);
        let mut counts = [0usize; 2];
        idx.iter().for_each(|&i| counts[labels[i] as usize - 1] += 1);
        assert_eq!(counts, [major, major]);
        assert_eq!(imbalance_ratio(&counts), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_is_a_stratified_partition(
        sizes in prop::collection::vec(1usize..60, 1..8),
        fraction in 0.01f64..0.99,
        seed in any::<u64>(),
    ) {
        let labels = labels_from_sizes(&sizes);
        let s = stratified_split(&labels, sizes.len(), fraction, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        let tc = s.train_counts(&labels, sizes.len());
        prop_assert!(tc.iter().all(|&c| c >= 1));
        prop_assert_eq!(tc, split_counts(&sizes, fraction).unwrap());
    }

    #[test]
    fn oversampling_keeps_originals_and_classes(
        sizes in prop::collection::vec(1usize..40, 1..6),
        seed in any::<u64>(),
    ) {
        let labels = labels_from_sizes(&sizes);
        let idx = oversample_indices(&labels, sizes.len(), seed);
        let max = *sizes.iter().max().unwrap();
        prop_assert_eq!(idx.len(), max * sizes.len());
        let mut seen = vec![false; labels.len()];
        idx.iter().for_each(|&i| seen[i] = true);
        prop_assert!(seen.iter().all(|&s| s));
        let mut counts = vec![0; sizes.len()];
        idx.iter().for_each(|&i| counts[labels[i] as usize - 1] += 1);
        prop_assert!(counts.iter().all(|&c| c == max));
    }

    #[test]
    fn extraction_is_total_and_label_preserving(
        sp in prop::sample::select(vec![20usize, 24, 28]),
        h in 3usize..30,
        w in 3usize..30,
        seed in any::<u64>(),
    ) {
        let (cube, labels) = scene(h, w, seed);
        let p = extract_patches(&cube, &labels, sp).unwrap();
        let labeled = labels.labels.iter().filter(|&&l| l > 0).count();
        prop_assert_eq!(p.len(), labeled);
        for i in 0..p.len() {
            prop_assert_eq!(p.labels[i], labels.labels[p.pixels[i]]);
            let centre = p.patch(i)[(sp / 2) * sp + sp / 2];
            prop_assert_eq!(centre, cube.band(0)[p.pixels[i]]);
        }
    }
}
