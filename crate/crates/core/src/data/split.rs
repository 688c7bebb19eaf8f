use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, PatchSet};

/// A per-class train/test partition of sample indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    /// Ascending sample indices.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn train_counts(&self, labels: &[u16], classes: usize) -> Vec<usize> {
        count(&self.train, labels, classes)
    }

    pub fn test_counts(&self, labels: &[u16], classes: usize) -> Vec<usize> {
        count(&self.test, labels, classes)
    }
}

impl SplitSpec {
    /// `index,set` rows in index order, `set` being `train` or `test`.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(usize, &str)> =
            self.train.iter().map(|&i| (i, "train")).chain(self.test.iter().map(|&i| (i, "test"))).collect();
        rows.sort_unstable();
        let mut out = String::from("index,set\n");
        for (i, s) in rows {
            out.push_str(&format!("{i},{s}\n"));
        }
        out
    }

    /// Inverse of [`Self::to_csv`] for a sample set of size `len`; every
    /// index must appear exactly once.
    pub fn from_csv(text: &str, len: usize) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "index,set")) => {}
            _ => return Err(DataError::Data("split file: missing 'index,set' header".into())),
        }
        let mut seen = vec![false; len];
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (ln, line) in lines {
            let bad = |what: &str| DataError::Data(format!("split file line {}: {what}", ln + 1));
            let (i, set) = line.split_once(',').ok_or_else(|| bad("expected 'index,set'"))?;
            let i: usize = i.parse().map_err(|_| bad("index is not an integer"))?;
            if i >= len || seen[i] {
                return Err(bad("index out of range or repeated"));
            }
            seen[i] = true;
            match set {
                "train" => train.push(i),
                "test" => test.push(i),
                _ => return Err(bad("set must be 'train' or 'test'")),
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(DataError::Data(format!("split file covers fewer than {len} samples")));
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok(Self { train, test })
    }
}

fn count(idx: &[usize], labels: &[u16], classes: usize) -> Vec<usize> {
    let mut c = vec![0; classes];
    idx.iter().for_each(|&i| c[labels[i] as usize - 1] += 1);
    c
}

fn round_half_even(x: f64) -> f64 {
    let fl = x.floor();
    if ((x - fl) - 0.5).abs() < 1e-9 {
        if fl % 2.0 == 0.0 {
            fl
        } else {
            fl + 1.0
        }
    } else {
        x.round()
    }
}

/// Training-sample count per class: `fraction · n` rounded half to even,
/// never below one.
pub fn split_counts(sizes: &[usize], fraction: f64) -> Result<Vec<usize>, DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Parameter(format!("train fraction {fraction} is not in (0, 1)")));
    }
    sizes
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if n == 0 {
                Err(DataError::Data(format!("class {} has no samples", c + 1)))
            } else {
                Ok((round_half_even(fraction * n as f64) as usize).max(1))
            }
        })
        .collect()
}

/// Samples `fraction` of every class for training; the rest is test.
pub fn stratified_split(labels: &[u16], classes: usize, fraction: f64, seed: u64) -> Result<SplitSpec, DataError> {
    let sizes = count(&(0..labels.len()).collect::<Vec<_>>(), labels, classes);
    let counts = split_counts(&sizes, fraction)?;
    stratified_split_counts(labels, classes, &counts, seed)
}

/// Like [`stratified_split`] with explicit per-class training counts.
pub fn stratified_split_counts(labels: &[u16], classes: usize, counts: &[usize], seed: u64) -> Result<SplitSpec, DataError> {
    if counts.len() != classes {
        return Err(DataError::Parameter(format!("{} train counts given for {classes} classes", counts.len())));
    }
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 || l as usize > classes {
            return Err(DataError::Data(format!("sample {i} has label {l} outside 1..{classes}")));
        }
        by_class[l as usize - 1].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, (mut members, &k)) in by_class.into_iter().zip(counts).enumerate() {
        if members.is_empty() {
            return Err(DataError::Data(format!("class {} has no samples", c + 1)));
        }
        if k == 0 || k > members.len() {
            return Err(DataError::Parameter(format!(
                "class {} has {} samples, cannot train on {k}",
                c + 1,
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec { train, test })
}

/// Indices that raise every class to the majority count: all originals plus
/// draws with replacement from the same class, shuffled.
pub fn oversample_indices(labels: &[u16], classes: usize, seed: u64) -> Vec<usize> {
    let mut by_class = vec![Vec::new(); classes];
    labels.iter().enumerate().for_each(|(i, &l)| by_class[l as usize - 1].push(i));
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = (0..labels.len()).collect();
    for members in by_class.iter().filter(|m| !m.is_empty()) {
        for _ in members.len()..target {
            out.push(members[rng.random_range(0..members.len())]);
        }
    }
    out.shuffle(&mut rng);
    out
}

pub fn random_oversample(train: &PatchSet, seed: u64) -> PatchSet {
    train.select(&oversample_indices(&train.labels, train.classes, seed))
}
