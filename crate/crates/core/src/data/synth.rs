use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use super::{DataError, HsiCube, LabelRaster};

/// Recipe for a synthetic labelled scene.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Labeled pixels per class; class `i + 1` gets `sizes[i]`.
    pub sizes: Vec<usize>,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Four classes of 400/200/100/8 pixels over 16 bands on a 40×40 scene.
    pub fn reference(seed: u64) -> Self {
        Self { height: 40, width: 40, bands: 16, sizes: vec![400, 200, 100, 8], noise: 0.08, seed }
    }
}

const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Builds a cube where each class is one or more compact blobs sharing a
/// smooth spectral signature, plus Gaussian noise. Background pixels follow
/// their own signature and carry label 0.
pub fn synth_cube(spec: &SynthSpec) -> Result<(HsiCube, LabelRaster), DataError> {
    let SynthSpec { height: h, width: w, bands, ref sizes, noise, seed } = *spec;
    if h == 0 || w == 0 || bands == 0 || sizes.is_empty() {
        return Err(DataError::Parameter("synthetic scene needs positive extents and at least one class".into()));
    }
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(DataError::Parameter(format!("class {} has size 0", c + 1)));
    }
    let total: usize = sizes.iter().sum();
    if total > h * w {
        return Err(DataError::Parameter(format!("{total} labeled pixels do not fit a {h}x{w} scene")));
    }
    if sizes.len() > u16::MAX as usize {
        return Err(DataError::Parameter("too many classes".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(DataError::Parameter(format!("noise level {noise} must be finite and nonnegative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut labels = vec![0u16; h * w];
    for (c, &size) in sizes.iter().enumerate() {
        grow_region(&mut labels, h, w, (c + 1) as u16, size, &mut rng);
    }

    // signature 0 is the background
    let signatures: Vec<Vec<f64>> = (0..=sizes.len())
        .map(|c| {
            let f1 = 0.5 + c as f64 * 0.37 + rng.random::<f64>() * 0.2;
            let f2 = 1.3 + rng.random::<f64>() * 1.5;
            let (p1, p2) = (rng.random::<f64>() * std::f64::consts::TAU, rng.random::<f64>() * std::f64::consts::TAU);
            let level = 0.35 + 0.3 * rng.random::<f64>();
            (0..bands)
                .map(|b| {
                    let t = if bands > 1 { b as f64 / (bands - 1) as f64 } else { 0.0 };
                    level + 0.2 * (std::f64::consts::TAU * f1 * t + p1).sin() + 0.08 * (std::f64::consts::TAU * f2 * t + p2).cos()
                })
                .collect()
        })
        .collect();

    let gauss = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut values = vec![0.0f32; bands * h * w];
    for p in 0..h * w {
        let sig = &signatures[labels[p] as usize];
        for (b, &s) in sig.iter().enumerate() {
            let eps = if noise > 0.0 { gauss.sample(&mut rng) } else { 0.0 };
            values[b * h * w + p] = (s + eps) as f32;
        }
    }
    Ok((HsiCube::new(h, w, bands, values)?, LabelRaster::new(h, w, labels)?))
}

/// Claims `size` background pixels for `class` by randomized region growth,
/// reseeding at a fresh free pixel whenever the current blob is enclosed.
fn grow_region(labels: &mut [u16], h: usize, w: usize, class: u16, size: usize, rng: &mut ChaCha8Rng) {
    let mut frontier: Vec<usize> = Vec::new();
    let mut claimed = 0;
    while claimed < size {
        if frontier.is_empty() {
            let free: Vec<usize> = (0..h * w).filter(|&p| labels[p] == 0).collect();
            frontier.push(free[rng.random_range(0..free.len())]);
        }
        let p = frontier.swap_remove(rng.random_range(0..frontier.len()));
        if labels[p] != 0 {
            continue;
        }
        labels[p] = class;
        claimed += 1;
        let (r, c) = ((p / w) as isize, (p % w) as isize);
        for (dr, dc) in NEIGHBOURS {
            let (nr, nc) = (r + dr, c + dc);
            if nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w {
                let q = nr as usize * w + nc as usize;
                if labels[q] == 0 {
                    frontier.push(q);
                }
            }
        }
    }
}
