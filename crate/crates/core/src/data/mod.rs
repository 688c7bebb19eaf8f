//! Spectral cubes, label rasters and the patch pipeline that turns them into
//! classifier inputs.
//!
//! The usual sequence is [`load_cube`] → [`pca_reduce`] → [`extract_patches`]
//! → [`stratified_split`], optionally followed by [`random_oversample`] on the
//! training part.

mod io;
mod pca;
mod patches;
mod split;
mod synth;

pub use io::{
    load_cube, load_labels, load_patches, read_cube, read_labels, read_patches, save_cube, save_labels, save_patches,
    write_cube, write_labels, write_patches, CUBE_MAGIC, LABEL_MAGIC, PATCH_MAGIC,
};
pub use pca::{pca_reduce, Pca};
pub use patches::{extract_patches, PatchSet};
pub use split::{oversample_indices, random_oversample, split_counts, stratified_split, stratified_split_counts, SplitSpec};
pub use synth::{synth_cube, SynthSpec};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },
    #[error("length error at byte {offset}: expected {expected} more bytes, found {found}")]
    Length { offset: u64, expected: u64, found: u64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<DataError>,
    },
}

impl DataError {
    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        DataError::File { path: path.into(), source: Box::new(self) }
    }
}

/// A spectral cube stored band-major: `values[(band * height + row) * width + col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub values: Vec<f32>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f32>) -> Result<Self, DataError> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(DataError::Parameter(format!("cube extents must be positive, got {height}x{width}x{bands}")));
        }
        if values.len() != height * width * bands {
            return Err(DataError::Data(format!(
                "cube {height}x{width}x{bands} needs {} values, got {}",
                height * width * bands,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Data(format!("non-finite cube value at index {i}")));
        }
        Ok(Self { height, width, bands, values })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn band(&self, b: usize) -> &[f32] {
        &self.values[b * self.pixels()..(b + 1) * self.pixels()]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.values[b * n..(b + 1) * n]
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.values[(band * self.height + row) * self.width + col]
    }
}

/// Per-pixel class ids, row-major; 0 marks unlabeled background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRaster {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
}

impl LabelRaster {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self, DataError> {
        if labels.len() != height * width {
            return Err(DataError::Data(format!(
                "raster {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self { height, width, labels })
    }

    /// Number of classes N, checking that ids 1..=N all occur.
    pub fn class_count(&self) -> Result<usize, DataError> {
        let n = self.labels.iter().copied().max().unwrap_or(0) as usize;
        if n == 0 {
            return Err(DataError::Data("raster has no labeled pixels".into()));
        }
        let mut seen = vec![false; n + 1];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = (1..=n).find(|&c| !seen[c]) {
            return Err(DataError::Data(format!("class ids are not contiguous: class {missing} of 1..{n} is absent")));
        }
        Ok(n)
    }

    /// Labeled-pixel count per class, index 0 = class 1.
    pub fn histogram(&self, n: usize) -> Vec<usize> {
        let mut h = vec![0; n];
        for &l in self.labels.iter().filter(|&&l| l > 0) {
            if (l as usize) <= n {
                h[l as usize - 1] += 1;
            }
        }
        h
    }

    pub fn check_matches(&self, cube: &HsiCube) -> Result<(), DataError> {
        if self.height != cube.height || self.width != cube.width {
            return Err(DataError::Data(format!(
                "label raster is {}x{} but cube is {}x{}",
                self.height, self.width, cube.height, cube.width
            )));
        }
        Ok(())
    }
}

/// Per-band min-max scaling to [0, 1]; constant bands become all zeros.
pub fn normalize_cube(mut cube: HsiCube) -> HsiCube {
    for b in 0..cube.bands {
        normalize_in_place(cube.band_mut(b));
    }
    cube
}

pub(crate) fn normalize_in_place(band: &mut [f32]) {
    let (lo, hi) = band.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    for v in band.iter_mut() {
        *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
    }
}

/// Ratio of largest to smallest nonzero class count.
pub fn imbalance_ratio(counts: &[usize]) -> f64 {
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0);
    if min == 0 {
        0.0
    } else {
        max as f64 / min as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let c = HsiCube::new(1, 3, 1, vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(normalize_cube(c).values, vec![0.0, 0.5, 1.0]);
        let c = HsiCube::new(1, 2, 1, vec![5.0, 5.0]).unwrap();
        assert_eq!(normalize_cube(c).values, vec![0.0, 0.0]);
        let full = vec![0.0, 0.25, 1.0, 0.6];
        let c = HsiCube::new(2, 2, 1, full.clone()).unwrap();
        assert_eq!(normalize_cube(c).values, full);
    }

    #[test]
    fn class_count_requires_contiguous_ids() {
        let r = LabelRaster::new(1, 4, vec![0, 1, 3, 3]).unwrap();
        assert!(matches!(r.class_count(), Err(DataError::Data(_))));
        let r = LabelRaster::new(1, 4, vec![0, 1, 2, 2]).unwrap();
        assert_eq!(r.class_count().unwrap(), 2);
        assert_eq!(r.histogram(2), vec![1, 2]);
    }

    #[test]
    fn ratio() {
        assert_eq!(imbalance_ratio(&[100, 2, 50]), 50.0);
    }
}
