use super::{DataError, HsiCube, LabelRaster};
use crate::tensor::Tensor;

/// Square three-channel patches with their class ids.
///
/// `data` holds `len() × 3 × sp × sp` values; `pixels[i]` is the row-major
/// index of the centre pixel patch `i` was cut around.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub sp: usize,
    pub classes: usize,
    pub data: Vec<f32>,
    pub labels: Vec<u16>,
    pub pixels: Vec<usize>,
}

impl PatchSet {
    pub fn new(sp: usize, classes: usize, data: Vec<f32>, labels: Vec<u16>, pixels: Vec<usize>) -> Result<Self, DataError> {
        check_sp(sp)?;
        if labels.len() != pixels.len() || data.len() != labels.len() * 3 * sp * sp {
            return Err(DataError::Data(format!(
                "{} labels, {} pixel ids and {} values do not describe one patch set of side {sp}",
                labels.len(),
                pixels.len(),
                data.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l == 0 || l as usize > classes) {
            return Err(DataError::Data(format!("patch label {l} outside 1..{classes}")));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::Data(format!("patch value {v} outside [0, 1]")));
        }
        Ok(Self { sp, classes, data, labels, pixels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn patch_len(&self) -> usize {
        3 * self.sp * self.sp
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        let n = self.patch_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Sample count per class, index 0 = class 1.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        self.labels.iter().for_each(|&l| c[l as usize - 1] += 1);
        c
    }

    /// A new set holding the given samples in the given order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> PatchSet {
        let mut data = Vec::with_capacity(indices.len() * self.patch_len());
        indices.iter().for_each(|&i| data.extend_from_slice(self.patch(i)));
        PatchSet {
            sp: self.sp,
            classes: self.classes,
            data,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            pixels: indices.iter().map(|&i| self.pixels[i]).collect(),
        }
    }

    /// Stacks the chosen patches into a `[B, 3, sp, sp]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.patch_len());
        indices.iter().for_each(|&i| data.extend_from_slice(self.patch(i)));
        Tensor::new(vec![indices.len(), 3, self.sp, self.sp], data).expect("patch batch must be nonempty")
    }
}

pub(crate) fn check_sp(sp: usize) -> Result<(), DataError> {
    if sp == 0 || !sp.is_multiple_of(4) {
        return Err(DataError::Parameter(format!("patch side {sp} is not a positive multiple of 4")));
    }
    Ok(())
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Cuts one `sp × sp` patch around every labeled pixel, in row-major pixel
/// order. The centre sits at offset `sp / 2`; out-of-image taps are mirrored.
pub fn extract_patches(cube: &HsiCube, labels: &LabelRaster, sp: usize) -> Result<PatchSet, DataError> {
    check_sp(sp)?;
    if cube.bands != 3 {
        return Err(DataError::Parameter(format!("patches need a 3-band cube, got {} bands", cube.bands)));
    }
    labels.check_matches(cube)?;
    let classes = labels.class_count()?;
    let (h, w) = (cube.height, cube.width);
    let half = (sp / 2) as isize;
    let pixels: Vec<usize> = (0..h * w).filter(|&p| labels.labels[p] > 0).collect();
    let mut data = Vec::with_capacity(pixels.len() * 3 * sp * sp);
    for &p in &pixels {
        let (r, c) = ((p / w) as isize, (p % w) as isize);
        for band in 0..3 {
            let plane = cube.band(band);
            for dr in 0..sp as isize {
                let row = reflect(r - half + dr, h) * w;
                for dc in 0..sp as isize {
                    data.push(plane[row + reflect(c - half + dc, w)]);
                }
            }
        }
    }
    let ls = pixels.iter().map(|&p| labels.labels[p]).collect();
    PatchSet::new(sp, classes, data, ls, pixels)
}
