use super::{Element, EngineError, Tape, Tensor, Var};

/// Batch statistics returned by a train-mode batch-norm pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T = f32> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
    /// Frozen parameters never receive gradients or optimizer updates.
    pub trainable: bool,
}

/// Ordered, named parameters of one model plus its non-trainable buffers
/// (batch-norm running statistics).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T = f32> {
    params: Vec<Param<T>>,
    buffers: Vec<(String, Tensor<T>)>,
}

impl<T: Element> Default for ParamSet<T> {
    fn default() -> Self {
        Self { params: Vec::new(), buffers: Vec::new() }
    }
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.params.push(Param { name: name.into(), value, grad: None, trainable: true });
        self.params.len() - 1
    }

    pub fn push_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.buffers.push((name.into(), value));
        self.buffers.len() - 1
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[(String, Tensor<T>)] {
        &self.buffers
    }

    pub fn buffer(&self, i: usize) -> &Tensor<T> {
        &self.buffers[i].1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
        }
    }

    /// Total number of scalar parameters (buffers excluded).
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Places every parameter on the tape as a leaf. With `with_grad` false
    /// the leaves are constants (gradients still flow through them to other
    /// inputs).
    pub fn bind(&self, tape: &mut Tape<T>, with_grad: bool) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone(), with_grad && p.trainable)).collect()
    }

    /// Adds the tape's leaf gradients into the stored gradients.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, vars: &[Var]) {
        assert_eq!(vars.len(), self.params.len(), "binding does not match parameter set");
        for (p, v) in self.params.iter_mut().zip(vars) {
            if let Some(g) = tape.grad(*v) {
                match &mut p.grad {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(g.to_vec()),
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Euclidean norm of the concatenation of all stored gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|&v| v.to_f64().unwrap_or(f64::NAN).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Folds batch statistics into running mean/variance buffers.
    pub fn update_running(&mut self, mean_buf: usize, var_buf: usize, stats: &BnStats<T>, momentum: T) {
        for (r, &s) in self.buffers[mean_buf].1.data_mut().iter_mut().zip(&stats.mean) {
            *r = (T::one() - momentum) * *r + momentum * s;
        }
        for (r, &s) in self.buffers[var_buf].1.data_mut().iter_mut().zip(&stats.var) {
            *r = (T::one() - momentum) * *r + momentum * s;
        }
    }

    /// All named tensors in checkpoint order: parameters, then buffers.
    pub fn records(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params
            .iter()
            .map(|p| (p.name.as_str(), &p.value))
            .chain(self.buffers.iter().map(|(n, t)| (n.as_str(), t)))
    }

    /// Overwrites values from named records. Every record must match an
    /// existing parameter or buffer by name and shape, and every slot must be
    /// covered.
    pub fn load_records(&mut self, records: Vec<(String, Tensor<T>)>) -> Result<(), EngineError> {
        let expected = self.params.len() + self.buffers.len();
        if records.len() != expected {
            return Err(EngineError::Contract(format!(
                "checkpoint holds {} tensors, model expects {expected}",
                records.len()
            )));
        }
        for (name, t) in records {
            let slot = if let Some(p) = self.params.iter_mut().find(|p| p.name == name) {
                &mut p.value
            } else if let Some((_, b)) = self.buffers.iter_mut().find(|(n, _)| *n == name) {
                b
            } else {
                return Err(EngineError::Contract(format!("unknown tensor '{name}' in checkpoint")));
            };
            if slot.shape() != t.shape() {
                return Err(EngineError::Contract(format!(
                    "tensor '{name}' has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(())
    }
}
