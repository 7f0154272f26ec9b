use crate::float::{lit, Float};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::Error;

/// Optimizer choice, serializable by the caller's config layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    /// `v ← μ·v + g; θ ← θ − lr·v`
    Sgd {
        momentum: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

/// Optimizer with per-parameter state aligned to one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    steps: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Float> Optimizer<T> {
    pub fn new(kind: OptimizerKind, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(),
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Self {
            kind,
            steps: 0,
            first: zeros(),
            second,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) {
        assert_eq!(grads.len(), store.len(), "gradient/parameter count");
        self.steps += 1;
        let lr_t: T = lit(lr);
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                let mu: T = lit(momentum);
                for ((p, g), v) in store.tensors_mut().iter_mut().zip(grads).zip(&mut self.first) {
                    for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *vv = mu * *vv + gv;
                        *pv -= lr_t * *vv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let (b1, b2, e): (T, T, T) = (lit(beta1), lit(beta2), lit(eps));
                let c1: T = lit(1.0 - beta1.powi(t));
                let c2: T = lit(1.0 - beta2.powi(t));
                let one = T::one();
                for (((p, g), m), v) in store
                    .tensors_mut()
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pv, &gv), mv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mv = b1 * *mv + (one - b1) * gv;
                        *vv = b2 * *vv + (one - b2) * gv * gv;
                        let mhat = *mv / c1;
                        let vhat = *vv / c2;
                        *pv -= lr_t * mhat / (vhat.sqrt() + e);
                    }
                }
            }
        }
    }

    /// Optimizer state as named tensors (for checkpoints).
    pub fn state_entries(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![(
            "steps".to_string(),
            Tensor::scalar(T::from_f64_lossy(self.steps as f64)),
        )];
        for (i, t) in self.first.iter().enumerate() {
            out.push((format!("m{i}"), t.clone()));
        }
        for (i, t) in self.second.iter().enumerate() {
            out.push((format!("v{i}"), t.clone()));
        }
        out
    }

    pub fn load_state(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<(), Error> {
        let expected = 1 + self.first.len() + self.second.len();
        if entries.len() != expected {
            return Err(Error::Checkpoint(format!(
                "optimizer state: expected {expected} tensors, found {}",
                entries.len()
            )));
        }
        let mut it = entries.into_iter();
        let (_, steps) = it.next().unwrap();
        self.steps = steps.data()[0].to_f64_lossy() as u64;
        for slot in self.first.iter_mut().chain(self.second.iter_mut()) {
            let (name, t) = it.next().unwrap();
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "optimizer state {name}: shape {:?} vs {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(())
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Float>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sq_norm().to_f64_lossy()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s: T = lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
