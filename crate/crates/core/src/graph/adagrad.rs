use super::{GraphError, ParamStore, Result};

/// AdaGrad hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaGrad {
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl Default for AdaGrad {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epsilon: 1e-10,
        }
    }
}

impl AdaGrad {
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        adagrad_step(store, self.learning_rate, self.epsilon)
    }
}

/// One AdaGrad update over every parameter, then clears the gradients.
///
/// `acc += g²; w −= η·g / (√acc + ε)`. Entries with zero gradient are left
/// untouched. A non-finite gradient anywhere aborts the whole step before
/// any parameter changes.
pub fn adagrad_step(store: &mut ParamStore, learning_rate: f64, epsilon: f64) -> Result<()> {
    if let Some(bad) = store
        .params()
        .iter()
        .find(|p| p.grad.iter().any(|g| !g.is_finite()))
    {
        return Err(GraphError::NonFiniteGradient(bad.name.clone()));
    }
    for p in store.params_mut() {
        for k in 0..p.value.len() {
            let g = p.grad[k];
            if g == 0.0 {
                continue;
            }
            if let Some(mask) = &p.trainable {
                if !mask[k] {
                    continue;
                }
            }
            p.accum[k] += g * g;
            p.value[k] -= learning_rate * g / (p.accum[k].sqrt() + epsilon);
        }
        p.grad.iter_mut().for_each(|g| *g = 0.0);
    }
    Ok(())
}
