use super::params::ParamStore;
use super::AutodiffError;

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update from the gradients currently held by `params`.
    /// Every registered parameter must carry a gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<(), AutodiffError> {
        if params.len() != self.m.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.m) {
            match &p.grad {
                None => return Err(AutodiffError::MissingGradient(p.name.clone())),
                Some(g) if g.len() != m.len() || p.value.len() != m.len() => {
                    return Err(AutodiffError::ShapeMismatch(format!("optimizer buffer for {}", p.name)));
                }
                Some(_) => {}
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.as_ref().expect("checked above");
            for (((theta, mi), vi), gi) in p.value.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *theta -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
