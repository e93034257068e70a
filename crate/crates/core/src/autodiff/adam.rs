//! Adam optimizer with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::Tensor;

/// Per-tensor Adam state. One `AdamState` drives one parameter set; its
/// moment buffers are keyed by position, so the tensor order passed to
/// [`AdamState::step`] must never change across calls.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Update count; bias correction uses `t + 1` on the step being applied.
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState { lr, beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Settings for the image translator: low first-moment decay stabilizes
    /// the adversarial game.
    pub fn translator(lr: f64) -> Self {
        Self::new(lr, 0.5, 0.999, 1e-8)
    }

    /// Settings for the segmentation network.
    pub fn segnet(lr: f64) -> Self {
        Self::new(lr, 0.9, 0.999, 1e-8)
    }

    /// Applies one update to every tensor from its own `grad` buffer, then
    /// clears the buffers. Diverged (non-finite) gradients are an error.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        if self.m.len() != params.len() {
            return Err(Error::Internal(format!(
                "adam state holds {} tensors, step got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            if p.numel() != self.m[i].len() {
                return Err(Error::Internal("adam tensor order changed between steps".into()));
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    iteration: self.t,
                    details: "non-finite gradient".into(),
                });
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.values.len() {
                let g = p.grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.values[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

impl AdamState {
    /// Serializes the moment buffers and step count as named tensors for the
    /// checkpoint container.
    pub fn export(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.t"), crate::checkpoint::scalar_entry(self.t as f64)));
        for (i, m) in self.m.iter().enumerate() {
            out.push((
                format!("{prefix}.m{i}"),
                Tensor::from_values(&[m.len()], m.clone()).expect("moment extents"),
            ));
        }
        for (i, v) in self.v.iter().enumerate() {
            out.push((
                format!("{prefix}.v{i}"),
                Tensor::from_values(&[v.len()], v.clone()).expect("moment extents"),
            ));
        }
    }

    /// Restores state written by [`AdamState::export`]. `param_count` must
    /// match the tensor count the state was built over.
    pub fn import(
        &mut self,
        prefix: &str,
        entries: &[(String, Tensor)],
        param_count: usize,
    ) -> Result<()> {
        let missing =
            |what: &str| Error::Parse { path: prefix.into(), reason: format!("missing {what}") };
        self.t = crate::checkpoint::find_scalar(entries, &format!("{prefix}.t"))
            .ok_or_else(|| missing("step count"))? as u64;
        self.m.clear();
        self.v.clear();
        // Moment buffers are allocated lazily on the first step, so a state
        // exported at t = 0 legitimately has none.
        if self.t == 0 {
            return Ok(());
        }
        for i in 0..param_count {
            let m = crate::checkpoint::find(entries, &format!("{prefix}.m{i}"))
                .ok_or_else(|| missing("first moment"))?;
            let v = crate::checkpoint::find(entries, &format!("{prefix}.v{i}"))
                .ok_or_else(|| missing("second moment"))?;
            self.m.push(m.values.clone());
            self.v.push(v.values.clone());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fresh_state_survives_an_export_import_round_trip() {
        let src = AdamState::translator(3e-4);
        let mut entries = Vec::new();
        src.export("opt", &mut entries);

        let mut dst = AdamState::new(0.0, 0.0, 0.0, 0.0);
        dst.import("opt", &entries, 5).unwrap();
        assert_eq!(dst.t, 0);

        // The restored state still steps: buffers re-allocate lazily.
        let mut w = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        w.grad = vec![0.5, -0.5];
        dst.lr = 3e-4;
        dst.beta1 = 0.5;
        dst.beta2 = 0.999;
        dst.eps = 1e-8;
        dst.step(&mut [&mut w]).unwrap();
        assert_eq!(dst.t, 1);
        assert!(w.values[0] < 1.0 && w.values[1] > 2.0);
    }

    #[test]
    fn zero_gradient_leaves_fresh_state_unchanged() {
        let mut w = Tensor::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = w.values.clone();
        let mut adam = AdamState::segnet(1e-3);
        adam.step(&mut [&mut w]).unwrap();
        assert_eq!(w.values, before);
    }

    #[test]
    fn first_step_moves_weight_by_roughly_lr() {
        // w=1, g=2, lr=1e-3: bias-corrected m_hat=g, v_hat=g^2, so the update
        // is lr * g/(|g|+eps) = lr to within eps.
        let mut w = Tensor::param(&[1], vec![1.0]).unwrap();
        w.grad[0] = 2.0;
        let mut adam = AdamState::segnet(1e-3);
        adam.step(&mut [&mut w]).unwrap();
        assert_relative_eq!(w.values[0], 0.999, epsilon = 1e-6);
        assert_eq!(w.grad[0], 0.0, "step consumes the gradient");
    }

    #[test]
    fn quadratic_converges() {
        // Minimize (w-2)^2 from w=10.
        let mut w = Tensor::param(&[1], vec![10.0]).unwrap();
        let mut adam = AdamState::new(0.1, 0.9, 0.999, 1e-8);
        for _ in 0..500 {
            w.grad[0] = 2.0 * (w.values[0] - 2.0);
            adam.step(&mut [&mut w]).unwrap();
        }
        assert!((w.values[0] - 2.0).abs() < 0.1, "ended at {}", w.values[0]);
    }

    #[test]
    fn non_finite_gradient_is_a_divergence_error() {
        let mut w = Tensor::param(&[1], vec![1.0]).unwrap();
        w.grad[0] = f64::NAN;
        let mut adam = AdamState::translator(2e-4);
        assert!(adam.step(&mut [&mut w]).is_err());
    }
}
