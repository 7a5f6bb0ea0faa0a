use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::graph::ParamStore;
use crate::numerics::tensor::Tensor;

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update in place with learning rate `lr`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} params vs {} grads", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::shape("adam_step", "parameter set changed between steps"));
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Updates every parameter of `store` from its accumulated gradient.
    pub fn step_store(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        let grads: Vec<Tensor> = store.iter().map(|p| p.grad.clone()).collect();
        let mut values: Vec<Tensor> = store.iter_mut().map(|p| std::mem::replace(&mut p.value, Tensor::zeros(&[0]))).collect();
        let res = self.step(&mut values, &grads, lr);
        for (p, v) in store.iter_mut().zip(values) {
            p.value = v;
        }
        res
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

/// One-cycle learning-rate policy with cosine warm-up and cosine annealing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycleSchedule {
    pub max_lr: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub start_div: f64,
    pub final_div: f64,
}

impl OneCycleSchedule {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        OneCycleSchedule {
            max_lr,
            total_steps,
            warmup_fraction: 0.3,
            start_div: 25.0,
            final_div: 1e4,
        }
    }

    pub fn peak_step(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).round() as usize
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        if step >= self.total_steps {
            return Err(Error::invalid(format!(
                "schedule step {step} outside [0, {})",
                self.total_steps
            )));
        }
        let peak = self.peak_step().min(self.total_steps - 1);
        let last = self.total_steps - 1;
        let cos_interp = |from: f64, to: f64, frac: f64| to + (from - to) * 0.5 * (1.0 + (PI * frac).cos());
        if step < peak {
            let lo = self.max_lr / self.start_div;
            return Ok(cos_interp(lo, self.max_lr, step as f64 / peak as f64));
        }
        if step == peak || last == peak {
            return Ok(self.max_lr);
        }
        let hi = self.max_lr / self.final_div;
        Ok(cos_interp(
            self.max_lr,
            hi,
            (step - peak) as f64 / (last - peak) as f64,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = AdamState::new();
        let mut p = vec![Tensor::from_vec(vec![1.0, -2.0])];
        st.step(&mut p, &[Tensor::zeros(&[2])], 0.1).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut st = AdamState::new();
        let mut p = vec![Tensor::scalar(0.5)];
        st.step(&mut p, &[Tensor::scalar(1.0)], 0.1).unwrap();
        // bias-corrected moments are g and g^2, so the step is lr * g / (|g| + eps)
        let expected = 0.5 - 0.1 / (1.0 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_displacement_approaches_lr() {
        // simulated oracle: with a constant gradient both corrected moments are
        // exact (m_hat = g, v_hat = g^2), so every step is lr * |g| / (|g| + eps)
        let mut st = AdamState::new();
        let mut p = vec![Tensor::scalar(0.0)];
        let lr = 1e-3;
        let mut prev = 0.0;
        for i in 0..1000 {
            st.step(&mut p, &[Tensor::scalar(0.37)], lr).unwrap();
            let step = prev - p[0].item();
            prev = p[0].item();
            if i > 10 {
                assert!((step - lr).abs() < 1e-9, "step {i}: {step}");
            }
        }
        assert_eq!(st.step, 1000);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut st = AdamState::new();
        let mut p = vec![Tensor::zeros(&[2])];
        assert!(st.step(&mut p, &[Tensor::zeros(&[3])], 0.1).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let s = OneCycleSchedule::new(1e-3, 100);
        assert!((s.lr(0).unwrap() - 1e-3 / 25.0).abs() < 1e-18);
        assert_eq!(s.lr(30).unwrap(), 1e-3);
        assert!((s.lr(99).unwrap() - 1e-3 / 1e4).abs() < 1e-18);
        assert!(s.lr(100).is_err());
    }

    #[test]
    fn schedule_is_positive_and_peaks_once() {
        for total in [1usize, 2, 3, 7, 50, 481] {
            let s = OneCycleSchedule::new(1e-3, total);
            let lrs: Vec<f64> = (0..total).map(|i| s.lr(i).unwrap()).collect();
            assert!(lrs.iter().all(|&v| v > 0.0));
            let max = lrs.iter().cloned().fold(0.0, f64::max);
            assert_eq!(max, 1e-3);
            assert_eq!(lrs[s.peak_step().min(total - 1)], 1e-3);
        }
    }
}
