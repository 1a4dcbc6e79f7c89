use super::Parameterized;
use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of steps taken so far.
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state for tensors with the given lengths.
    pub fn new(lr: f64, shapes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            v: shapes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn for_model<P: Parameterized>(lr: f64, model: &P) -> Self {
        let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
        Self::new(lr, &shapes)
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dim {
                expected: self.m.len(),
                got: params.len().min(grads.len()),
                context: "adam tensor count",
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Dim {
                    expected: self.m[i].len(),
                    got: if p.len() != self.m[i].len() {
                        p.len()
                    } else {
                        g.len()
                    },
                    context: "adam tensor length",
                });
            }
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Step a model given a model-shaped gradient buffer.
    pub fn step_model<P: Parameterized>(&mut self, model: &mut P, grads: &P) -> Result<()> {
        let g = grads.tensors();
        let mut p = model.tensors_mut();
        self.step(&mut p, &g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut state = AdamState::new(0.1, &[1]);
        let mut p = [1.0];
        state.step(&mut [&mut p[..]], &[&[4.0][..]]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-8);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut state = AdamState::new(0.1, &[3]);
        let mut p = vec![1.0, 2.0, 3.0];
        state.step(&mut [&mut p[..]], &[&[0.0; 3][..]]).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut state = AdamState::new(0.01, &[2]);
            let mut p = vec![0.5, -0.5];
            for i in 0..10 {
                let g = [i as f64 * 0.1, -1.0];
                state.step(&mut [&mut p[..]], &[&g[..]]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch() {
        let mut state = AdamState::new(0.1, &[2]);
        let mut p = [1.0];
        assert!(state.step(&mut [&mut p[..]], &[&[1.0][..]]).is_err());
        assert_eq!(state.t, 0);
    }
}
