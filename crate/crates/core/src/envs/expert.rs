use nalgebra::DMatrix;

use super::{dynamics, goal_state, lqr, EnvKind, EnvSpec};
use crate::error::{check_dim, Result};

const POINT_KP: f64 = 4.0;
const POINT_KD: f64 = 3.0;
const LINEARIZE_STEP: f64 = 1e-6;

/// Scripted near-optimal controller for one environment.
#[derive(Debug, Clone)]
pub struct Expert {
    spec: EnvSpec,
    gain: Option<DMatrix<f64>>,
}

impl Expert {
    pub fn new(kind: EnvKind) -> Result<Self> {
        let spec = kind.spec();
        let gain = match kind {
            EnvKind::PointReach2d => None,
            EnvKind::DoubleIntegrator1d => {
                let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0]));
                let r = DMatrix::from_element(1, 1, 0.01);
                Some(lqr_gain(&spec, &q, &r)?)
            }
            EnvKind::CartpoleBalance => {
                let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                    1.0, 1.0, 10.0, 1.0,
                ]));
                let r = DMatrix::from_element(1, 1, 0.1);
                Some(lqr_gain(&spec, &q, &r)?)
            }
        };
        Ok(Self { spec, gain })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// LQR gain for the linear-feedback experts.
    pub fn gain(&self) -> Option<&DMatrix<f64>> {
        self.gain.as_ref()
    }

    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.spec.state_dim, state.len())?;
        let goal = goal_state(&self.spec, state);
        let raw = match &self.gain {
            Some(k) => {
                let err: Vec<f64> = state.iter().zip(&goal).map(|(s, g)| s - g).collect();
                (0..k.nrows())
                    .map(|i| -(0..k.ncols()).map(|j| k[(i, j)] * err[j]).sum::<f64>())
                    .collect::<Vec<_>>()
            }
            None => (0..2)
                .map(|i| -POINT_KP * (state[i] - goal[i]) - POINT_KD * state[2 + i])
                .collect(),
        };
        Ok(self.spec.clip_action(&raw))
    }
}

/// Central-difference linearization of the discrete-time dynamics at the goal.
pub(crate) fn linearize(spec: &EnvSpec) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = spec.state_dim;
    let m = spec.action_dim;
    let x0 = vec![0.0; n];
    let u0 = vec![0.0; m];
    let h = LINEARIZE_STEP;
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let (mut xp, mut xm) = (x0.clone(), x0.clone());
        xp[j] += h;
        xm[j] -= h;
        let fp = dynamics(spec, &xp, &u0).0;
        let fm = dynamics(spec, &xm, &u0).0;
        for i in 0..n {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let mut b = DMatrix::zeros(n, m);
    for j in 0..m {
        let (mut up, mut um) = (u0.clone(), u0.clone());
        up[j] += h;
        um[j] -= h;
        let fp = dynamics(spec, &x0, &up).0;
        let fm = dynamics(spec, &x0, &um).0;
        for i in 0..n {
            b[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    (a, b)
}

fn lqr_gain(spec: &EnvSpec, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (a, b) = linearize(spec);
    Ok(lqr::solve(&a, &b, q, r)?.gain)
}
