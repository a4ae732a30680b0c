//! First-order swing-equation model of coupled oscillators.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::netparams::NetworkParameters;

/// Phase angles and frequency deviations of every oscillator.
#[derive(Debug, Clone, PartialEq)]
pub struct SwingState {
    pub delta: DVector<f64>,
    pub omega: DVector<f64>,
}

impl SwingState {
    pub fn new(delta: DVector<f64>, omega: DVector<f64>) -> Result<Self> {
        if delta.len() != omega.len() {
            return Err(Error::dims(format!(
                "delta has length {} but omega has length {}",
                delta.len(),
                omega.len()
            )));
        }
        Ok(SwingState { delta, omega })
    }

    pub fn zeros(n_o: usize) -> Self {
        SwingState {
            delta: DVector::zeros(n_o),
            omega: DVector::zeros(n_o),
        }
    }

    /// Stacks the state as `[delta; omega]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.delta.len();
        DVector::from_fn(2 * n, |i, _| {
            if i < n {
                self.delta[i]
            } else {
                self.omega[i - n]
            }
        })
    }

    pub fn from_vector(x: &DVector<f64>) -> Result<Self> {
        if !x.len().is_multiple_of(2) {
            return Err(Error::dims("stacked swing state must have even length"));
        }
        let n = x.len() / 2;
        Ok(SwingState {
            delta: x.rows(0, n).into_owned(),
            omega: x.rows(n, n).into_owned(),
        })
    }
}

/// `f_i = -sum_{j != i} K_ij sin(delta_i - delta_j - gamma_ij)`.
pub fn coupling_term(params: &NetworkParameters, delta: &DVector<f64>) -> Result<DVector<f64>> {
    let n = params.n_o();
    if delta.len() != n {
        return Err(Error::dims(format!(
            "delta has length {} but the network has {n} oscillators",
            delta.len()
        )));
    }
    let mut out = DVector::zeros(n);
    coupling_into(params, delta.as_slice(), out.as_mut_slice());
    Ok(out)
}

pub(crate) fn coupling_into(params: &NetworkParameters, delta: &[f64], out: &mut [f64]) {
    let n = params.n_o();
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            let kij = params.k[(i, j)];
            if j != i && kij != 0.0 {
                acc -= kij * (delta[i] - delta[j] - params.gamma[(i, j)]).sin();
            }
        }
        out[i] = acc;
    }
}

/// Time derivative of the swing state with unit drive.
pub fn swing_rhs(params: &NetworkParameters, state: &SwingState) -> Result<SwingState> {
    swing_rhs_scaled(params, state, 1.0)
}

/// Time derivative with the constant drive `F` scaled by `drive`.
pub fn swing_rhs_scaled(
    params: &NetworkParameters,
    state: &SwingState,
    drive: f64,
) -> Result<SwingState> {
    let n = params.n_o();
    if state.omega.len() != n {
        return Err(Error::dims(format!(
            "omega has length {} but the network has {n} oscillators",
            state.omega.len()
        )));
    }
    let f = coupling_term(params, &state.delta)?;
    let omega_dot = DVector::from_fn(n, |i, _| {
        let two_j = 2.0 * params.j[i];
        -params.d[i] / two_j * state.omega[i]
            + params.omega_r / two_j * (drive * params.f[i] + f[i])
    });
    Ok(SwingState {
        delta: state.omega.clone(),
        omega: omega_dot,
    })
}

/// Original nonlinear model as an ODE in the stacked state `[delta; omega]`.
#[derive(Debug, Clone)]
pub struct SwingModel<'a> {
    pub params: &'a NetworkParameters,
    pub drive: f64,
}

impl SwingModel<'_> {
    pub fn dim(&self) -> usize {
        2 * self.params.n_o()
    }

    pub(crate) fn rhs_into(&self, x: &[f64], out: &mut [f64]) {
        let p = self.params;
        let n = p.n_o();
        let (delta, omega) = x.split_at(n);
        let (d_delta, d_omega) = out.split_at_mut(n);
        d_delta.copy_from_slice(omega);
        coupling_into(p, delta, d_omega);
        for i in 0..n {
            let two_j = 2.0 * p.j[i];
            d_omega[i] =
                -p.d[i] / two_j * omega[i] + p.omega_r / two_j * (self.drive * p.f[i] + d_omega[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netparams::synth_grid;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_node() -> NetworkParameters {
        let k = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        NetworkParameters::new(
            1.0,
            vec![1.0, 1.0],
            vec![0.5, 0.5],
            vec![0.0, 0.0],
            k,
            DMatrix::zeros(2, 2),
        )
        .unwrap()
    }

    #[test]
    fn single_oscillator_has_no_coupling() {
        let p = synth_grid(1, 3, 1.0).unwrap();
        let f = coupling_term(&p, &DVector::from_element(1, 0.7)).unwrap();
        assert_eq!(f[0], 0.0);
    }

    #[test]
    fn equal_angles_cancel() {
        let p = two_node();
        let f = coupling_term(&p, &DVector::from_element(2, 1.3)).unwrap();
        assert_eq!(f, DVector::zeros(2));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let p = two_node();
        assert!(matches!(
            coupling_term(&p, &DVector::zeros(3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn coupling_matches_scalar_loop() {
        let p = synth_grid(4, 11, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let delta = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
        let f = coupling_term(&p, &delta).unwrap();
        for i in 0..4 {
            let mut expect = 0.0;
            for j in 0..4 {
                if j != i {
                    expect += -p.k[(i, j)] * (delta[i] - delta[j] - p.gamma[(i, j)]).sin();
                }
            }
            assert!((f[i] - expect).abs() <= 1e-14);
        }
    }

    #[test]
    fn rest_state_is_equilibrium_without_drive() {
        let p = two_node();
        let d = swing_rhs(&p, &SwingState::zeros(2)).unwrap();
        assert_eq!(d.delta, DVector::zeros(2));
        assert_eq!(d.omega, DVector::zeros(2));
    }

    #[test]
    fn uncoupled_frequencies_decay() {
        let p = NetworkParameters::new(
            10.0,
            vec![1.0, 2.0],
            vec![0.4, 0.6],
            vec![0.0, 0.0],
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let s = SwingState::new(
            DVector::from_vec(vec![0.3, -1.0]),
            DVector::from_vec(vec![2.0, -1.0]),
        )
        .unwrap();
        let d = swing_rhs(&p, &s).unwrap();
        assert_eq!(d.omega[0], -0.4 / 2.0 * 2.0);
        assert_eq!(d.omega[1], -(-0.6 / 4.0));
    }

    #[test]
    fn rhs_matches_componentwise_formula() {
        let p = synth_grid(6, 21, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = SwingState::new(
            DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)),
            DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)),
        )
        .unwrap();
        let d = swing_rhs(&p, &s).unwrap();
        let mut stacked = vec![0.0; 12];
        SwingModel {
            params: &p,
            drive: 1.0,
        }
        .rhs_into(s.to_vector().as_slice(), &mut stacked);
        for i in 0..6 {
            let mut fi = 0.0;
            for j in 0..6 {
                if j != i {
                    fi -= p.k[(i, j)] * (s.delta[i] - s.delta[j] - p.gamma[(i, j)]).sin();
                }
            }
            let expect = -p.d[i] / (2.0 * p.j[i]) * s.omega[i]
                + p.omega_r / (2.0 * p.j[i]) * p.f[i]
                + p.omega_r / (2.0 * p.j[i]) * fi;
            assert!((d.omega[i] - expect).abs() <= 1e-14 * expect.abs().max(1.0));
            assert_eq!(d.delta[i], s.omega[i]);
            assert!((stacked[6 + i] - d.omega[i]).abs() <= 1e-14 * expect.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn rhs_invariant_under_uniform_angle_shift(seed in 0u64..500, c in -10.0f64..10.0) {
            let p = synth_grid(5, seed, 0.6).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let delta = DVector::from_fn(5, |_, _| rng.random_range(-2.0..2.0));
            let omega = DVector::from_fn(5, |_, _| rng.random_range(-2.0..2.0));
            let a = swing_rhs(&p, &SwingState::new(delta.clone(), omega.clone()).unwrap()).unwrap();
            let shifted = delta.add_scalar(c);
            let b = swing_rhs(&p, &SwingState::new(shifted, omega).unwrap()).unwrap();
            for i in 0..5 {
                prop_assert!((a.omega[i] - b.omega[i]).abs() <= 1e-10 * a.omega[i].abs().max(1.0));
            }
        }

        #[test]
        fn coupling_is_bounded(seed in 0u64..500) {
            let p = synth_grid(7, seed, 0.5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let delta = DVector::from_fn(7, |_, _| rng.random_range(-6.0..6.0));
            let f = coupling_term(&p, &delta).unwrap();
            for i in 0..7 {
                let bound: f64 = (0..7).filter(|&j| j != i).map(|j| p.k[(i, j)].abs()).sum();
                prop_assert!(f[i].abs() <= bound + 1e-15);
            }
        }
    }
}
