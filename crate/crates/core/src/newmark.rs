//! Newmark family of time integrators for `M a + K d = f`.
//!
//! The same single-step kernel advances every subdomain inside a subcycle;
//! the coupling module only changes the force it is fed.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{BandCholesky, DenseVector, SparseMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewmarkParams {
    beta: f64,
    gamma: f64,
}

impl NewmarkParams {
    pub const AVERAGE_ACCELERATION: NewmarkParams = NewmarkParams {
        beta: 0.25,
        gamma: 0.5,
    };
    pub const CENTRAL_DIFFERENCE: NewmarkParams = NewmarkParams {
        beta: 0.0,
        gamma: 0.5,
    };
    pub const LINEAR_ACCELERATION: NewmarkParams = NewmarkParams {
        beta: 1.0 / 6.0,
        gamma: 0.5,
    };

    /// Rejects `gamma < 1/2` and `beta < 0`.
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if !beta.is_finite() || !gamma.is_finite() {
            return Err(Error::InvalidNewmark(format!(
                "beta = {beta}, gamma = {gamma} must be finite"
            )));
        }
        if gamma < 0.5 {
            return Err(Error::InvalidNewmark(format!(
                "gamma = {gamma} is below 1/2"
            )));
        }
        if beta < 0.0 {
            return Err(Error::InvalidNewmark(format!("beta = {beta} is negative")));
        }
        Ok(Self { beta, gamma })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `2 beta >= gamma`
    pub fn is_unconditionally_stable(&self) -> bool {
        2.0 * self.beta >= self.gamma
    }
}

impl fmt::Display for NewmarkParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(beta = {}, gamma = {})", self.beta, self.gamma)
    }
}

/// Displacement, velocity and acceleration at one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicState {
    pub d: DenseVector,
    pub v: DenseVector,
    pub a: DenseVector,
}

impl KinematicState {
    pub fn new(d: DenseVector, v: DenseVector, a: DenseVector) -> Result<Self> {
        if v.len() != d.len() || a.len() != d.len() {
            return Err(Error::DimensionMismatch {
                context: "KinematicState",
                expected: d.len(),
                found: if v.len() != d.len() { v.len() } else { a.len() },
            });
        }
        Ok(Self { d, v, a })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            d: vec![0.0; n],
            v: vec![0.0; n],
            a: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let s = |x: &DenseVector| x.iter().map(|v| v * c).collect();
        Self {
            d: s(&self.d),
            v: s(&self.v),
            a: s(&self.a),
        }
    }
}

/// The parts of the update that do not depend on the new acceleration.
pub fn newmark_predict(
    state: &KinematicState,
    params: NewmarkParams,
    dt: f64,
) -> (DenseVector, DenseVector) {
    let cd = 0.5 * dt * dt * (1.0 - 2.0 * params.beta);
    let cv = dt * (1.0 - params.gamma);
    let d_pred = state
        .d
        .iter()
        .zip(&state.v)
        .zip(&state.a)
        .map(|((d, v), a)| d + dt * v + cd * a)
        .collect();
    let v_pred = state
        .v
        .iter()
        .zip(&state.a)
        .map(|(v, a)| v + cv * a)
        .collect();
    (d_pred, v_pred)
}

/// Advances one Newmark step with a cached factorisation of `M + beta dt^2 K`.
#[derive(Clone, Debug)]
pub struct NewmarkStepper {
    stiffness: Arc<SparseMatrix>,
    params: NewmarkParams,
    dt: f64,
    effective: BandCholesky,
}

impl NewmarkStepper {
    pub fn new(
        mass: &SparseMatrix,
        stiffness: Arc<SparseMatrix>,
        params: NewmarkParams,
        dt: f64,
    ) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidSystem(format!("time-step {dt} must be positive")));
        }
        if mass.rows() != stiffness.rows() || mass.cols() != stiffness.cols() {
            return Err(Error::DimensionMismatch {
                context: "NewmarkStepper (mass vs stiffness)",
                expected: mass.rows(),
                found: stiffness.rows(),
            });
        }
        let effective = mass.add_scaled(params.beta * dt * dt, &stiffness);
        let effective = BandCholesky::new(&effective)?;
        Ok(Self {
            stiffness,
            params,
            dt,
            effective,
        })
    }

    pub fn params(&self) -> NewmarkParams {
        self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Solves `M a + K d = f_next` together with the two update identities.
    pub fn step(&self, f_next: &[f64], state: &KinematicState) -> Result<KinematicState> {
        let n = self.effective.dim();
        if f_next.len() != n || state.len() != n {
            return Err(Error::DimensionMismatch {
                context: "Newmark step",
                expected: n,
                found: if f_next.len() != n { f_next.len() } else { state.len() },
            });
        }
        let (d_pred, v_pred) = newmark_predict(state, self.params, self.dt);
        let kd = self.stiffness.matvec(&d_pred);
        let mut a: DenseVector = f_next.iter().zip(&kd).map(|(f, k)| f - k).collect();
        self.effective.solve_in_place(&mut a);
        let bd = self.params.beta * self.dt * self.dt;
        let gd = self.params.gamma * self.dt;
        let d = d_pred.iter().zip(&a).map(|(p, a)| p + bd * a).collect();
        let v = v_pred.iter().zip(&a).map(|(p, a)| p + gd * a).collect();
        Ok(KinematicState { d, v, a })
    }
}

/// One unconstrained Newmark step; factorises on every call.
pub fn newmark_step_unconstrained(
    mass: &SparseMatrix,
    stiffness: &SparseMatrix,
    f_next: &[f64],
    state: &KinematicState,
    params: NewmarkParams,
    dt: f64,
) -> Result<KinematicState> {
    NewmarkStepper::new(mass, Arc::new(stiffness.clone()), params, dt)?.step(f_next, state)
}

/// Largest admissible subdomain time-step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CriticalTimeStep {
    /// `2 beta >= gamma`: any positive step keeps `M + dt^2 (beta - gamma/2) K` definite.
    Unconditional,
    Finite(f64),
}

impl CriticalTimeStep {
    /// Strict inequality `dt < dt_crit`.
    pub fn admits(&self, dt: f64) -> bool {
        match *self {
            CriticalTimeStep::Unconditional => true,
            CriticalTimeStep::Finite(crit) => dt < crit,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            CriticalTimeStep::Unconditional => None,
            CriticalTimeStep::Finite(v) => Some(v),
        }
    }
}

impl fmt::Display for CriticalTimeStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CriticalTimeStep::Unconditional => write!(f, "unconditional"),
            CriticalTimeStep::Finite(v) => write!(f, "{v:e}"),
        }
    }
}

/// `1 / (omega_max sqrt(gamma/2 - beta))`, or unconditional when `2 beta >= gamma`.
pub fn critical_time_step(
    mass: &SparseMatrix,
    stiffness: &SparseMatrix,
    params: NewmarkParams,
) -> Result<CriticalTimeStep> {
    if params.is_unconditionally_stable() {
        return Ok(CriticalTimeStep::Unconditional);
    }
    let omega2 = crate::linalg::max_generalized_eigenvalue(stiffness, mass)?;
    if omega2 <= 0.0 {
        return Ok(CriticalTimeStep::Unconditional);
    }
    Ok(CriticalTimeStep::Finite(
        1.0 / (omega2.sqrt() * (0.5 * params.gamma - params.beta).sqrt()),
    ))
}

/// Solves `M a0 = f(0) - K d0`.
pub fn consistent_initial_acceleration(
    mass: &SparseMatrix,
    stiffness: &SparseMatrix,
    f0: &[f64],
    d0: &[f64],
) -> Result<DenseVector> {
    let chol = BandCholesky::new(mass)?;
    let kd = stiffness.matvec(d0);
    let rhs: DenseVector = f0.iter().zip(&kd).map(|(f, k)| f - k).collect();
    Ok(chol.solve(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;

    fn scalar(x: f64) -> SparseMatrix {
        SparseMatrix::from_dense(&DenseMatrix::from_diag(&[x]))
    }

    fn sv(d: f64, v: f64, a: f64) -> KinematicState {
        KinematicState::new(vec![d], vec![v], vec![a]).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(NewmarkParams::new(0.25, 0.5).is_ok());
        assert!(NewmarkParams::new(0.3025, 0.6).is_ok());
        assert!(NewmarkParams::new(0.25, 0.49).is_err());
        assert!(NewmarkParams::new(-0.1, 0.5).is_err());
        assert!(NewmarkParams::new(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn predict_zero_acceleration() {
        let s = KinematicState::new(vec![1.0, 2.0], vec![0.5, -1.0], vec![0.0, 0.0]).unwrap();
        let (d, v) = newmark_predict(&s, NewmarkParams::AVERAGE_ACCELERATION, 0.1);
        assert_eq!(d, vec![1.05, 1.9]);
        assert_eq!(v, s.v);
    }

    #[test]
    fn predict_examples() {
        let (d, v) = newmark_predict(&sv(0.0, 0.0, 1.0), NewmarkParams::AVERAGE_ACCELERATION, 2.0);
        assert_eq!((d[0], v[0]), (1.0, 1.0));
        let (d, v) = newmark_predict(&sv(0.0, 1.0, 2.0), NewmarkParams::CENTRAL_DIFFERENCE, 1.0);
        assert_eq!((d[0], v[0]), (2.0, 2.0));
    }

    #[test]
    fn static_equilibrium_is_fixed_point() {
        let m = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]));
        let k = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[vec![3.0, -1.0], vec![-1.0, 2.0]]));
        let d0 = vec![0.3, -0.7];
        let f = k.matvec(&d0);
        let s0 = KinematicState::new(d0.clone(), vec![0.0; 2], vec![0.0; 2]).unwrap();
        let s1 = newmark_step_unconstrained(&m, &k, &f, &s0, NewmarkParams::AVERAGE_ACCELERATION, 0.1).unwrap();
        for i in 0..2 {
            assert!((s1.d[i] - d0[i]).abs() < 1e-14);
            assert!(s1.v[i].abs() < 1e-14 && s1.a[i].abs() < 1e-14);
        }
    }

    #[test]
    fn single_step_tracks_cosine() {
        let dt = 0.01;
        let s1 = newmark_step_unconstrained(
            &scalar(1.0),
            &scalar(1.0),
            &[0.0],
            &sv(1.0, 0.0, -1.0),
            NewmarkParams::AVERAGE_ACCELERATION,
            dt,
        )
        .unwrap();
        assert!((s1.d[0] - dt.cos()).abs() < 10.0 * dt.powi(3));
        // equation of motion
        assert!((s1.a[0] + s1.d[0]).abs() < 1e-14);
    }

    #[test]
    fn update_identities_hold() {
        let p = NewmarkParams::new(0.3, 0.6).unwrap();
        let dt = 0.05;
        let s0 = sv(0.2, -0.4, 0.9);
        let s1 = newmark_step_unconstrained(&scalar(2.0), &scalar(7.0), &[0.3], &s0, p, dt).unwrap();
        let rv = s1.v[0] - s0.v[0] - dt * ((1.0 - p.gamma()) * s0.a[0] + p.gamma() * s1.a[0]);
        let rd = s1.d[0]
            - s0.d[0]
            - dt * s0.v[0]
            - 0.5 * dt * dt * ((1.0 - 2.0 * p.beta()) * s0.a[0] + 2.0 * p.beta() * s1.a[0]);
        assert!(rv.abs() < 1e-14 && rd.abs() < 1e-14);
        // jump/average form of the velocity identity
        let jump_a = s1.a[0] - s0.a[0];
        let avg_a = 0.5 * (s1.a[0] + s0.a[0]);
        let lhs = s1.v[0] - s0.v[0];
        let rhs = dt * (avg_a + (p.gamma() - 0.5) * jump_a);
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn average_acceleration_conserves_energy() {
        let m = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]));
        let k = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[vec![40.0, -10.0], vec![-10.0, 10.0]]));
        let stepper = NewmarkStepper::new(&m, Arc::new(k.clone()), NewmarkParams::AVERAGE_ACCELERATION, 0.07).unwrap();
        let d0 = vec![0.1, -0.2];
        let v0 = vec![1.0, 0.5];
        let a0 = consistent_initial_acceleration(&m, &k, &[0.0, 0.0], &d0).unwrap();
        let mut s = KinematicState::new(d0, v0, a0).unwrap();
        let energy = |s: &KinematicState| 0.5 * m.quadratic_form(&s.v) + 0.5 * k.quadratic_form(&s.d);
        let e0 = energy(&s);
        for _ in 0..1000 {
            s = stepper.step(&[0.0, 0.0], &s).unwrap();
        }
        assert!((energy(&s) - e0).abs() <= 1e-12 * e0);
    }

    #[test]
    fn critical_steps() {
        assert_eq!(
            critical_time_step(&scalar(1.0), &scalar(1e4), NewmarkParams::AVERAGE_ACCELERATION).unwrap(),
            CriticalTimeStep::Unconditional
        );
        let c = critical_time_step(&scalar(1.0), &scalar(1e4), NewmarkParams::CENTRAL_DIFFERENCE).unwrap();
        let v = c.value().unwrap();
        assert!((v - 0.02).abs() < 1e-12);
        assert!(c.admits(0.019) && !c.admits(0.02));
        assert!(CriticalTimeStep::Unconditional.admits(1e9));
    }

    #[test]
    fn stepper_rejects_bad_input() {
        assert!(NewmarkStepper::new(&scalar(1.0), Arc::new(scalar(1.0)), NewmarkParams::CENTRAL_DIFFERENCE, 0.0).is_err());
        let st = NewmarkStepper::new(&scalar(1.0), Arc::new(scalar(1.0)), NewmarkParams::CENTRAL_DIFFERENCE, 0.1).unwrap();
        assert!(st.step(&[0.0, 1.0], &sv(0.0, 0.0, 0.0)).is_err());
    }
}
