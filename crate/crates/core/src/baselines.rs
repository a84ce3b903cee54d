//! Single-rate reference integrators on the same decomposed systems.
//!
//! [`BackwardEuler`] integrates the first-order form with the velocity
//! constraint; [`MonolithicNewmark`] solves the stacked Newmark system with
//! the multipliers at the new level. Neither supports subcycling.

use crate::coupling::{CoupledSystem, SystemStepResult};
use crate::error::{Error, Result};
use crate::linalg::{BandCholesky, DenseMatrix, DenseVector, LuFactorization, SparseMatrix};
use crate::newmark::{newmark_predict, KinematicState};

fn require_no_subcycling(sys: &CoupledSystem) -> Result<()> {
    match sys.eta().iter().enumerate().find(|(_, &e)| e != 1) {
        Some((i, &eta)) => Err(Error::SubcyclingUnsupported { subdomain: i, eta }),
        None => Ok(()),
    }
}

/// Interface matrix `sum_i C_i E_i^{-1} C_i^T`.
fn interface_matrix(sys: &CoupledSystem, factors: &[BandCholesky]) -> Result<Option<LuFactorization>> {
    let nc = sys.n_constraints();
    if nc == 0 {
        return Ok(None);
    }
    let mut h = DenseMatrix::zeros(nc, nc);
    for (sub, f) in sys.subdomains().iter().zip(factors) {
        let c = sub.constraint();
        for k in c.active_rows() {
            let mut e = vec![0.0; nc];
            e[k] = 1.0;
            let col = f.solve(&c.apply_transpose(&e));
            let cc = c.apply(&col);
            for r in 0..nc {
                h[(r, k)] += cc[r];
            }
        }
    }
    LuFactorization::new(&h).map(Some).map_err(|_| Error::SingularSaddleSystem)
}

/// Solves the block system `E_i x_i = r_i + C_i^T lam`, `sum_i C_i x_i = 0`.
fn constrained_solve(
    sys: &CoupledSystem,
    factors: &[BandCholesky],
    schur: Option<&LuFactorization>,
    rhs: Vec<DenseVector>,
) -> Result<(Vec<DenseVector>, DenseVector)> {
    let nc = sys.n_constraints();
    let mut free: Vec<DenseVector> = factors.iter().zip(rhs).map(|(f, r)| f.solve(&r)).collect();
    let lam = match schur {
        None => vec![0.0; nc],
        Some(lu) => {
            let mut g = vec![0.0; nc];
            for (sub, x) in sys.subdomains().iter().zip(&free) {
                sub.constraint().apply_add(x, &mut g);
            }
            let neg: DenseVector = g.iter().map(|x| -x).collect();
            lu.solve(&neg)?
        }
    };
    for ((sub, f), x) in sys.subdomains().iter().zip(factors).zip(free.iter_mut()) {
        if sub.constraint().is_zero() {
            continue;
        }
        let corr = f.solve(&sub.constraint().apply_transpose(&lam));
        x.iter_mut().zip(&corr).for_each(|(a, b)| *a += b);
    }
    Ok((free, lam))
}

/// Backward Euler on `M v' + K d = f + C^T lam`, `d' = v`, `sum C v = 0`.
#[derive(Debug)]
pub struct BackwardEuler {
    dt: f64,
    factors: Vec<BandCholesky>,
    schur: Option<LuFactorization>,
}

impl BackwardEuler {
    pub fn new(sys: &CoupledSystem) -> Result<Self> {
        require_no_subcycling(sys)?;
        let dt = sys.dt();
        let factors = sys
            .subdomains()
            .iter()
            .map(|sub| {
                // dt times M / dt + dt K
                let e: SparseMatrix = sub.mass().add_scaled(dt * dt, sub.stiffness());
                BandCholesky::new(&e)
            })
            .collect::<Result<Vec<_>>>()?;
        let schur = interface_matrix(sys, &factors)?;
        Ok(Self { dt, factors, schur })
    }

    pub fn step(&self, sys: &CoupledSystem) -> Result<SystemStepResult> {
        require_no_subcycling(sys)?;
        let dt = self.dt;
        let rhs = sys
            .subdomains()
            .iter()
            .zip(sys.states())
            .enumerate()
            .map(|(i, (sub, s))| {
                // (M + dt^2 K) v1 = dt f1 + M v0 - dt K d0 + dt C^T lam
                let n = sub.dofs();
                let f = sub.force().eval(sys.sublevel_time(i, 1), n);
                let mv = sub.mass().matvec(&s.v);
                let kd = sub.stiffness().matvec(&s.d);
                (0..n).map(|k| dt * f[k] + mv[k] - dt * kd[k]).collect()
            })
            .collect();
        let (vs, lam_scaled) = constrained_solve(sys, &self.factors, self.schur.as_ref(), rhs)?;
        let lambda_next = lam_scaled.iter().map(|x| x / dt).collect();
        let new_states = vs
            .into_iter()
            .zip(sys.states())
            .map(|(v, s)| {
                let d = s.d.iter().zip(&v).map(|(d, v)| d + dt * v).collect();
                let a = v.iter().zip(&s.v).map(|(v1, v0)| (v1 - v0) / dt).collect();
                vec![KinematicState { d, v, a }]
            })
            .collect();
        Ok(SystemStepResult {
            new_states,
            lambda_next,
        })
    }
}

/// One backward Euler step of `sys`; refactorises on every call.
pub fn backward_euler_step(sys: &CoupledSystem) -> Result<SystemStepResult> {
    BackwardEuler::new(sys)?.step(sys)
}

/// Energy change predicted for a backward Euler step without external force:
/// `-sum_i (T_i([v]) + V_i([d]))`.
pub fn backward_euler_dissipation(step: &SystemStepResult, sys: &CoupledSystem) -> f64 {
    sys.subdomains()
        .iter()
        .zip(sys.states())
        .enumerate()
        .map(|(i, (sub, s0))| {
            let s1 = step.final_state(i);
            let dv: DenseVector = s1.v.iter().zip(&s0.v).map(|(a, b)| a - b).collect();
            let dd: DenseVector = s1.d.iter().zip(&s0.d).map(|(a, b)| a - b).collect();
            -0.5 * sub.mass().quadratic_form(&dv) - 0.5 * sub.stiffness().quadratic_form(&dd)
        })
        .sum()
}

/// Interface and external work of a backward Euler step:
/// `sum_i (f_i^{n+1} + C_i^T lam^{n+1})^T [d_i]`.
pub fn backward_euler_work(step: &SystemStepResult, sys: &CoupledSystem) -> (f64, f64) {
    let mut wi = 0.0;
    let mut we = 0.0;
    for (i, (sub, s0)) in sys.subdomains().iter().zip(sys.states()).enumerate() {
        let s1 = step.final_state(i);
        let dd: DenseVector = s1.d.iter().zip(&s0.d).map(|(a, b)| a - b).collect();
        let cl = sub.constraint().apply_transpose(&step.lambda_next);
        wi += cl.iter().zip(&dd).map(|(a, b)| a * b).sum::<f64>();
        if !sub.force().is_zero() {
            let f = sub.force().eval(sys.sublevel_time(i, 1), sub.dofs());
            we += f.iter().zip(&dd).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    (wi, we)
}

/// Newmark on the stacked system with `lam` taken at the new level and the
/// velocity constraint enforced at every step, each subdomain with its own
/// `(beta, gamma)` and the system time-step.
#[derive(Debug)]
pub struct MonolithicNewmark {
    dt: f64,
    factors: Vec<BandCholesky>,
    schur: Option<LuFactorization>,
}

impl MonolithicNewmark {
    pub fn new(sys: &CoupledSystem) -> Result<Self> {
        require_no_subcycling(sys)?;
        let dt = sys.dt();
        let gammas: Vec<f64> = sys.subdomains().iter().map(|s| s.params().gamma()).collect();
        let factors = sys
            .subdomains()
            .iter()
            .map(|sub| {
                let e = sub.mass().add_scaled(sub.params().beta() * dt * dt, sub.stiffness());
                BandCholesky::new(&e)
            })
            .collect::<Result<Vec<_>>>()?;
        let nc = sys.n_constraints();
        let schur = if nc == 0 {
            None
        } else {
            let mut h = DenseMatrix::zeros(nc, nc);
            for ((sub, f), g) in sys.subdomains().iter().zip(&factors).zip(&gammas) {
                let c = sub.constraint();
                for k in c.active_rows() {
                    let mut e = vec![0.0; nc];
                    e[k] = 1.0;
                    let cc = c.apply(&f.solve(&c.apply_transpose(&e)));
                    for r in 0..nc {
                        h[(r, k)] += g * dt * cc[r];
                    }
                }
            }
            Some(LuFactorization::new(&h).map_err(|_| Error::SingularSaddleSystem)?)
        };
        Ok(Self { dt, factors, schur })
    }

    pub fn step(&self, sys: &CoupledSystem) -> Result<SystemStepResult> {
        require_no_subcycling(sys)?;
        let dt = self.dt;
        let nc = sys.n_constraints();
        let mut preds = Vec::with_capacity(sys.num_subdomains());
        let mut free = Vec::with_capacity(sys.num_subdomains());
        let mut g = vec![0.0; nc];
        for (i, (sub, s)) in sys.subdomains().iter().zip(sys.states()).enumerate() {
            let (dp, vp) = newmark_predict(s, sub.params(), dt);
            let f = sub.force().eval(sys.sublevel_time(i, 1), sub.dofs());
            let kd = sub.stiffness().matvec(&dp);
            let r: DenseVector = f.iter().zip(&kd).map(|(a, b)| a - b).collect();
            let a = self.factors[i].solve(&r);
            let gdt = sub.params().gamma() * dt;
            let v: DenseVector = vp.iter().zip(&a).map(|(v, a)| v + gdt * a).collect();
            sub.constraint().apply_add(&v, &mut g);
            preds.push((dp, vp));
            free.push(a);
        }
        let lam = match &self.schur {
            None => vec![0.0; nc],
            Some(lu) => lu.solve(&g.iter().map(|x| -x).collect::<DenseVector>())?,
        };
        let mut new_states = Vec::with_capacity(sys.num_subdomains());
        for (i, (sub, ((dp, vp), mut a))) in sys.subdomains().iter().zip(preds.into_iter().zip(free)).enumerate() {
            if !sub.constraint().is_zero() {
                let corr = self.factors[i].solve(&sub.constraint().apply_transpose(&lam));
                a.iter_mut().zip(&corr).for_each(|(x, y)| *x += y);
            }
            let (beta, gamma) = (sub.params().beta(), sub.params().gamma());
            let d = dp.iter().zip(&a).map(|(d, a)| d + beta * dt * dt * a).collect();
            let v = vp.iter().zip(&a).map(|(v, a)| v + gamma * dt * a).collect();
            new_states.push(vec![KinematicState { d, v, a }]);
        }
        Ok(SystemStepResult {
            new_states,
            lambda_next: lam,
        })
    }
}
