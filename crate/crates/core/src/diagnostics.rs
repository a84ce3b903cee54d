//! Energy bookkeeping, interface drifts and the subcycling indicator.
//!
//! Step-level quantities take the system *before* the step is committed
//! together with the [`SystemStepResult`] it produced.

use crate::coupling::{interpolate_lambda, CoupledSystem, SystemStepResult};
use crate::error::{Error, Result};
use crate::linalg::{norm_inf, DenseVector};
use crate::newmark::{KinematicState, NewmarkParams};

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyBreakdown {
    pub kinetic: Vec<f64>,
    pub potential: Vec<f64>,
    pub total: f64,
    pub e_algorithm: Option<f64>,
    pub e_interface: Option<f64>,
}

impl EnergyBreakdown {
    pub fn kinetic_total(&self) -> f64 {
        self.kinetic.iter().sum()
    }

    pub fn potential_total(&self) -> f64 {
        self.potential.iter().sum()
    }
}

/// Kinetic and potential energy of every subdomain at the current level.
pub fn total_energy(sys: &CoupledSystem) -> EnergyBreakdown {
    let mut kinetic = Vec::with_capacity(sys.num_subdomains());
    let mut potential = Vec::with_capacity(sys.num_subdomains());
    for (sub, s) in sys.subdomains().iter().zip(sys.states()) {
        kinetic.push(0.5 * sub.mass().quadratic_form(&s.v));
        potential.push(0.5 * sub.stiffness().quadratic_form(&s.d));
    }
    let total = kinetic.iter().chain(&potential).sum();
    EnergyBreakdown {
        kinetic,
        potential,
        total,
        e_algorithm: None,
        e_interface: None,
    }
}

fn check_step(step: &SystemStepResult, sys: &CoupledSystem) -> Result<()> {
    if step.new_states.len() != sys.num_subdomains() {
        return Err(Error::DimensionMismatch {
            context: "step result subdomains",
            expected: sys.num_subdomains(),
            found: step.new_states.len(),
        });
    }
    for (i, (h, &eta)) in step.new_states.iter().zip(sys.eta()).enumerate() {
        if h.len() != eta {
            return Err(Error::InvalidSystem(format!(
                "subdomain {i}: history has {} entries, expected {eta}",
                h.len()
            )));
        }
    }
    Ok(())
}

/// Sub-level states `0..=eta` of subdomain `i` (start state first).
fn levels<'a>(
    step: &'a SystemStepResult,
    sys: &'a CoupledSystem,
    i: usize,
) -> impl Iterator<Item = &'a KinematicState> {
    std::iter::once(&sys.states()[i]).chain(step.new_states[i].iter())
}

fn diff(a: &[f64], b: &[f64]) -> DenseVector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Energy added or removed by the time-stepping schemes over one system step.
pub fn energy_algorithm(step: &SystemStepResult, sys: &CoupledSystem) -> Result<f64> {
    check_step(step, sys)?;
    let dt = sys.dt();
    let mut e = 0.0;
    for (i, sub) in sys.subdomains().iter().enumerate() {
        let eta = sys.eta()[i] as f64;
        let (beta, gamma) = (sub.params().beta(), sub.params().gamma());
        let m = sub.mass();
        let k = sub.stiffness();
        let c = dt * dt / (eta * eta) * (beta - gamma / 2.0);
        let lv: Vec<&KinematicState> = levels(step, sys, i).collect();
        let mut pot_jumps = 0.0;
        let mut acc_jumps = 0.0;
        for w in lv.windows(2) {
            pot_jumps += 0.5 * k.quadratic_form(&diff(&w[1].d, &w[0].d));
            acc_jumps += 0.5 * m.quadratic_form(&diff(&w[1].a, &w[0].a));
        }
        let first = lv.first().expect("start state");
        let last = lv.last().expect("end state");
        let t_jump = 0.5 * m.quadratic_form(&last.a) - 0.5 * m.quadratic_form(&first.a);
        e += -2.0 * (gamma - 0.5) * pot_jumps - c * t_jump - c * (2.0 * gamma - 1.0) * acc_jumps;
    }
    Ok(e)
}

/// Closed form for the case without subcycling:
/// `-2 sum (g - 1/2) V([d]) - dt^2 sum g (2b - g) T([a])`.
///
/// It coincides with [`energy_algorithm`] only when the start acceleration
/// vanishes; kept for comparison.
pub fn energy_algorithm_no_subcycling(step: &SystemStepResult, sys: &CoupledSystem) -> Result<f64> {
    check_step(step, sys)?;
    if let Some((i, &eta)) = sys.eta().iter().enumerate().find(|(_, &e)| e != 1) {
        return Err(Error::SubcyclingUnsupported { subdomain: i, eta });
    }
    let dt = sys.dt();
    let mut e = 0.0;
    for (i, sub) in sys.subdomains().iter().enumerate() {
        let (beta, gamma) = (sub.params().beta(), sub.params().gamma());
        let s0 = &sys.states()[i];
        let s1 = step.final_state(i);
        let dd = diff(&s1.d, &s0.d);
        let da = diff(&s1.a, &s0.a);
        e += -2.0 * (gamma - 0.5) * 0.5 * sub.stiffness().quadratic_form(&dd)
            - dt * dt * gamma * (2.0 * beta - gamma) * 0.5 * sub.mass().quadratic_form(&da);
    }
    Ok(e)
}

/// Net work of the interface forces over one system step.
pub fn energy_interface(step: &SystemStepResult, sys: &CoupledSystem) -> Result<f64> {
    check_step(step, sys)?;
    let mut e = 0.0;
    for (i, sub) in sys.subdomains().iter().enumerate() {
        let c = sub.constraint();
        if c.is_zero() {
            continue;
        }
        let eta = sys.eta()[i];
        let gamma = sub.params().gamma();
        let lv: Vec<&KinematicState> = levels(step, sys, i).collect();
        for j in 0..eta {
            let l0 = interpolate_lambda(sys.lambda(), &step.lambda_next, j, eta)?;
            let l1 = interpolate_lambda(sys.lambda(), &step.lambda_next, j + 1, eta)?;
            let cd = c.apply(&diff(&lv[j + 1].d, &lv[j].d));
            e += l0
                .iter()
                .zip(&l1)
                .zip(&cd)
                .map(|((a, b), x)| ((1.0 - gamma) * a + gamma * b) * x)
                .sum::<f64>();
        }
    }
    Ok(e)
}

/// Work of the external forces over one system step, weighted the same way
/// as the interface work.
pub fn external_work(step: &SystemStepResult, sys: &CoupledSystem) -> Result<f64> {
    check_step(step, sys)?;
    let mut w = 0.0;
    for (i, sub) in sys.subdomains().iter().enumerate() {
        if sub.force().is_zero() {
            continue;
        }
        let n = sub.dofs();
        let eta = sys.eta()[i];
        let gamma = sub.params().gamma();
        let lv: Vec<&KinematicState> = levels(step, sys, i).collect();
        let mut f0 = sub.force().eval(sys.sublevel_time(i, 0), n);
        for j in 0..eta {
            let f1 = sub.force().eval(sys.sublevel_time(i, j + 1), n);
            let dd = diff(&lv[j + 1].d, &lv[j].d);
            w += f0
                .iter()
                .zip(&f1)
                .zip(&dd)
                .map(|((a, b), x)| ((1.0 - gamma) * a + gamma * b) * x)
                .sum::<f64>();
            f0 = f1;
        }
    }
    Ok(w)
}

/// `sum_i a_i^T A_i a_i + v_i^T K_i v_i`, `A_i = M_i + dt_i^2 (beta_i - gamma_i / 2) K_i`.
pub fn energy_norm(sys: &CoupledSystem) -> f64 {
    sys.subdomains()
        .iter()
        .zip(sys.states())
        .map(|(sub, s)| {
            let dt = sub.dt_sub();
            let c = dt * dt * (sub.params().beta() - sub.params().gamma() / 2.0);
            sub.mass().quadratic_form(&s.a)
                + c * sub.stiffness().quadratic_form(&s.a)
                + sub.stiffness().quadratic_form(&s.v)
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftRecord {
    pub a_drift: DenseVector,
    pub d_drift: DenseVector,
    pub v_residual: DenseVector,
}

impl DriftRecord {
    pub fn norms(&self) -> (f64, f64, f64) {
        (norm_inf(&self.d_drift), norm_inf(&self.a_drift), norm_inf(&self.v_residual))
    }
}

pub fn drift_record(sys: &CoupledSystem) -> DriftRecord {
    DriftRecord {
        a_drift: sys.interface_sum(|s| &s.a),
        d_drift: sys.interface_sum(|s| &s.d),
        v_residual: sys.interface_sum(|s| &s.v),
    }
}

/// Drifts one system step later for a uniform scheme without subcycling.
pub fn predict_drift(prev: &DriftRecord, params: NewmarkParams, dt: f64) -> (DenseVector, DenseVector) {
    let (beta, gamma) = (params.beta(), params.gamma());
    let a = prev.a_drift.iter().map(|x| (1.0 - 1.0 / gamma) * x).collect();
    let d = prev
        .d_drift
        .iter()
        .zip(&prev.a_drift)
        .map(|(d, a)| d + (0.5 - beta / gamma) * dt * dt * a)
        .collect();
    (a, d)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SubcyclingIndicator {
    pub max_abs: f64,
    pub cumulative_abs: f64,
}

pub fn subcycling_indicator(e_interface: &[f64]) -> SubcyclingIndicator {
    e_interface.iter().fold(SubcyclingIndicator::default(), |acc, x| SubcyclingIndicator {
        max_abs: acc.max_abs.max(x.abs()),
        cumulative_abs: acc.cumulative_abs + x.abs(),
    })
}

/// Per-system-level diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub t: f64,
    pub energy: EnergyBreakdown,
    pub drift: DriftRecord,
    pub lambda: DenseVector,
    /// External work done over the step leading to this level.
    pub external_work: Option<f64>,
}

impl StepReport {
    /// Report for the current level of `sys`, without step quantities.
    pub fn at_level(sys: &CoupledSystem) -> Self {
        StepReport {
            step: sys.step_index(),
            t: sys.time(),
            energy: total_energy(sys),
            drift: drift_record(sys),
            lambda: sys.lambda().to_vec(),
            external_work: None,
        }
    }

    /// Relative error of the energy balance over the step that produced this
    /// report, given the total energy at the previous level.
    pub fn balance_residual(&self, previous_total: f64) -> Option<f64> {
        let lhs = self.energy.total - previous_total;
        let rhs = self.energy.e_algorithm? + self.energy.e_interface? + self.external_work.unwrap_or(0.0);
        let scale = previous_total.abs().max(self.energy.total.abs()).max(f64::MIN_POSITIVE);
        Some((lhs - rhs).abs() / scale)
    }
}
