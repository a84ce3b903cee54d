//! Time loop over a coupled system with per-step diagnostics.

use std::fmt;
use std::str::FromStr;

use crate::baselines::{backward_euler_dissipation, backward_euler_work, BackwardEuler, MonolithicNewmark};
use crate::coupling::CoupledSystem;
use crate::diagnostics::{energy_algorithm, energy_interface, external_work, StepReport};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Method {
    #[default]
    Coupled,
    BackwardEuler,
    MonolithicNewmark,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Coupled => "coupled",
            Method::BackwardEuler => "backward_euler",
            Method::MonolithicNewmark => "monolithic_newmark",
        }
    }

    /// Whether the method requires `eta_i = 1` everywhere.
    pub fn single_rate(&self) -> bool {
        !matches!(self, Method::Coupled)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "coupled" => Ok(Method::Coupled),
            "backward_euler" => Ok(Method::BackwardEuler),
            "monolithic_newmark" => Ok(Method::MonolithicNewmark),
            _ => Err(format!(
                "unknown method '{s}' (expected coupled, backward_euler or monolithic_newmark)"
            )),
        }
    }
}

#[derive(Debug)]
enum Stepper {
    Coupled,
    BackwardEuler(BackwardEuler),
    MonolithicNewmark(MonolithicNewmark),
}

/// Error raised at a given system step.
#[derive(Debug)]
pub struct StepFailure {
    pub step: u64,
    pub error: Error,
}

impl fmt::Display for StepFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} failed: {}", self.step, self.error)
    }
}

impl std::error::Error for StepFailure {}

#[derive(Debug)]
pub struct Simulation {
    sys: CoupledSystem,
    method: Method,
    stepper: Stepper,
}

impl Simulation {
    pub fn new(sys: CoupledSystem, method: Method) -> Result<Self> {
        let stepper = match method {
            Method::Coupled => Stepper::Coupled,
            Method::BackwardEuler => Stepper::BackwardEuler(BackwardEuler::new(&sys)?),
            Method::MonolithicNewmark => Stepper::MonolithicNewmark(MonolithicNewmark::new(&sys)?),
        };
        Ok(Self { sys, method, stepper })
    }

    pub fn system(&self) -> &CoupledSystem {
        &self.sys
    }

    pub fn into_system(self) -> CoupledSystem {
        self.sys
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn initial_report(&self) -> StepReport {
        StepReport::at_level(&self.sys)
    }

    /// Advances one system step and reports the new level, including the
    /// energy split of the step.
    pub fn step(&mut self) -> Result<StepReport> {
        let sys = &self.sys;
        let (result, e_alg, e_int, w_ext) = match &self.stepper {
            Stepper::BackwardEuler(be) => {
                let r = be.step(sys)?;
                let diss = backward_euler_dissipation(&r, sys);
                let (wi, we) = backward_euler_work(&r, sys);
                (r, diss, wi, we)
            }
            other => {
                let r = match other {
                    Stepper::MonolithicNewmark(mn) => mn.step(sys)?,
                    _ => sys.advance_system_step()?,
                };
                let ea = energy_algorithm(&r, sys)?;
                let ei = energy_interface(&r, sys)?;
                let we = external_work(&r, sys)?;
                (r, ea, ei, we)
            }
        };
        self.sys.commit(result)?;
        let mut rep = StepReport::at_level(&self.sys);
        rep.energy.e_algorithm = Some(e_alg);
        rep.energy.e_interface = Some(e_int);
        rep.external_work = Some(w_ext);
        Ok(rep)
    }

    /// Runs `steps` steps, passing each report to `observe`.
    pub fn run(
        &mut self,
        steps: usize,
        mut observe: impl FnMut(&CoupledSystem, &StepReport),
    ) -> std::result::Result<(), StepFailure> {
        for _ in 0..steps {
            let step = self.sys.step_index() + 1;
            let rep = self.step().map_err(|error| StepFailure { step, error })?;
            if rep.energy.total.is_finite() {
                observe(&self.sys, &rep);
            } else {
                return Err(StepFailure {
                    step,
                    error: Error::NonFinite("solution"),
                });
            }
        }
        Ok(())
    }
}
