//! Closed-loop simulation: command source → controller → plant → tank and
//! ledger → trace.

pub mod compare;
pub mod scenario;
pub mod trace;

use std::sync::mpsc::Receiver;

use crate::barriers::cbf_rows;
use crate::dynamics::{step, RobotState};
use crate::energy::{
    fallback_deficit, ledger_check, storage, tank_update, EnergyTank, L2Ledger,
};
use crate::error::{Error, Result};
use crate::human::CommandSource;
use crate::jcf::jcf_step;
use crate::linalg::Vector;
use crate::scf::{
    reference_control, scf_passivity_step, scf_step, scf_without_l2_step, ActiveCase,
    ControlDecision,
};

pub use compare::{compare, CompareReport, TraceSummary};
pub use scenario::{Ablation, CommandSpec, ControllerKind, ControllerMode, ControllerSpec, Scenario};
pub use trace::{read_trace_csv, write_trace, write_trace_csv, Trace, TraceMeta, TraceRow};

/// Stepper for one scenario. Holds the plant, tank, ledger and command source.
pub struct Simulation {
    scenario: Scenario,
    source: CommandSource,
    state: RobotState,
    tank: EnergyTank,
    ledger: L2Ledger,
    step_index: u64,
    last_force: Vector,
}

impl Simulation {
    pub fn new(scenario: &Scenario, live: Option<Receiver<Vector>>) -> Result<Self> {
        scenario.validate()?;
        let source = scenario.command_source(live)?;
        Ok(Self::with_source(scenario.clone(), source))
    }

    fn with_source(scenario: Scenario, source: CommandSource) -> Self {
        let state = scenario.initial;
        let tank = EnergyTank {
            level: scenario.tank_initial,
            flow: 0.0,
        };
        let ledger = L2Ledger::new(storage(&state, &scenario.stability), scenario.tank_initial);
        Self {
            last_force: Vector::zeros(scenario.dim),
            scenario,
            source,
            state,
            tank,
            ledger,
            step_index: 0,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn tank(&self) -> &EnergyTank {
        &self.tank
    }

    pub fn ledger(&self) -> &L2Ledger {
        &self.ledger
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.scenario.dt
    }

    pub fn is_finished(&self) -> bool {
        self.step_index as usize >= self.scenario.steps()
    }

    /// Restarts from the initial condition. A live source keeps its channel.
    pub fn reset(&mut self) -> Result<()> {
        let source = match std::mem::replace(
            &mut self.source,
            CommandSource::Replay(placeholder_track()),
        ) {
            CommandSource::Live(live) => CommandSource::Live(live),
            _ => self.scenario.command_source(None)?,
        };
        *self = Self::with_source(self.scenario.clone(), source);
        Ok(())
    }

    /// Applies a parameter change from now on.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        // Validation of the initial condition is irrelevant mid-run, so only
        // the parameter blocks are checked through the scenario.
        self.scenario.set_param(name, value)?;
        self.tank.level = self.tank.level.min(self.scenario.stability.e_max);
        Ok(())
    }

    pub fn set_mode(&mut self, mode: ControllerMode) {
        self.scenario.set_mode(mode);
    }

    fn decide(&self, x_vd: &Vector) -> Result<(ControlDecision, f64)> {
        let cfg = self.scenario.controller_config();
        let (rows, h_min) = cbf_rows(&self.scenario.barriers, &self.state, &cfg.gains)?;
        let d = match self.scenario.mode() {
            ControllerMode::Scf => scf_step(&self.state, x_vd, &rows, &self.tank, &cfg)?,
            ControllerMode::Jcf => jcf_step(
                &self.state,
                x_vd,
                &rows,
                &self.tank,
                &cfg,
                &self.scenario.controller.weights,
            )?,
            ControllerMode::ScfPassivity => {
                scf_passivity_step(&self.state, x_vd, &rows, &self.tank, &cfg)?
            }
            ControllerMode::ScfNoL2 => {
                scf_without_l2_step(&self.state, x_vd, &rows, &self.tank, &cfg)?
            }
        };
        Ok((d, h_min))
    }

    /// Advances one step and returns the row describing it. On a controller
    /// error the returned row is marked `ABORT` and the state is not advanced.
    pub fn step(&mut self) -> (TraceRow, Option<Error>) {
        let t = self.time();
        let dt = self.scenario.dt;
        let params = self.scenario.stability;
        let x_vd = match self.source.command_at(t, &self.last_force, dt) {
            Ok(c) => c.x_vd,
            Err(e) => return (self.abort_row(t, Vector::zeros(self.scenario.dim)), Some(e)),
        };
        let (decision, h_min) = match self.decide(&x_vd) {
            Ok(v) => v,
            Err(e) => return (self.abort_row(t, x_vd), Some(e)),
        };
        let u = decision.u;
        let force = decision.force;

        if decision.is_fallback() {
            let deficit = fallback_deficit(&self.tank, &force, &x_vd, &self.state, &u, dt, &params);
            self.ledger.add_deficit(deficit, &params);
        }
        self.ledger.accumulate(&force, &x_vd, dt);
        let tank = tank_update(&self.tank, &force, &x_vd, &self.state, &u, dt, &params);
        let next = match step(&self.state, &u, dt) {
            Ok(s) => s,
            Err(e) => return (self.abort_row(t, x_vd), Some(e)),
        };
        let audit = ledger_check(&self.ledger, &params);
        let row = TraceRow {
            t,
            position: self.state.position,
            velocity: self.state.velocity,
            x_vd,
            u_ref: decision.u_ref.0,
            u: u.0,
            force,
            h_min,
            energy: self.tank.level,
            epsilon: tank.flow,
            ledger_margin: audit.margin,
            beta_extra: self.ledger.beta_extra,
            active_case: decision.active_case,
            feasible: decision.feasible,
        };
        self.state = next;
        self.tank = tank;
        self.last_force = force;
        self.step_index += 1;
        (row, None)
    }

    fn abort_row(&self, t: f64, x_vd: Vector) -> TraceRow {
        let cfg = self.scenario.controller_config();
        let zero = Vector::zeros(self.scenario.dim);
        let u_ref = reference_control(&self.state, &x_vd, cfg.dt_ref_controller)
            .map(|u| u.0)
            .unwrap_or(zero);
        let h_min = cbf_rows(&self.scenario.barriers, &self.state, &cfg.gains)
            .map(|(_, h)| h)
            .unwrap_or(f64::NAN);
        TraceRow {
            t,
            position: self.state.position,
            velocity: self.state.velocity,
            x_vd,
            u_ref,
            u: zero,
            force: zero,
            h_min,
            energy: self.tank.level,
            epsilon: 0.0,
            ledger_margin: ledger_check(&self.ledger, &self.scenario.stability).margin,
            beta_extra: self.ledger.beta_extra,
            active_case: ActiveCase::Aborted,
            feasible: false,
        }
    }
}

fn placeholder_track() -> crate::human::ReplayTrack {
    crate::human::ReplayTrack::new(vec![(0.0, Vector::new1(0.0))]).expect("single sample track")
}

/// Runs a scenario to completion. Setup problems are errors; a controller
/// failure mid-run ends the trace with an `ABORT` row and is reported in
/// [`Trace::abort`].
pub fn run(scenario: &Scenario) -> Result<Trace> {
    run_with_live(scenario, None)
}

pub fn run_with_live(scenario: &Scenario, live: Option<Receiver<Vector>>) -> Result<Trace> {
    let mut sim = Simulation::new(scenario, live)?;
    let mut rows = Vec::with_capacity(scenario.steps());
    let mut abort = None;
    while !sim.is_finished() {
        let (row, err) = sim.step();
        rows.push(row);
        if let Some(e) = err {
            abort = Some(e.to_string());
            break;
        }
    }
    Ok(Trace {
        meta: TraceMeta::new(scenario, &rows, abort.clone()),
        rows,
        abort,
    })
}

/// Runs copies of `scenario` with `param` set to each value, in parallel.
pub fn sweep(scenario: &Scenario, param: &str, values: &[f64]) -> Result<Vec<(f64, Trace)>> {
    let variants: Vec<Scenario> = values
        .iter()
        .map(|&v| {
            let mut s = scenario.clone();
            s.set_param(param, v)?;
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let results: Vec<Result<Trace>> = std::thread::scope(|scope| {
        let handles: Vec<_> = variants.iter().map(|s| scope.spawn(move || run(s))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    values
        .iter()
        .zip(results)
        .map(|(&v, r)| r.map(|t| (v, t)))
        .collect()
}

/// Ledger, tank and safety checks over a finished trace.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantReport {
    pub min_h: f64,
    pub min_ledger_margin: f64,
    pub tank_in_bounds: bool,
    pub fallback_force_zero: bool,
    pub fallback_steps: usize,
    pub final_beta_extra: f64,
}

impl InvariantReport {
    pub fn from_rows(rows: &[TraceRow], e_max: f64) -> Self {
        let fallback: Vec<&TraceRow> = rows
            .iter()
            .filter(|r| r.active_case == ActiveCase::Fallback)
            .collect();
        Self {
            min_h: rows.iter().map(|r| r.h_min).fold(f64::INFINITY, f64::min),
            min_ledger_margin: rows
                .iter()
                .map(|r| r.ledger_margin)
                .fold(f64::INFINITY, f64::min),
            tank_in_bounds: rows.iter().all(|r| r.energy >= 0.0 && r.energy <= e_max),
            fallback_force_zero: fallback.iter().all(|r| r.force.is_zero()),
            fallback_steps: fallback.len(),
            final_beta_extra: rows.last().map_or(0.0, |r| r.beta_extra),
        }
    }
}
