//! Scenario files.
//!
//! A scenario is a TOML document; unknown keys are rejected. Example:
//!
//! ```toml
//! name = "wall"
//! dim = 1
//! dt = 0.02
//! duration = 20.0
//!
//! [initial]
//! position = [0.0]
//! velocity = [0.0]
//!
//! [controller]
//! kind = "scf"
//!
//! [[barriers]]
//! kind = "half_plane"
//! normal = [1.0]
//! offset = 6.0
//!
//! [command]
//! kind = "trapezoid"
//! rise = 4.0
//! hold = 20.0
//! fall = 4.0
//! peak = 0.6
//! ```

use std::path::{Path, PathBuf};
use std::sync::mpsc::Receiver;

use serde::{Deserialize, Serialize};

use crate::barriers::{evaluate, BarrierShape, CbfGains};
use crate::dynamics::{RobotState, DEFAULT_DT};
use crate::energy::StabilityParams;
use crate::error::{Error, Result};
use crate::human::{CommandSource, LiveInput, ReplayTrack, SpringDamperOperator, Trapezoid};
use crate::jcf::JcfWeights;
use crate::linalg::{check_dim, Vector};
use crate::optkernel::MAX_QP_ROWS;
use crate::scf::ControllerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    #[default]
    Scf,
    Jcf,
}

/// Controller actually stepped after applying the ablation flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    Scf,
    Jcf,
    ScfPassivity,
    ScfNoL2,
}

impl ControllerMode {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "scf" => ControllerMode::Scf,
            "jcf" => ControllerMode::Jcf,
            "scf_passivity" | "passivity" => ControllerMode::ScfPassivity,
            "scf_no_l2" | "no_l2" => ControllerMode::ScfNoL2,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ControllerMode::Scf => "scf",
            ControllerMode::Jcf => "jcf",
            ControllerMode::ScfPassivity => "scf_passivity",
            ControllerMode::ScfNoL2 => "scf_no_l2",
        }
    }
}

fn default_dt_ref() -> f64 {
    0.5
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    #[serde(default = "default_dt_ref")]
    pub dt_ref_controller: f64,
    pub weights: JcfWeights,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            kind: ControllerKind::Scf,
            dt_ref_controller: default_dt_ref(),
            weights: JcfWeights::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Render the raw discrepancy with no force constraint.
    pub disable_l2: bool,
    /// Replace the L2 bound by output passivity (sequential design only).
    pub passivity_baseline: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CommandSpec {
    Trapezoid {
        rise: f64,
        hold: f64,
        fall: f64,
        peak: f64,
        #[serde(default)]
        axis: usize,
    },
    /// Spring-damper operator starting at rest on `x_v0`.
    Model { p: f64, q: f64, x_v0: Vector },
    /// CSV file, relative paths resolve against the scenario file.
    Replay { path: PathBuf },
    /// Stylus samples from a connected UI.
    Live,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub dim: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    /// Recorded for provenance; the simulation itself draws no random numbers.
    #[serde(default)]
    pub seed: u64,
    pub initial: RobotState,
    /// Initial tank level E(0).
    #[serde(default)]
    pub tank_initial: f64,
    #[serde(default)]
    pub barriers: Vec<BarrierShape>,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default)]
    pub stability: StabilityParams,
    #[serde(default)]
    pub gains: CbfGains,
    #[serde(default)]
    pub ablation: Ablation,
    pub command: CommandSpec,
    /// Directory used to resolve relative replay paths.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// Parameters addressable by name from the CLI sweep and the UI.
pub const TUNABLE_PARAMS: &[&str] = &[
    "k",
    "k_v",
    "dt_ref",
    "e_max",
    "k1",
    "k2",
    "w_cbf",
    "w_l2",
    "dt_ref_controller",
    "tank_initial",
];

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut sc: Scenario = toml::from_str(&text)?;
        sc.base_dir = path.parent().map(Path::to_path_buf);
        sc.validate()?;
        Ok(sc)
    }

    pub fn mode(&self) -> ControllerMode {
        if self.ablation.disable_l2 {
            ControllerMode::ScfNoL2
        } else if self.ablation.passivity_baseline {
            ControllerMode::ScfPassivity
        } else {
            match self.controller.kind {
                ControllerKind::Scf => ControllerMode::Scf,
                ControllerKind::Jcf => ControllerMode::Jcf,
            }
        }
    }

    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            stability: self.stability,
            gains: self.gains,
            dt_ref_controller: self.controller.dt_ref_controller,
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Scenario(msg));
        check_dim(self.dim)?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if self.steps() == 0 {
            return bad("duration is shorter than one step".into());
        }
        self.initial.position.ensure_dim(self.dim)?;
        self.initial.velocity.ensure_dim(self.dim)?;
        self.controller_config().validate()?;
        self.controller.weights.validate()?;
        if !(self.tank_initial >= 0.0 && self.tank_initial <= self.stability.e_max) {
            return bad(format!(
                "tank_initial {} outside [0, e_max = {}]",
                self.tank_initial, self.stability.e_max
            ));
        }
        if self.barriers.len() + 1 > MAX_QP_ROWS {
            return bad(format!("at most {} barriers supported", MAX_QP_ROWS - 1));
        }
        for b in &self.barriers {
            if b.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: b.dim(),
                });
            }
            b.validate()?;
            let h = evaluate(b, &self.initial.position)?.value;
            if !(h > 0.0) {
                return bad(format!("initial position is not strictly safe (h = {h})"));
            }
        }
        if self.ablation.passivity_baseline && self.controller.kind == ControllerKind::Jcf {
            return bad("the passivity baseline is defined for the sequential controller only".into());
        }
        if self.ablation.passivity_baseline && self.ablation.disable_l2 {
            return bad("disable_l2 and passivity_baseline are mutually exclusive".into());
        }
        match &self.command {
            CommandSpec::Trapezoid {
                rise,
                hold,
                fall,
                peak,
                axis,
            } => Trapezoid {
                rise: *rise,
                hold: *hold,
                fall: *fall,
                peak: *peak,
                axis: *axis,
            }
            .validate(self.dim)?,
            CommandSpec::Model { p, q, x_v0 } => {
                x_v0.ensure_dim(self.dim)?;
                SpringDamperOperator::new(*p, *q, *x_v0)?;
            }
            CommandSpec::Replay { .. } | CommandSpec::Live => {}
        }
        Ok(())
    }

    pub fn replay_path(&self) -> Option<PathBuf> {
        match &self.command {
            CommandSpec::Replay { path } if path.is_relative() => Some(
                self.base_dir
                    .as_deref()
                    .map(|d| d.join(path))
                    .unwrap_or_else(|| path.clone()),
            ),
            CommandSpec::Replay { path } => Some(path.clone()),
            _ => None,
        }
    }

    /// Builds the command source. `live` must be given for live scenarios.
    pub fn command_source(&self, live: Option<Receiver<Vector>>) -> Result<CommandSource> {
        let src = match &self.command {
            CommandSpec::Trapezoid {
                rise,
                hold,
                fall,
                peak,
                axis,
            } => CommandSource::Trapezoid {
                profile: Trapezoid {
                    rise: *rise,
                    hold: *hold,
                    fall: *fall,
                    peak: *peak,
                    axis: *axis,
                },
                dim: self.dim,
            },
            CommandSpec::Model { p, q, x_v0 } => {
                CommandSource::Model(SpringDamperOperator::new(*p, *q, *x_v0)?)
            }
            CommandSpec::Replay { .. } => {
                let path = self.replay_path().expect("replay command has a path");
                let track = ReplayTrack::from_csv_path(&path).map_err(|e| {
                    Error::Scenario(format!("cannot load replay {}: {e}", path.display()))
                })?;
                if track.dim() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        found: track.dim(),
                    });
                }
                CommandSource::Replay(track)
            }
            CommandSpec::Live => {
                let rx = live.ok_or_else(|| {
                    Error::Scenario("live command source needs a connected UI (use `serve`)".into())
                })?;
                CommandSource::Live(LiveInput::new(rx, self.dim)?)
            }
        };
        Ok(src)
    }

    /// Sets a named parameter and revalidates. On error the scenario is
    /// left unchanged.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        let mut next = self.clone();
        match name {
            "k" => next.stability.k = value,
            "k_v" => next.stability.k_v = value,
            "dt_ref" => next.stability.dt_ref = value,
            "e_max" => {
                next.stability.e_max = value;
                next.tank_initial = next.tank_initial.min(value.max(0.0));
            }
            "k1" => next.gains.k1 = value,
            "k2" => next.gains.k2 = value,
            "w_cbf" => next.controller.weights.w_cbf = value,
            "w_l2" => next.controller.weights.w_l2 = value,
            "dt_ref_controller" => next.controller.dt_ref_controller = value,
            "tank_initial" => next.tank_initial = value,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown parameter {other:?}; expected one of {}",
                    TUNABLE_PARAMS.join(", ")
                )))
            }
        }
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn get_param(&self, name: &str) -> Option<f64> {
        Some(match name {
            "k" => self.stability.k,
            "k_v" => self.stability.k_v,
            "dt_ref" => self.stability.dt_ref,
            "e_max" => self.stability.e_max,
            "k1" => self.gains.k1,
            "k2" => self.gains.k2,
            "w_cbf" => self.controller.weights.w_cbf,
            "w_l2" => self.controller.weights.w_l2,
            "dt_ref_controller" => self.controller.dt_ref_controller,
            "tank_initial" => self.tank_initial,
            _ => return None,
        })
    }

    /// Sets the controller from a mode name, adjusting the ablation flags.
    pub fn set_mode(&mut self, mode: ControllerMode) {
        self.ablation = Ablation::default();
        match mode {
            ControllerMode::Scf => self.controller.kind = ControllerKind::Scf,
            ControllerMode::Jcf => self.controller.kind = ControllerKind::Jcf,
            ControllerMode::ScfPassivity => {
                self.controller.kind = ControllerKind::Scf;
                self.ablation.passivity_baseline = true;
            }
            ControllerMode::ScfNoL2 => {
                self.controller.kind = ControllerKind::Scf;
                self.ablation.disable_l2 = true;
            }
        }
    }
}
