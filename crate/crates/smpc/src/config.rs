//! JSON configuration schema.
//!
//! Matrices are arrays of row arrays. `system.K = null` selects the LQR gain
//! for `(A, B, task.Q, task.R)`.

use serde::{Deserialize, Serialize};
use smpc_core::adaptive::{NHat, TerminalOptions};
use smpc_core::model::{builtin_example, ExampleId, Generator};
use smpc_core::offline::OfflineSettings;
use smpc_core::sim::Controller;
use smpc_core::{
    BoxSupport, ConstraintSpec, DisturbanceModel, Error, HalfSpaces, LtiSystem, Matrix, Scenario, TaskSpec, Vector,
};

pub type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemConfig,
    pub constraints: ConstraintsConfig,
    pub disturbance: DisturbanceConfig,
    pub task: TaskConfig,
    #[serde(default)]
    pub offline: OfflineConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "K", default)]
    pub k: Option<Rows>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsConfig {
    #[serde(rename = "H")]
    pub h_state: Rows,
    pub h: Vec<f64>,
    #[serde(rename = "H_u")]
    pub h_input: Rows,
    pub h_u: Vec<f64>,
    /// Violation bound of each state row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_row: Option<f64>,
    /// Joint bound, split evenly over the rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_joint: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorConfig {
    Uniform,
    TruncatedGaussian { mean: Vec<f64>, covariance: Rows },
    Discrete { points: Rows, probabilities: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default = "uniform")]
    pub generator: GeneratorConfig,
}

fn uniform() -> GeneratorConfig {
    GeneratorConfig::Uniform
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "N")]
    pub mpc_horizon: usize,
    pub x_start: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "Q_F")]
    pub q_final: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    pub x_ref: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineConfig {
    #[serde(rename = "N_s")]
    pub n_samples: usize,
    #[serde(default)]
    pub beta_target: Option<f64>,
    #[serde(default)]
    pub conservative_from: Option<usize>,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            n_samples: 500,
            beta_target: None,
            conservative_from: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NHatConfig {
    Named(NHatName),
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NHatName {
    Full,
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub controller: Controller,
    pub seed: u64,
    pub trials: usize,
    pub draws: usize,
    pub n_hat: NHatConfig,
    pub terminal_input_rows: bool,
    pub roa_scale: f64,
    pub roa_resolution: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            controller: Controller::Proposed,
            seed: 0,
            trials: 10,
            draws: 100,
            n_hat: NHatConfig::Named(NHatName::Full),
            terminal_input_rows: false,
            roa_scale: 1.2,
            roa_resolution: 81,
        }
    }
}

fn matrix(name: &str, rows: &Rows) -> Result<Matrix, Error> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::InvalidConfig(format!(
            "{name}: row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(Matrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

fn vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

pub fn rows_of(m: &Matrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Builds and validates the scenario.
    pub fn scenario(&self) -> Result<Scenario, Error> {
        let scenario = self.scenario_unchecked()?;
        let problems = scenario.validate();
        if !problems.is_empty() {
            let list: Vec<String> = problems.iter().map(ToString::to_string).collect();
            return Err(Error::InvalidConfig(list.join("; ")));
        }
        Ok(scenario)
    }

    pub fn scenario_unchecked(&self) -> Result<Scenario, Error> {
        let a = matrix("system.A", &self.system.a)?;
        let b = matrix("system.B", &self.system.b)?;
        let q = matrix("task.Q", &self.task.q)?;
        let r = matrix("task.R", &self.task.r)?;
        let system = match &self.system.k {
            Some(k) => LtiSystem::new(a, b, matrix("system.K", k)?),
            None => {
                if a.nrows() != q.nrows() || b.ncols() != r.nrows() || !a.is_square() || b.nrows() != a.nrows() {
                    return Err(Error::Dimension("A, B, Q and R do not fit together".into()));
                }
                LtiSystem::with_lqr_gain(a, b, &q, &r)?
            }
        };
        let c = &self.constraints;
        let state = HalfSpaces::new(matrix("constraints.H", &c.h_state)?, vector(&c.h));
        let input = HalfSpaces::new(matrix("constraints.H_u", &c.h_input)?, vector(&c.h_u));
        let constraints = match (c.alpha_row, c.alpha_joint) {
            (Some(a), None) => ConstraintSpec::new(state, input, a),
            (None, Some(a)) => ConstraintSpec::with_joint_alpha(state, input, a),
            _ => {
                return Err(Error::InvalidConfig(
                    "exactly one of constraints.alpha_row and constraints.alpha_joint is required".into(),
                ))
            }
        };
        let d = &self.disturbance;
        if d.lower.len() != d.upper.len() {
            return Err(Error::Dimension(
                "disturbance.lower and disturbance.upper differ in length".into(),
            ));
        }
        let generator = match &d.generator {
            GeneratorConfig::Uniform => Generator::UniformBox,
            GeneratorConfig::TruncatedGaussian { mean, covariance } => Generator::TruncatedGaussian {
                mean: vector(mean),
                covariance: matrix("disturbance.generator.covariance", covariance)?,
            },
            GeneratorConfig::Discrete { points, probabilities } => Generator::DiscreteLattice {
                points: points.iter().map(|p| vector(p)).collect(),
                probabilities: probabilities.clone(),
            },
        };
        let disturbance = DisturbanceModel {
            support: BoxSupport::new(vector(&d.lower), vector(&d.upper)),
            generator,
            seed: self.run.seed,
        };
        let t = &self.task;
        let task = TaskSpec {
            horizon: t.horizon,
            mpc_horizon: t.mpc_horizon,
            x_start: vector(&t.x_start),
            q,
            q_final: matrix("task.Q_F", &t.q_final)?,
            r,
            x_ref: vector(&t.x_ref),
        };
        Ok(Scenario {
            system,
            constraints,
            disturbance,
            task,
        })
    }

    pub fn offline_settings(&self) -> OfflineSettings {
        OfflineSettings {
            n_samples: self.offline.n_samples,
            beta_target: self.offline.beta_target,
            conservative_from: self.offline.conservative_from,
        }
    }

    pub fn terminal_options(&self) -> TerminalOptions {
        TerminalOptions {
            n_hat: match self.run.n_hat {
                NHatConfig::Named(NHatName::Full) => NHat::Full,
                NHatConfig::Named(NHatName::Auto) => NHat::Auto,
                NHatConfig::Fixed(n) => NHat::Fixed(n),
            },
            input_rows: self.run.terminal_input_rows,
        }
    }

    /// Config of a built-in benchmark; the gain is left to the LQR default.
    pub fn example(id: ExampleId) -> Self {
        let s = builtin_example(id);
        Self {
            system: SystemConfig {
                a: rows_of(&s.system.a),
                b: rows_of(&s.system.b),
                k: None,
            },
            constraints: ConstraintsConfig {
                h_state: rows_of(&s.constraints.state.normals),
                h: s.constraints.state.offsets.iter().copied().collect(),
                h_input: rows_of(&s.constraints.input.normals),
                h_u: s.constraints.input.offsets.iter().copied().collect(),
                alpha_row: Some(s.constraints.alpha),
                alpha_joint: None,
            },
            disturbance: DisturbanceConfig {
                lower: s.disturbance.support.lower.iter().copied().collect(),
                upper: s.disturbance.support.upper.iter().copied().collect(),
                generator: GeneratorConfig::Uniform,
            },
            task: TaskConfig {
                horizon: s.task.horizon,
                mpc_horizon: s.task.mpc_horizon,
                x_start: s.task.x_start.iter().copied().collect(),
                q: rows_of(&s.task.q),
                q_final: rows_of(&s.task.q_final),
                r: rows_of(&s.task.r),
                x_ref: s.task.x_ref.iter().copied().collect(),
            },
            offline: OfflineConfig::default(),
            run: RunConfig::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples_round_trip_to_the_builtin_scenarios() {
        for id in ExampleId::ALL {
            let cfg = Config::example(id);
            let back = Config::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
            let s = back.scenario().unwrap();
            let builtin = builtin_example(id);
            assert_eq!(s.system.a, builtin.system.a);
            assert!((&s.system.k - &builtin.system.k).amax() < 1e-12);
            assert_eq!(s.constraints, builtin.constraints);
            assert_eq!(s.task, builtin.task);
        }
    }

    #[test]
    fn e1_config_has_the_benchmark_dynamics() {
        let cfg = Config::example(ExampleId::E1);
        assert_eq!(cfg.system.a, vec![vec![1.2, 1.5], vec![0.0, 1.3]]);
    }

    #[test]
    fn joint_alpha_is_split_over_rows() {
        let mut cfg = Config::example(ExampleId::E2);
        cfg.constraints.alpha_row = None;
        cfg.constraints.alpha_joint = Some(0.4);
        assert!((cfg.scenario().unwrap().constraints.alpha - 0.1).abs() < 1e-15);
        cfg.constraints.alpha_row = Some(0.1);
        assert!(cfg.scenario().is_err());
    }

    #[test]
    fn rejects_ragged_and_unknown_fields() {
        let mut cfg = Config::example(ExampleId::E2);
        cfg.system.a[1].push(3.0);
        assert!(matches!(cfg.scenario(), Err(Error::InvalidConfig(_))));
        let text = Config::example(ExampleId::E2)
            .to_json()
            .replacen("\"system\"", "\"sytsem\"", 1);
        assert!(Config::from_json(&text).is_err());
    }

    #[test]
    fn explicit_gain_and_generators_parse() {
        let text = r#"{
            "system": {"A": [[0.5]], "B": [[1.0]], "K": [[0.0]]},
            "constraints": {"H": [[1.0], [-1.0]], "h": [1.0, 1.0], "H_u": [[1.0], [-1.0]], "h_u": [1.0, 1.0], "alpha_row": 0.2},
            "disturbance": {"lower": [-1.0], "upper": [1.0],
                            "generator": {"kind": "discrete", "points": [[-1.0], [1.0]], "probabilities": [0.5, 0.5]}},
            "task": {"T": 4, "N": 2, "x_start": [0.0], "Q": [[1.0]], "Q_F": [[1.0]], "R": [[1.0]], "x_ref": [0.0]},
            "run": {"n_hat": 2}
        }"#;
        let cfg = Config::from_json(text).unwrap();
        let s = cfg.scenario().unwrap();
        assert_eq!(s.system.k[(0, 0)], 0.0);
        assert_eq!(cfg.terminal_options().n_hat, NHat::Fixed(2));
        assert_eq!(cfg.offline.n_samples, 500);
        assert!(matches!(s.disturbance.generator, Generator::DiscreteLattice { .. }));
    }
}
