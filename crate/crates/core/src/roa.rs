//! Grid estimate of the set of initial states for which the first MPC
//! problem is feasible.

use alloc::vec::Vec;

use crate::adaptive::OnlineContext;
use crate::model::BoxSupport;
use crate::mpc::SolveStatus;
use crate::offline::GammaTable;
use crate::qp::DualActiveSet;
use crate::sim::{Controller, Engine};
use crate::{Error, Result, Vector};

/// Axis-aligned grid of cells; each cell is probed at its center.
#[derive(Clone, Debug, PartialEq)]
pub struct RoaGridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<usize>,
}

impl RoaGridSpec {
    /// `resolution` cells per axis over the state box enlarged by `scale`
    /// about its center.
    pub fn around_state_box(engine: &Engine, scale: f64, resolution: usize) -> Result<Self> {
        let bounds = engine
            .scenario()
            .constraints
            .state
            .axis_aligned_bounds()
            .ok_or_else(|| Error::InvalidConfig("state constraints are unbounded".into()))?;
        Ok(Self::scaled(&bounds, scale, resolution))
    }

    pub fn scaled(bounds: &BoxSupport, scale: f64, resolution: usize) -> Self {
        let c = bounds.center();
        let r = bounds.half_width() * scale;
        Self {
            lower: (0..c.len()).map(|d| c[d] - r[d]).collect(),
            upper: (0..c.len()).map(|d| c[d] + r[d]).collect(),
            resolution: alloc::vec![resolution; c.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn cells(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn step(&self, d: usize) -> f64 {
        (self.upper[d] - self.lower[d]) / self.resolution[d] as f64
    }

    pub fn cell_area(&self) -> f64 {
        (0..self.dim()).map(|d| self.step(d)).product()
    }

    /// Center of flat cell `index`; the last axis varies fastest.
    pub fn center(&self, index: usize) -> Vector {
        let mut rest = index;
        let mut x = Vector::zeros(self.dim());
        for d in (0..self.dim()).rev() {
            let i = rest % self.resolution[d];
            rest /= self.resolution[d];
            x[d] = self.lower[d] + (i as f64 + 0.5) * self.step(d);
        }
        x
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoaGrid {
    pub spec: RoaGridSpec,
    pub feasible: Vec<bool>,
}

impl RoaGrid {
    pub fn count(&self) -> usize {
        self.feasible.iter().filter(|f| **f).count()
    }

    pub fn area(&self) -> f64 {
        self.count() as f64 * self.spec.cell_area()
    }

    /// Every cell feasible in `other` is feasible here.
    pub fn contains(&self, other: &RoaGrid) -> bool {
        self.feasible.iter().zip(&other.feasible).all(|(a, b)| *a || !*b)
    }

    /// Cells feasible in `other` but not here.
    pub fn missing_from(&self, other: &RoaGrid) -> usize {
        self.feasible
            .iter()
            .zip(&other.feasible)
            .filter(|(a, b)| !**a && **b)
            .count()
    }
}

/// Whether the first problem from `x` has a solution.
pub fn probe(
    engine: &Engine,
    table: &GammaTable,
    controller: Controller,
    x: &Vector,
    solver: &mut DualActiveSet,
) -> bool {
    let ctx = OnlineContext::new(x.len());
    let problem = engine.problem(controller, table, &ctx, x);
    engine.predictor().solve(&problem, solver).status == SolveStatus::Optimal
}

pub fn estimate_roa(engine: &Engine, table: &GammaTable, controller: Controller, spec: &RoaGridSpec) -> RoaGrid {
    let mut solver = DualActiveSet::default();
    let feasible = (0..spec.cells())
        .map(|c| probe(engine, table, controller, &spec.center(c), &mut solver))
        .collect();
    RoaGrid {
        spec: spec.clone(),
        feasible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive::TerminalOptions;
    use crate::model::{builtin_example, ExampleId};
    use crate::offline::{build_gamma_table, OfflineSettings};

    #[test]
    fn centers_and_area() {
        let spec = RoaGridSpec {
            lower: alloc::vec![-4.125],
            upper: alloc::vec![4.125],
            resolution: alloc::vec![33],
        };
        assert_eq!(spec.center(0)[0], -4.0);
        assert_eq!(spec.center(16)[0], 0.0);
        assert_eq!(spec.center(32)[0], 4.0);
        assert_eq!(spec.cell_area(), 0.25);

        let two = RoaGridSpec {
            lower: alloc::vec![0.0, 0.0],
            upper: alloc::vec![2.0, 4.0],
            resolution: alloc::vec![2, 4],
        };
        assert_eq!(two.center(1).as_slice(), &[0.5, 1.5]);
        assert_eq!(two.center(4).as_slice(), &[1.5, 0.5]);
        assert_eq!(two.cell_area(), 1.0);
    }

    #[test]
    fn removing_tightening_enlarges_region() {
        let s = builtin_example(ExampleId::E3);
        let engine = Engine::new(&s, TerminalOptions::default()).unwrap();
        let table = build_gamma_table(&s, &OfflineSettings::default()).unwrap();
        let spec = RoaGridSpec::around_state_box(&engine, 1.2, 21).unwrap();
        let nominal = estimate_roa(&engine, &table, Controller::Nominal, &spec);
        let proposed = estimate_roa(&engine, &table, Controller::Proposed, &spec);
        let baseline = estimate_roa(&engine, &table, Controller::BaselineRr, &spec);
        assert!(nominal.contains(&proposed));
        assert!(proposed.contains(&baseline));
        assert!(proposed.count() > 0);
        assert_eq!(proposed.area(), proposed.count() as f64 * spec.cell_area());
    }
}
