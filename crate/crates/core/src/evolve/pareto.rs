use serde::{Deserialize, Serialize};

use super::Individual;

/// `a` dominates `b`: no worse in both objectives and better in one.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontPoint {
    pub ce: f64,
    pub mse: f64,
    pub trial: usize,
    pub age: u32,
    /// Position of the individual in its final population.
    pub index: usize,
}

impl FrontPoint {
    pub fn objectives(&self) -> (f64, f64) {
        (self.ce, self.mse)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParetoFront {
    pub points: Vec<FrontPoint>,
}

/// Non-dominated subset, ordered by CE then MSE. Equal points are all kept.
pub fn pareto_front(points: &[FrontPoint]) -> ParetoFront {
    let mut kept: Vec<FrontPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| dominates(q.objectives(), p.objectives())))
        .cloned()
        .collect();
    kept.sort_by(|a, b| {
        a.ce.total_cmp(&b.ce)
            .then(a.mse.total_cmp(&b.mse))
            .then(a.trial.cmp(&b.trial))
            .then(a.index.cmp(&b.index))
    });
    ParetoFront { points: kept }
}

/// Front of the valid members of one population.
pub fn front_of(members: &[Individual], trial: usize) -> ParetoFront {
    let points: Vec<FrontPoint> = members
        .iter()
        .enumerate()
        .filter_map(|(index, m)| {
            let (ce, mse) = m.fitness.as_ref()?.objectives()?;
            Some(FrontPoint {
                ce,
                mse,
                trial,
                age: m.age,
                index,
            })
        })
        .collect();
    pareto_front(&points)
}

/// Front of the union of several fronts.
pub fn meta_front(fronts: &[ParetoFront]) -> ParetoFront {
    let all: Vec<FrontPoint> = fronts.iter().flat_map(|f| f.points.iter().cloned()).collect();
    pareto_front(&all)
}
