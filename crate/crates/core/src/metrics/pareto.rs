//! Non-dominance over (F1, parameter count): higher F1 and fewer
//! parameters are better.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub name: String,
    /// Percent.
    pub f1: f64,
    pub params: f64,
}

impl ModelPoint {
    pub fn new(name: impl Into<String>, f1: f64, params: f64) -> Result<Self> {
        if !(0.0..=100.0).contains(&f1) || !(params > 0.0) || !params.is_finite() {
            return Err(Error::param(format!("model point with F1 {f1} and {params} parameters")));
        }
        Ok(Self {
            name: name.into(),
            f1,
            params,
        })
    }
}

pub fn dominates(a: &ModelPoint, b: &ModelPoint) -> bool {
    a.f1 >= b.f1 && a.params <= b.params && (a.f1 > b.f1 || a.params < b.params)
}

/// `true` for every point no other point dominates. Sort by ascending
/// parameters then sweep, keeping the best F1 seen so far.
pub fn pareto_flags(points: &[ModelPoint]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .params
            .total_cmp(&points[b].params)
            .then(points[b].f1.total_cmp(&points[a].f1))
    });
    let mut flags = vec![false; points.len()];
    // best F1 among points with strictly fewer parameters
    let mut best_before = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let p = points[order[i]].params;
        let mut j = i;
        while j < order.len() && points[order[j]].params == p {
            j += 1;
        }
        // within a group of equal params the first holds the top F1
        let group_top = points[order[i]].f1;
        for &k in &order[i..j] {
            let f = points[k].f1;
            flags[k] = f == group_top && f > best_before;
        }
        best_before = best_before.max(group_top);
        i = j;
    }
    flags
}

/// Non-dominated points ordered by ascending parameter count (input order on
/// ties).
pub fn pareto_front(points: &[ModelPoint]) -> Vec<ModelPoint> {
    let flags = pareto_flags(points);
    let mut front: Vec<(usize, &ModelPoint)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| flags[*i])
        .collect();
    front.sort_by(|a, b| a.1.params.total_cmp(&b.1.params).then(a.0.cmp(&b.0)));
    front.into_iter().map(|(_, p)| p.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(name: &str, f1: f64, params: f64) -> ModelPoint {
        ModelPoint::new(name, f1, params).unwrap()
    }

    #[test]
    fn single_and_duplicates() {
        assert_eq!(pareto_front(&[p("a", 50.0, 1.0)]).len(), 1);
        let dup = [p("a", 50.0, 1.0), p("b", 50.0, 1.0)];
        assert_eq!(pareto_flags(&dup), vec![true, true]);
    }

    #[test]
    fn trade_off_triplet() {
        let pts = [
            p("Darknet-53", 94.21, 41.6),
            p("MobileNet v2", 84.12, 3.5),
            p("SelAE", 87.18, 5.0),
        ];
        let names: Vec<_> = pareto_front(&pts).into_iter().map(|m| m.name).collect();
        assert_eq!(names, ["MobileNet v2", "SelAE", "Darknet-53"]);
    }

    #[test]
    fn equal_params_lower_f1_dominated() {
        let pts = [p("a", 60.0, 2.0), p("b", 70.0, 2.0), p("c", 70.0, 3.0)];
        assert_eq!(pareto_flags(&pts), vec![false, true, false]);
    }

    #[test]
    fn validation() {
        assert!(ModelPoint::new("x", 101.0, 1.0).is_err());
        assert!(ModelPoint::new("x", 50.0, 0.0).is_err());
    }
}
