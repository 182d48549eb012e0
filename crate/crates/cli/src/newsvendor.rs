//! Single-item newsvendor: order `x` before demand `w` is revealed, pay
//! `holding` per unsold unit and `backlog` per unit short.

use bnwdro::ambiguity::GroundNorm;
use bnwdro::pipeline::DroProblem;
use bnwdro::reformulate::{AffinePiece, DecisionModel, PiecewiseAffineLoss, Polytope, ReformulateError};

use crate::config::NewsvendorConfig;

/// `g(x, w) = max{holding·(x − w), backlog·(w − x)}`.
pub fn loss(holding: f64, backlog: f64) -> Result<PiecewiseAffineLoss, ReformulateError> {
    PiecewiseAffineLoss::new(vec![
        AffinePiece { a: vec![vec![0.0]], c: vec![-holding], q: vec![holding], r: 0.0 },
        AffinePiece { a: vec![vec![0.0]], c: vec![backlog], q: vec![-backlog], r: 0.0 },
    ])
}

pub fn problem(config: &NewsvendorConfig, norm: GroundNorm) -> Result<DroProblem, ReformulateError> {
    Ok(DroProblem {
        loss: loss(config.holding, config.backlog)?,
        support: Polytope::interval(config.support[0], config.support[1])?,
        decision: DecisionModel::boxed(&[config.order[0]], &[config.order[1]]),
        norm,
        mdro_resolution: config.mdro_resolution,
    })
}

/// The `backlog / (holding + backlog)` quantile of `samples`: the exact
/// minimiser of the sample-average cost.
pub fn critical_quantile(samples: &[f64], holding: f64, backlog: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let ratio = backlog / (holding + backlog);
    let k = ((ratio * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[k - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use bnwdro::dataset::Dataset;
    use bnwdro::pipeline::{solve_method, Method, PipelineOptions};

    #[test]
    fn loss_values() {
        let g = loss(1.0, 3.0).unwrap();
        assert_eq!(g.value(&[10.0], &[7.0]), 3.0);
        assert_eq!(g.value(&[10.0], &[12.0]), 6.0);
    }

    #[test]
    fn saa_orders_the_critical_quantile() {
        let demand = [3.0, 9.0, 4.0, 12.0, 7.0, 1.0, 8.0, 5.0];
        let data = Dataset::from_scalars(&demand, "t").unwrap();
        let p = problem(&NewsvendorConfig::default(), GroundNorm::L1).unwrap();
        let sol = solve_method(&p, Method::Saa, &data, &PipelineOptions::default()).unwrap();
        let q = critical_quantile(&demand, 1.0, 3.0);
        let g = p.loss.clone();
        let avg = |x: f64| demand.iter().map(|w| g.value(&[x], &[*w])).sum::<f64>() / demand.len() as f64;
        assert!((sol.certificate - avg(q)).abs() < 1e-9);
        assert!((avg(sol.decision[0]) - avg(q)).abs() < 1e-9);
    }
}
