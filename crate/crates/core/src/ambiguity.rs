//! Radius calibration and the BNWDRO / WDRO / MDRO ambiguity sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{empirical, Atom, Dataset, DiscreteDistribution};
use crate::dpmm::Clustering;

const Z_MIN: f64 = 1e-6;
const Z_MAX: f64 = 1e6;

#[derive(Debug, Error, PartialEq)]
pub enum AmbiguityError {
    #[error("confidence level {0} must lie strictly between 0 and 1")]
    DegenerateBeta(f64),
    #[error("cannot calibrate a radius for an empty cluster")]
    EmptyCluster,
    #[error("clustering does not partition the {0} dataset rows")]
    BadClustering(usize),
    #[error("operation needs a BNWDRO set")]
    WrongVariant,
}

/// Transport cost norm on the uncertainty space. The dual norm used in the
/// reformulations is paired automatically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundNorm {
    #[default]
    L1,
    Linf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalBall {
    pub center: DiscreteDistribution,
    pub radius: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AmbiguitySet {
    Bnwdro {
        balls: Vec<LocalBall>,
    },
    Wdro {
        center: DiscreteDistribution,
        radius: f64,
    },
    Mdro {
        mean: Vec<f64>,
        second_moment: Vec<Vec<f64>>,
    },
}

impl AmbiguitySet {
    /// The Wasserstein-family set as a list of weighted balls; a WDRO set is
    /// a single ball of weight one. `None` for MDRO.
    pub fn balls(&self) -> Option<Vec<LocalBall>> {
        match self {
            Self::Bnwdro { balls } => Some(balls.clone()),
            Self::Wdro { center, radius } => Some(vec![LocalBall {
                center: center.clone(),
                radius: *radius,
                weight: 1.0,
            }]),
            Self::Mdro { .. } => None,
        }
    }

    /// Same set with every Wasserstein radius replaced by `radius`.
    pub fn with_radius(&self, radius: f64) -> Self {
        match self {
            Self::Bnwdro { balls } => Self::Bnwdro {
                balls: balls
                    .iter()
                    .map(|b| LocalBall {
                        radius,
                        ..b.clone()
                    })
                    .collect(),
            },
            Self::Wdro { center, .. } => Self::Wdro {
                center: center.clone(),
                radius,
            },
            Self::Mdro { .. } => self.clone(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Bnwdro { .. } => "bnwdro",
            Self::Wdro { .. } => "wdro",
            Self::Mdro { .. } => "mdro",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichRadii {
    pub theta_lower: f64,
    pub theta_upper: f64,
}

/// `sqrt(ln(1/(1-β)) / n)`, the sample-size factor of the radius.
pub fn radius_factor(beta: f64, n: usize) -> Result<f64, AmbiguityError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(AmbiguityError::DegenerateBeta(beta));
    }
    Ok((-(-beta).ln_1p() / n as f64).sqrt())
}

/// The data-dependent constant
/// `C = 2 inf_z sqrt((1 + ln mean_l exp(z ‖ŵ_l − μ̂‖₁²)) / (2z))`,
/// with the infimum taken by golden-section search over `ln z` on a bounded
/// bracket. The objective is quasi-convex in `z`, so the search is exact up
/// to the bracket.
pub fn radius_constant(points: &[&[f64]]) -> Result<f64, AmbiguityError> {
    let n = points.len();
    if n == 0 {
        return Err(AmbiguityError::EmptyCluster);
    }
    let m = points[0].len();
    let mut mean = vec![0.0; m];
    for p in points {
        mean.iter_mut().zip(p.iter()).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= n as f64);
    let sq: Vec<f64> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(v, a)| (v - a).abs()).sum::<f64>().powi(2))
        .collect();
    let top = sq.iter().copied().fold(0.0, f64::max);
    let objective = |u: f64| {
        let z = u.exp();
        let lse = z * top + (sq.iter().map(|&s| (z * (s - top)).exp()).sum::<f64>() / n as f64).ln();
        (1.0 + lse) / (2.0 * z)
    };

    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (Z_MIN.ln(), Z_MAX.ln());
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while b - a > 1e-9 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = objective(d);
        }
    }
    let best = [objective(Z_MIN.ln()), objective(Z_MAX.ln()), fc, fd]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(2.0 * best.max(0.0).sqrt())
}

/// Wasserstein radius of a cluster at confidence level `beta`.
pub fn calibrate_radius(points: &[&[f64]], beta: f64) -> Result<f64, AmbiguityError> {
    let factor = radius_factor(beta, points.len().max(1))?;
    Ok(radius_constant(points)? * factor)
}

fn uniform(points: &[&[f64]]) -> DiscreteDistribution {
    let w = 1.0 / points.len() as f64;
    DiscreteDistribution {
        atoms: points
            .iter()
            .map(|p| Atom {
                point: p.to_vec(),
                weight: w,
            })
            .collect(),
    }
}

pub fn build_bnwdro(dataset: &Dataset, clustering: &Clustering, beta: f64) -> Result<AmbiguitySet, AmbiguityError> {
    radius_factor(beta, 1)?;
    let n = dataset.len();
    let mut seen = vec![false; n];
    for &i in clustering.clusters.iter().flatten() {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(AmbiguityError::BadClustering(n));
        }
    }
    if seen.iter().any(|s| !s) || clustering.clusters.iter().any(Vec::is_empty) {
        return Err(AmbiguityError::BadClustering(n));
    }
    let balls = clustering
        .clusters
        .par_iter()
        .map(|rows| {
            let points: Vec<&[f64]> = rows.iter().map(|&i| dataset.row(i)).collect();
            Ok(LocalBall {
                radius: calibrate_radius(&points, beta)?,
                center: uniform(&points),
                weight: rows.len() as f64 / n as f64,
            })
        })
        .collect::<Result<Vec<_>, AmbiguityError>>()?;
    Ok(AmbiguitySet::Bnwdro { balls })
}

pub fn build_wdro(dataset: &Dataset, beta: f64) -> Result<AmbiguitySet, AmbiguityError> {
    let points: Vec<&[f64]> = dataset.rows().collect();
    Ok(AmbiguitySet::Wdro {
        radius: calibrate_radius(&points, beta)?,
        center: empirical(dataset),
    })
}

pub fn build_mdro(dataset: &Dataset) -> AmbiguitySet {
    AmbiguitySet::Mdro {
        mean: dataset.column_means(),
        second_moment: dataset.central_second_moment(),
    }
}

pub fn sandwich_radii(set: &AmbiguitySet) -> Result<SandwichRadii, AmbiguityError> {
    let AmbiguitySet::Bnwdro { balls } = set else {
        return Err(AmbiguityError::WrongVariant);
    };
    Ok(SandwichRadii {
        theta_lower: balls.iter().map(|b| b.weight * b.radius).fold(f64::INFINITY, f64::min),
        theta_upper: balls.iter().map(|b| b.radius).fold(0.0, f64::max),
    })
}

/// Formats a radius with twelve significant digits.
pub fn format_radius(theta: f64) -> String {
    format!("{theta:.11e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpmm::partition;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn identical_points_give_tiny_radius() {
        let p = pts(&[3.0; 10]);
        let c = radius_constant(&refs(&p)).unwrap();
        assert!(c <= 2.0 * (1.0 / 2e6f64).sqrt() + 1e-12);
        assert!(calibrate_radius(&refs(&p), 0.95).unwrap() < 1e-2);
    }

    #[test]
    fn two_point_constant() {
        let p = pts(&[0.0, 2.0]);
        assert!((radius_constant(&refs(&p)).unwrap() - 2f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn beta_errors_and_monotonicity() {
        let p = pts(&[0.0, 1.0, 3.0]);
        assert_eq!(calibrate_radius(&refs(&p), 1.0), Err(AmbiguityError::DegenerateBeta(1.0)));
        assert_eq!(calibrate_radius(&refs(&p), 0.0), Err(AmbiguityError::DegenerateBeta(0.0)));
        let a = calibrate_radius(&refs(&p), 0.9).unwrap();
        let b = calibrate_radius(&refs(&p), 0.99).unwrap();
        assert!(b > a);
    }

    #[test]
    fn sandwich_examples() {
        let ball = |w: f64, r: f64| LocalBall {
            center: DiscreteDistribution {
                atoms: vec![Atom {
                    point: vec![0.0],
                    weight: 1.0,
                }],
            },
            radius: r,
            weight: w,
        };
        let one = AmbiguitySet::Bnwdro {
            balls: vec![ball(1.0, 0.3)],
        };
        assert_eq!(
            sandwich_radii(&one).unwrap(),
            SandwichRadii {
                theta_lower: 0.3,
                theta_upper: 0.3
            }
        );
        let two = AmbiguitySet::Bnwdro {
            balls: vec![ball(0.5, 0.1), ball(0.5, 0.3)],
        };
        let s = sandwich_radii(&two).unwrap();
        assert!((s.theta_lower - 0.05).abs() < 1e-15 && s.theta_upper == 0.3);
        let data = Dataset::from_scalars(&[1.0], "x").unwrap();
        assert_eq!(sandwich_radii(&build_mdro(&data)), Err(AmbiguityError::WrongVariant));
    }

    #[test]
    fn single_cluster_matches_wdro() {
        let data = Dataset::from_scalars(&[0.3, 1.7, 2.2, -0.4], "x").unwrap();
        let c = partition(4, &[0, 0, 0, 0]);
        let b = build_bnwdro(&data, &c, 0.95).unwrap();
        let w = build_wdro(&data, 0.95).unwrap();
        assert_eq!(b.balls(), w.balls());
    }

    #[test]
    fn singleton_clusters() {
        let data = Dataset::from_scalars(&[0.0, 1.0], "x").unwrap();
        let set = build_bnwdro(&data, &partition(2, &[0, 1]), 0.95).unwrap();
        let balls = set.balls().unwrap();
        assert_eq!(balls.len(), 2);
        for b in balls {
            assert_eq!(b.weight, 0.5);
            assert!(b.radius < 1e-2);
        }
    }

    #[test]
    fn mdro_moments() {
        let data = Dataset::from_scalars(&[-1.0, 1.0], "x").unwrap();
        assert_eq!(
            build_mdro(&data),
            AmbiguitySet::Mdro {
                mean: vec![0.0],
                second_moment: vec![vec![1.0]]
            }
        );
    }

    #[test]
    fn serializes_with_kind_tag() {
        let data = Dataset::from_scalars(&[2.0], "x").unwrap();
        let json = serde_json::to_string(&build_mdro(&data)).unwrap();
        assert!(json.starts_with(r#"{"kind":"mdro""#), "{json}");
        assert_eq!(format_radius(0.123456789012345), "1.23456789012e-1");
    }
}
