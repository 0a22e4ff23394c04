//! Finite direction families standing in for "sup over all unit v".

use crate::empirical::{weighted_covariance, Direction, EmpiricalDist};
use crate::linalg::top_eigenpairs;
use crate::rng::{random_unit_vector, RngSeed};

pub const DEFAULT_RANDOM_DIRECTIONS: usize = 256;
pub const DEFAULT_EIGEN_DIRECTIONS: usize = 3;

pub fn random_directions(d: usize, k: usize, seed: RngSeed) -> Vec<Direction> {
    let mut rng = seed.rng();
    (0..k)
        .map(|_| Direction::new(random_unit_vector(&mut rng, d)).expect("unit vector"))
        .collect()
}

pub fn axes(d: usize) -> Vec<Direction> {
    (0..d).map(|j| Direction::axis(d, j)).collect()
}

/// `k` seeded random directions, the coordinate axes, and the top covariance
/// eigenvectors of `p`. In one dimension this is just `{+1}`.
pub fn default_directions(p: &EmpiricalDist, k: usize, seed: RngSeed) -> Vec<Direction> {
    let d = p.dim();
    if d == 1 {
        return vec![Direction::axis(1, 0)];
    }
    let mut dirs = random_directions(d, k, seed);
    dirs.extend(axes(d));
    let cov = weighted_covariance(p);
    if let Ok(pairs) = top_eigenpairs(&cov, DEFAULT_EIGEN_DIRECTIONS, 1e-9) {
        dirs.extend(pairs.into_iter().map(|(_, v)| v));
    }
    dirs
}

/// Each direction together with its negation.
pub fn symmetrized(dirs: &[Direction]) -> Vec<Direction> {
    dirs.iter().flat_map(|v| [v.clone(), v.negated()]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_family_composition() {
        let p = EmpiricalDist::uniform_rows(&[
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.0, -1.0],
            vec![3.0, 3.0, 0.5],
        ])
        .unwrap();
        let dirs = default_directions(&p, 10, RngSeed(1));
        assert_eq!(dirs.len(), 10 + 3 + 3);
        for v in &dirs {
            let n: f64 = v.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-10);
        }
        assert_eq!(dirs, default_directions(&p, 10, RngSeed(1)));
    }

    #[test]
    fn one_dimensional_family_is_identity() {
        let p = EmpiricalDist::uniform_1d(&[1.0, 2.0]).unwrap();
        assert_eq!(
            default_directions(&p, 256, RngSeed(0)),
            vec![Direction::axis(1, 0)]
        );
        assert_eq!(symmetrized(&[Direction::axis(1, 0)]).len(), 2);
    }
}
