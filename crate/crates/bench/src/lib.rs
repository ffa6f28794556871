//! Shared fixtures for the benchmarks.

use ppr_core::constraints::{GrfConstraint, GrfHyper};
use ppr_core::rng;
use ppr_core::{DenoiserNet, NetConfig, PointCloud};

/// Untrained denoiser with the two-dimensional study's architecture.
pub fn data2d_net() -> DenoiserNet {
    DenoiserNet::new(NetConfig::new(2, vec![64; 4]), &mut rng::seeded(0)).expect("valid config")
}

pub fn grf() -> GrfConstraint {
    GrfConstraint::sample(&GrfHyper::default(), &mut rng::seeded(1)).expect("valid hyperparameters")
}

pub fn gaussian_cloud(n: usize, dim: usize, seed: u64) -> PointCloud {
    PointCloud::new(dim, rng::normal_vec(&mut rng::seeded(seed), n * dim)).expect("sized data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ppr_core::{Constraint, Denoiser};

    #[test]
    fn fixtures_are_usable() {
        let cloud = gaussian_cloud(4, 2, 0);
        assert_eq!(cloud.len(), 4);
        let net = data2d_net();
        assert_eq!(net.denoise(cloud.row(0), 1.0).unwrap().len(), 2);
        assert!(grf().eval(cloud.row(1)).unwrap() >= 0.0);
    }
}
