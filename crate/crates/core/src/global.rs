//! Initialization-free alignment: multi-start local ICP over the reduced
//! 3-DOF pose space of flat objects (rotation about z, translation in the
//! coin plane), with random-search and grid-search strategies.

use crate::error::{Error, Result};
use crate::geometry::{apply, PointCloud, RigidTransform};
use crate::icp::{icp, IcpConfig, RegistrationResult};
use crate::seed;
use nalgebra::{Matrix3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Pose space searched after canonicalization: one rotation about z and a
/// square of in-plane translations, both symmetric about zero.
#[derive(Debug, Clone, Copy)]
pub struct SearchSpace3Dof {
    /// Rotations drawn from `[-rotation_limit, rotation_limit]` radians.
    pub rotation_limit: f64,
    /// Translations drawn from `[-translation_limit, translation_limit]^2`
    /// mm in x and y.
    pub translation_limit: f64,
}

impl Default for SearchSpace3Dof {
    fn default() -> Self {
        Self {
            rotation_limit: std::f64::consts::PI,
            translation_limit: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalStrategy {
    RandomSearch,
    GridSearch,
}

#[derive(Debug, Clone, Copy)]
pub struct GlobalConfig {
    pub strategy: GlobalStrategy,
    /// Number of random trials. Ignored for grid search, whose trial count
    /// is the product of `grid_shape`.
    pub trials: usize,
    /// (angles, x steps, y steps) of the grid-search lattice.
    pub grid_shape: (usize, usize, usize),
    pub rng_seed: u64,
    pub search_space: SearchSpace3Dof,
    pub icp: IcpConfig,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            strategy: GlobalStrategy::RandomSearch,
            trials: 100,
            // 12 x 3 x 3 = 108 poses, comparable to one hundred random
            // trials.
            grid_shape: (12, 3, 3),
            rng_seed: 0,
            search_space: SearchSpace3Dof::default(),
            icp: IcpConfig::default(),
        }
    }
}

impl GlobalConfig {
    pub fn trial_count(&self) -> usize {
        match self.strategy {
            GlobalStrategy::RandomSearch => self.trials,
            GlobalStrategy::GridSearch => self.grid_shape.0 * self.grid_shape.1 * self.grid_shape.2,
        }
    }
}

/// Outcome of one multi-start trial, kept for reporting and tests.
#[derive(Debug, Clone, Copy)]
pub struct TrialSummary {
    pub index: usize,
    pub init: RigidTransform,
    /// Final rmse of the trial, `None` when the trial failed.
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GlobalOutcome {
    pub best: RegistrationResult,
    pub trials: Vec<TrialSummary>,
}

/// Centers the cloud on the origin and rotates its smallest-covariance
/// eigenvector (the face normal) onto +z, so that "rotation about z" is
/// meaningful for arbitrarily posed scans. Returns the canonicalized cloud
/// together with the canonicalizing transform.
pub fn canonicalize_pose(cloud: &PointCloud) -> Result<(PointCloud, RigidTransform)> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let c = cloud.centroid();
    let mut cov = Matrix3::zeros();
    for p in &cloud.points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    cov /= cloud.len() as f64;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let [lo, mid, hi] = order;
    if eig.eigenvalues[hi] <= 0.0 || eig.eigenvalues[mid] <= 1e-12 * eig.eigenvalues[hi] {
        return Err(Error::DegenerateInput("cloud covariance has rank below two"));
    }
    let mut normal = eig.eigenvectors.column(lo).into_owned().normalize();
    // Faces are scanned up; keep the normal in the upper hemisphere.
    if normal.z < 0.0 {
        normal = -normal;
    }
    let rotation = rotation_to_z(&normal);
    let t = RigidTransform::from_parts(rotation, -(rotation * c));
    Ok((apply(&t, cloud), t))
}

/// Shortest rotation mapping `n` (unit) onto +z.
fn rotation_to_z(n: &Vector3<f64>) -> Matrix3<f64> {
    let z = Vector3::z();
    let c = n.dot(&z).clamp(-1.0, 1.0);
    let axis = n.cross(&z);
    let s = axis.norm();
    if s < 1e-12 {
        if c > 0.0 {
            return Matrix3::identity();
        }
        // n == -z: rotate half a turn about x.
        return nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
            .into_inner();
    }
    nalgebra::Rotation3::from_axis_angle(&Unit::new_normalize(axis), s.atan2(c)).into_inner()
}

/// Initial poses for the configured strategy, in the canonical frame.
pub fn initial_poses(cfg: &GlobalConfig) -> Vec<RigidTransform> {
    let space = cfg.search_space;
    match cfg.strategy {
        GlobalStrategy::RandomSearch => (0..cfg.trials)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.rng_seed, i as u64));
                let theta = rng.random_range(-space.rotation_limit..=space.rotation_limit);
                let tx = rng.random_range(-space.translation_limit..=space.translation_limit);
                let ty = rng.random_range(-space.translation_limit..=space.translation_limit);
                pose_3dof(theta, tx, ty)
            })
            .collect(),
        GlobalStrategy::GridSearch => {
            let (na, nx, ny) = cfg.grid_shape;
            let mut poses = Vec::with_capacity(na * nx * ny);
            for ia in 0..na {
                // The angle range is cyclic; an endpoint-inclusive lattice
                // would duplicate -pi and +pi.
                let theta =
                    -space.rotation_limit + ia as f64 * (2.0 * space.rotation_limit / na as f64);
                for ix in 0..nx {
                    let tx = lattice(ix, nx, space.translation_limit);
                    for iy in 0..ny {
                        let ty = lattice(iy, ny, space.translation_limit);
                        poses.push(pose_3dof(theta, tx, ty));
                    }
                }
            }
            poses
        }
    }
}

fn lattice(i: usize, n: usize, limit: f64) -> f64 {
    if n == 1 {
        0.0
    } else {
        -limit + i as f64 * (2.0 * limit / (n - 1) as f64)
    }
}

fn pose_3dof(theta: f64, tx: f64, ty: f64) -> RigidTransform {
    RigidTransform::from_parts(
        RigidTransform::rotation_z(theta).rotation,
        Vector3::new(tx, ty, 0.0),
    )
}

/// Multi-start registration: canonicalizes both clouds, runs local ICP from
/// every initial pose, and returns the trial with the lowest final rmse
/// (ties broken by lowest trial index). The result maps the original source
/// frame onto the original target frame. Deterministic given `rng_seed`;
/// trials run in parallel.
pub fn global_register(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &GlobalConfig,
) -> Result<RegistrationResult> {
    Ok(global_register_detailed(source, target, cfg)?.best)
}

/// [`global_register`], also reporting every trial.
pub fn global_register_detailed(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &GlobalConfig,
) -> Result<GlobalOutcome> {
    let (src_c, t_src) = canonicalize_pose(source)?;
    let (tgt_c, t_tgt) = canonicalize_pose(target)?;
    let poses = initial_poses(cfg);
    if poses.is_empty() {
        return Err(Error::InvalidArgument("at least one trial required".into()));
    }

    let results: Vec<Option<RegistrationResult>> = poses
        .par_iter()
        .map(|init| icp(&src_c, &tgt_c, init, &cfg.icp).ok())
        .collect();

    let trials: Vec<TrialSummary> = poses
        .iter()
        .zip(&results)
        .enumerate()
        .map(|(index, (init, res))| TrialSummary {
            index,
            init: *init,
            rmse: res.as_ref().map(|r| r.final_rmse),
        })
        .collect();

    let mut best: Option<(usize, RegistrationResult)> = None;
    for (i, res) in results.iter().enumerate() {
        if let Some(r) = res {
            let better = match &best {
                None => true,
                Some((_, b)) => r.final_rmse < b.final_rmse,
            };
            if better {
                best = Some((i, *r));
            }
        }
    }
    let (_, mut winner) = best.ok_or(Error::AllTrialsFailed)?;
    // Express the winner in the original frames.
    winner.transform = t_tgt
        .inverse()
        .compose(&winner.transform)
        .compose(&t_src);
    Ok(GlobalOutcome {
        best: winner,
        trials,
    })
}
