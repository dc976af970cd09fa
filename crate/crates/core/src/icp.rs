//! Local registration: point-to-point ICP with a closed-form Kabsch solve
//! and point-to-plane ICP with linearized least squares. Both run on
//! border-excluded clouds so the irregular coin rim cannot dominate the
//! pattern alignment.

use crate::error::{Error, Result};
use crate::geometry::{exclude_border, skew, KdTree, PointCloud, RigidTransform};
use nalgebra::{Matrix3, Matrix6, Point3, Vector3, Vector6};

/// Which per-iteration subproblem ICP solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcpVariant {
    PointToPoint,
    PointToPlane,
}

#[derive(Debug, Clone, Copy)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Incremental step below this translation norm (mm) counts toward
    /// convergence.
    pub translation_epsilon: f64,
    /// Incremental step below this rotation angle (radians) counts toward
    /// convergence.
    pub rotation_epsilon: f64,
    /// Radius of the centroid ball kept by border exclusion, mm.
    pub border_radius_mm: f64,
    pub variant: IcpVariant,
    /// Pairs farther apart than this (mm) are rejected each iteration.
    pub max_correspondence_distance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 60,
            translation_epsilon: 1e-4,
            rotation_epsilon: 1e-5,
            border_radius_mm: 8.0,
            variant: IcpVariant::PointToPlane,
            max_correspondence_distance: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RegistrationResult {
    /// Maps source onto target.
    pub transform: RigidTransform,
    /// Root-mean-square distance (mm) over the accepted correspondences
    /// under the final transform.
    pub final_rmse: f64,
    pub iterations_used: usize,
    /// True when the loop stopped because the incremental step fell below
    /// both tolerances.
    pub converged: bool,
    pub correspondences_used: usize,
}

/// Closed-form least-squares rigid alignment of matched point pairs:
/// the `(R, t)` minimizing `sum ||R s_i + t - t_i||^2` via SVD of the
/// cross-covariance, with the sign of the last singular direction corrected
/// so that `det(R) = +1`.
pub fn kabsch_solve(
    source_pts: &[Point3<f64>],
    target_pts: &[Point3<f64>],
) -> Result<RigidTransform> {
    if source_pts.len() != target_pts.len() {
        return Err(Error::DimensionMismatch {
            expected: source_pts.len(),
            got: target_pts.len(),
        });
    }
    if source_pts.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: source_pts.len(),
        });
    }
    let n = source_pts.len() as f64;
    let mut sc = Vector3::zeros();
    let mut tc = Vector3::zeros();
    for (s, t) in source_pts.iter().zip(target_pts) {
        sc += s.coords;
        tc += t.coords;
    }
    sc /= n;
    tc /= n;

    let mut h = Matrix3::zeros();
    for (s, t) in source_pts.iter().zip(target_pts) {
        let a = s.coords - sc;
        let b = t.coords - tc;
        h += a * b.transpose();
    }

    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    if sv[1] <= 1e-12 * sv[0].max(1e-300) {
        return Err(Error::DegenerateInput(
            "cross-covariance of correspondences has rank below two",
        ));
    }
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    let r = v * correction * u.transpose();
    let t = tc - r * sc;
    Ok(RigidTransform::from_parts(r, t))
}

/// Builds the 6x6 normal equations of the linearized point-to-plane
/// objective `sum ((R s_i + t - t_i) . n_i)^2` around the identity, with
/// parameters `x = [omega; t]`. Returns `(A, g)` where the minimizing step
/// solves `A x = -g`.
pub fn point_to_plane_system(
    source_pts: &[Point3<f64>],
    target_pts: &[Point3<f64>],
    target_normals: &[Vector3<f64>],
) -> (Matrix6<f64>, Vector6<f64>) {
    let mut a = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for ((s, t), n) in source_pts.iter().zip(target_pts).zip(target_normals) {
        let residual = (s.coords - t.coords).dot(n);
        let mut j = Vector6::zeros();
        let cross = s.coords.cross(n);
        j.fixed_rows_mut::<3>(0).copy_from(&cross);
        j.fixed_rows_mut::<3>(3).copy_from(n);
        a += j * j.transpose();
        g += j * residual;
    }
    (a, g)
}

/// One linearized point-to-plane solve over explicit correspondences
/// `(source index, target index)`. The small-angle solution `omega` is
/// mapped back to SO(3) through the Rodrigues formula, and weakly
/// constrained directions are held near zero motion by Tikhonov damping.
pub fn point_to_plane_step(
    source: &PointCloud,
    target: &PointCloud,
    correspondences: &[(usize, usize)],
) -> Result<RigidTransform> {
    let normals = target.normals.as_ref().ok_or(Error::MissingNormals)?;
    if correspondences.len() < 6 {
        return Err(Error::TooFewPoints {
            needed: 6,
            got: correspondences.len(),
        });
    }
    let src: Vec<Point3<f64>> = correspondences.iter().map(|&(i, _)| source.points[i]).collect();
    let tgt: Vec<Point3<f64>> = correspondences.iter().map(|&(_, j)| target.points[j]).collect();
    let nrm: Vec<Vector3<f64>> = correspondences.iter().map(|&(_, j)| normals[j]).collect();
    solve_plane_system(&src, &tgt, &nrm)
}

fn solve_plane_system(
    src: &[Point3<f64>],
    tgt: &[Point3<f64>],
    nrm: &[Vector3<f64>],
) -> Result<RigidTransform> {
    let (mut a, g) = point_to_plane_system(src, tgt, nrm);
    let trace = a.trace();
    if !trace.is_finite() || trace <= 0.0 {
        return Err(Error::SingularSystem);
    }
    // Damp the null space of flat geometry; well-posed solves are perturbed
    // at the 1e-9 level only.
    let lambda = 1e-9 * trace;
    for i in 0..6 {
        a[(i, i)] += lambda;
    }
    let sv = a.svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !smax.is_finite() || smin <= 0.0 || smax / smin > 1e12 {
        return Err(Error::SingularSystem);
    }
    let x = nalgebra::Cholesky::new(a)
        .ok_or(Error::SingularSystem)?
        .solve(&(-g));
    let omega = Vector3::new(x[0], x[1], x[2]);
    let t = Vector3::new(x[3], x[4], x[5]);
    Ok(RigidTransform::from_parts(
        RigidTransform::from_rotation_vector(omega).rotation,
        t,
    ))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IterationStats {
    pub matching_rmse: f64,
    pub post_solve_rmse: f64,
}

/// Iterative closest point: alternates nearest-neighbor matching against the
/// target with the variant's rigid solve, starting from `init`. Both clouds
/// are border-excluded with `cfg.border_radius_mm` before iterating.
pub fn icp(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    cfg: &IcpConfig,
) -> Result<RegistrationResult> {
    icp_impl(source, target, init, cfg, None)
}

pub(crate) fn icp_impl(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    cfg: &IcpConfig,
    mut trace: Option<&mut Vec<IterationStats>>,
) -> Result<RegistrationResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let src = exclude_border(source, cfg.border_radius_mm)?;
    let tgt = exclude_border(target, cfg.border_radius_mm)?;
    if cfg.variant == IcpVariant::PointToPlane && tgt.normals.is_none() {
        return Err(Error::MissingNormals);
    }
    let tree = KdTree::build(&tgt.points);
    let max_d2 = cfg.max_correspondence_distance * cfg.max_correspondence_distance;

    let mut total = *init;
    let mut iterations = 0;
    let mut converged = false;

    let mut moved: Vec<Point3<f64>> = Vec::with_capacity(src.len());
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(src.len());

    while iterations < cfg.max_iterations {
        iterations += 1;

        moved.clear();
        moved.extend(src.points.iter().map(|p| total.apply_point(p)));
        pairs.clear();
        let mut sq_sum = 0.0;
        for (i, p) in moved.iter().enumerate() {
            let (j, d2) = tree.nearest(p);
            if d2 <= max_d2 {
                pairs.push((i, j));
                sq_sum += d2;
            }
        }
        if pairs.is_empty() {
            return Err(Error::NoCorrespondences);
        }
        let matching_rmse = (sq_sum / pairs.len() as f64).sqrt();

        let step = match cfg.variant {
            IcpVariant::PointToPoint => {
                let s: Vec<Point3<f64>> = pairs.iter().map(|&(i, _)| moved[i]).collect();
                let t: Vec<Point3<f64>> = pairs.iter().map(|&(_, j)| tgt.points[j]).collect();
                kabsch_solve(&s, &t)?
            }
            IcpVariant::PointToPlane => {
                let s: Vec<Point3<f64>> = pairs.iter().map(|&(i, _)| moved[i]).collect();
                let t: Vec<Point3<f64>> = pairs.iter().map(|&(_, j)| tgt.points[j]).collect();
                let n: Vec<Vector3<f64>> = {
                    let normals = tgt.normals.as_ref().unwrap();
                    pairs.iter().map(|&(_, j)| normals[j]).collect()
                };
                solve_plane_system(&s, &t, &n)?
            }
        };
        total = step.compose(&total);

        if let Some(tr) = trace.as_deref_mut() {
            // Residual on the same correspondences after the solve, for the
            // descent-property check.
            let mut post = 0.0;
            for &(i, j) in &pairs {
                post += (step.apply_point(&moved[i]) - tgt.points[j]).norm_squared();
            }
            tr.push(IterationStats {
                matching_rmse,
                post_solve_rmse: (post / pairs.len() as f64).sqrt(),
            });
        }

        if step.translation.norm() < cfg.translation_epsilon
            && step.rotation_angle() < cfg.rotation_epsilon
        {
            converged = true;
            break;
        }
    }

    // Final statistics under the final transform.
    let mut sq_sum = 0.0;
    let mut used = 0usize;
    for p in &src.points {
        let q = total.apply_point(p);
        let (_, d2) = tree.nearest(&q);
        if d2 <= max_d2 {
            sq_sum += d2;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::NoCorrespondences);
    }
    Ok(RegistrationResult {
        transform: total,
        final_rmse: (sq_sum / used as f64).sqrt(),
        iterations_used: iterations,
        converged,
        correspondences_used: used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::apply;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect()
    }

    #[test]
    fn kabsch_identity_when_target_equals_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 40);
        let t = kabsch_solve(&pts, &pts).unwrap();
        assert!((t.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn kabsch_recovers_constructed_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = random_points(&mut rng, 50);
        let truth = RigidTransform::from_parts(
            RigidTransform::rotation_z(25f64.to_radians()).rotation,
            Vector3::new(1.0, 2.0, 0.0),
        );
        let dst: Vec<Point3<f64>> = src.iter().map(|p| truth.apply_point(p)).collect();
        let got = kabsch_solve(&src, &dst).unwrap();
        assert!((got.rotation - truth.rotation).norm() < 1e-9);
        assert!((got.translation - truth.translation).norm() < 1e-9);
    }

    #[test]
    fn kabsch_rejects_collinear_input() {
        let src: Vec<Point3<f64>> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let dst = src.clone();
        assert!(matches!(
            kabsch_solve(&src, &dst),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn kabsch_never_returns_a_reflection() {
        // Near-planar points with a mirrored target invite an improper
        // solution; the solver must return the best proper rotation instead.
        // Oracle: exhaustive scan over in-plane rotation angles.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src: Vec<Point3<f64>> = (0..60)
            .map(|_| {
                Point3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-1e-6..1e-6),
                )
            })
            .collect();
        let dst: Vec<Point3<f64>> = src.iter().map(|p| Point3::new(p.x, -p.y, p.z)).collect();
        let got = kabsch_solve(&src, &dst).unwrap();
        assert!(got.rotation.determinant() > 0.0);

        let residual = |t: &RigidTransform| -> f64 {
            src.iter()
                .zip(&dst)
                .map(|(s, d)| (t.apply_point(s) - d).norm_squared())
                .sum()
        };
        let got_res = residual(&got);
        let mut best_scan = f64::INFINITY;
        for k in 0..=72_000 {
            let angle = -std::f64::consts::PI + k as f64 * (std::f64::consts::TAU / 72_000.0);
            let r = RigidTransform::rotation_z(angle);
            // Optimal translation for a fixed rotation aligns the centroids.
            let sc: Vector3<f64> =
                src.iter().map(|p| p.coords).sum::<Vector3<f64>>() / src.len() as f64;
            let dc: Vector3<f64> =
                dst.iter().map(|p| p.coords).sum::<Vector3<f64>>() / dst.len() as f64;
            let t = RigidTransform::from_parts(r.rotation, dc - r.rotation * sc);
            best_scan = best_scan.min(residual(&t));
        }
        assert!(
            got_res <= best_scan + 1e-9,
            "kabsch {got_res} vs scan {best_scan}"
        );
    }

    #[test]
    fn kabsch_beats_random_candidates() {
        // Spot check of global optimality on fixed correspondences.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = random_points(&mut rng, 30);
        let dst: Vec<Point3<f64>> = src
            .iter()
            .map(|p| {
                Point3::new(
                    p.x + rng.random_range(-0.5..0.5),
                    p.y + rng.random_range(-0.5..0.5),
                    p.z + rng.random_range(-0.5..0.5),
                )
            })
            .collect();
        let got = kabsch_solve(&src, &dst).unwrap();
        let residual = |t: &RigidTransform| -> f64 {
            src.iter()
                .zip(&dst)
                .map(|(s, d)| (t.apply_point(s) - d).norm_squared())
                .sum()
        };
        let got_res = residual(&got);
        for _ in 0..1000 {
            let omega = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let cand = RigidTransform::from_parts(
                RigidTransform::from_rotation_vector(omega).rotation,
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                ),
            );
            assert!(residual(&cand) + 1e-12 >= got_res);
        }
    }

    fn plane_cloud_with_normals(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point3<f64>> = (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    0.0,
                )
            })
            .collect();
        let normals = vec![Vector3::z(); n];
        PointCloud::new(pts, "plane")
            .unwrap()
            .with_normals(normals)
            .unwrap()
    }

    #[test]
    fn plane_step_identity_when_aligned() {
        let target = plane_cloud_with_normals(100, 5);
        let source = PointCloud::new(target.points.clone(), "src").unwrap();
        let pairs: Vec<(usize, usize)> = (0..100).map(|i| (i, i)).collect();
        let step = point_to_plane_step(&source, &target, &pairs).unwrap();
        assert!(step.translation.norm() < 1e-12);
        assert!(step.rotation_angle() < 1e-12);
    }

    #[test]
    fn plane_step_recovers_normal_offset() {
        // Source floats 0.3 mm above the plane; the analytic solution is a
        // pure -z translation.
        let target = plane_cloud_with_normals(100, 6);
        let src_pts: Vec<Point3<f64>> = target
            .points
            .iter()
            .map(|p| Point3::new(p.x, p.y, p.z + 0.3))
            .collect();
        let source = PointCloud::new(src_pts, "src").unwrap();
        let pairs: Vec<(usize, usize)> = (0..100).map(|i| (i, i)).collect();
        let step = point_to_plane_step(&source, &target, &pairs).unwrap();
        assert_relative_eq!(step.translation.z, -0.3, epsilon = 1e-9);
        assert!(step.translation.xy().norm() < 1e-9);
        assert!(step.rotation_angle() < 1e-9);
    }

    #[test]
    fn plane_step_damps_unconstrained_directions() {
        // In-plane translation of a flat target lies in the null space of
        // the 6x6 system; the damped solve must return essentially zero
        // motion rather than blowing up.
        let target = plane_cloud_with_normals(100, 7);
        let src_pts: Vec<Point3<f64>> = target
            .points
            .iter()
            .map(|p| Point3::new(p.x + 1.5, p.y - 0.7, p.z))
            .collect();
        let source = PointCloud::new(src_pts, "src").unwrap();
        let pairs: Vec<(usize, usize)> = (0..100).map(|i| (i, i)).collect();
        let step = point_to_plane_step(&source, &target, &pairs).unwrap();
        assert!(step.translation.norm() < 1e-6, "{:?}", step.translation);
        assert!(step.rotation_angle() < 1e-6);
    }

    #[test]
    fn plane_step_requires_six_pairs() {
        let target = plane_cloud_with_normals(10, 8);
        let source = PointCloud::new(target.points.clone(), "src").unwrap();
        let pairs: Vec<(usize, usize)> = (0..5).map(|i| (i, i)).collect();
        assert!(matches!(
            point_to_plane_step(&source, &target, &pairs),
            Err(Error::TooFewPoints { .. })
        ));
    }

    /// Bumpy disc used by the loop tests; see `synth` for the full coin
    /// generator (this one is deliberately minimal).
    fn bumpy_disc(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point3<f64>> = (0..n)
            .map(|_| {
                let r = 10.0 * rng.random_range(0.0f64..1.0).sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let (x, y) = (r * a.cos(), r * a.sin());
                let z = 0.4 * ((x * 0.8).sin() * (y * 0.7).cos() + (x * 0.3 + y * 0.5).sin());
                Point3::new(x, y, z)
            })
            .collect();
        PointCloud::new(pts, format!("disc{seed}")).unwrap()
    }

    #[test]
    fn icp_identity_on_identical_clouds() {
        let cloud = bumpy_disc(9, 3000);
        let cloud_n = crate::geometry::estimate_normals(&cloud, 12).unwrap();
        let res = icp(
            &cloud_n,
            &cloud_n,
            &RigidTransform::identity(),
            &IcpConfig::default(),
        )
        .unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations_used, 1);
        assert!(res.final_rmse < 1e-9, "rmse {}", res.final_rmse);
    }

    #[test]
    fn icp_point_to_point_descends_monotonically() {
        // Classic ICP descent: with rejection disabled, the post-solve
        // residual in each iteration cannot exceed the matching residual.
        let target = bumpy_disc(10, 2500);
        let offset = RigidTransform::from_parts(
            RigidTransform::rotation_z(4f64.to_radians()).rotation,
            Vector3::new(0.8, -0.5, 0.1),
        );
        let source = apply(&offset.inverse(), &target);
        let cfg = IcpConfig {
            variant: IcpVariant::PointToPoint,
            max_correspondence_distance: f64::INFINITY,
            border_radius_mm: 100.0,
            max_iterations: 25,
            ..IcpConfig::default()
        };
        let mut trace = Vec::new();
        let _ = icp_impl(
            &source,
            &target,
            &RigidTransform::identity(),
            &cfg,
            Some(&mut trace),
        )
        .unwrap();
        assert!(trace.len() > 1);
        for step in &trace {
            assert!(
                step.post_solve_rmse <= step.matching_rmse + 1e-12,
                "solve increased the residual: {step:?}"
            );
        }
    }

    #[test]
    fn icp_plane_one_step_halves_plane_residual() {
        // Linearization sanity: a single plane solve on a small-angle
        // perturbation removes at least half of the projected residual.
        let target = crate::geometry::estimate_normals(&bumpy_disc(11, 4000), 16).unwrap();
        let offset = RigidTransform::from_parts(
            RigidTransform::rotation_z(2f64.to_radians()).rotation,
            Vector3::new(0.3, 0.2, 0.05),
        );
        let source = apply(&offset.inverse(), &target);

        let plane_residual = |t: &RigidTransform| -> f64 {
            let tree = KdTree::build(&target.points);
            let normals = target.normals.as_ref().unwrap();
            source
                .points
                .iter()
                .map(|p| {
                    let q = t.apply_point(p);
                    let (j, _) = tree.nearest(&q);
                    let r = (q.coords - target.points[j].coords).dot(&normals[j]);
                    r * r
                })
                .sum()
        };

        let cfg = IcpConfig {
            max_iterations: 1,
            border_radius_mm: 100.0,
            ..IcpConfig::default()
        };
        let res = icp(&source, &target, &RigidTransform::identity(), &cfg).unwrap();
        let before = plane_residual(&RigidTransform::identity());
        let after = plane_residual(&res.transform);
        assert!(
            after <= 0.5 * before,
            "plane residual {before} -> {after} (reduction below 50%)"
        );
    }

    #[test]
    fn icp_errors_when_everything_is_rejected() {
        let a = bumpy_disc(12, 500);
        let mut far = a.clone();
        for p in &mut far.points {
            p.z += 500.0;
        }
        let cfg = IcpConfig {
            variant: IcpVariant::PointToPoint,
            border_radius_mm: 100.0,
            ..IcpConfig::default()
        };
        assert!(matches!(
            icp(&a, &far, &RigidTransform::identity(), &cfg),
            Err(Error::NoCorrespondences)
        ));
    }
}
