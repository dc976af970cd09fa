//! Per-point normal estimation by local PCA.

use super::{KdTree, PointCloud};
use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};

/// Estimates a unit normal per point from the covariance of its `k` nearest
/// neighbors (the point itself included). Normals are oriented toward +z,
/// matching clouds scanned one face up; exact in-plane ties are oriented
/// toward +x, then +y. Rank-deficient neighborhoods (collinear points) fall
/// back to +z.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    if k < 3 {
        return Err(Error::InvalidArgument("k must be at least 3".into()));
    }
    if cloud.len() < k + 1 {
        return Err(Error::TooFewPoints {
            needed: k + 1,
            got: cloud.len(),
        });
    }

    let tree = KdTree::build(&cloud.points);
    let mut normals = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let hood = tree.k_nearest(p, k + 1);
        let mut mean = Vector3::zeros();
        for &(i, _) in &hood {
            mean += cloud.points[i].coords;
        }
        mean /= hood.len() as f64;
        let mut cov = Matrix3::zeros();
        for &(i, _) in &hood {
            let d = cloud.points[i].coords - mean;
            cov += d * d.transpose();
        }
        cov /= hood.len() as f64;
        normals.push(orient(smallest_eigenvector(&cov)));
    }
    let mut out = cloud.clone();
    out.normals = Some(normals);
    Ok(out)
}

/// Eigenvector of the smallest eigenvalue, or `None` when the neighborhood
/// does not span a plane (two vanishing eigenvalues).
fn smallest_eigenvector(cov: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let eig = nalgebra::SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let [lo, mid, hi] = order;
    let lambda_max = eig.eigenvalues[hi].abs();
    if lambda_max <= 0.0 || eig.eigenvalues[mid].abs() <= 1e-12 * lambda_max {
        return None;
    }
    Some(eig.eigenvectors.column(lo).into_owned().normalize())
}

fn orient(n: Option<Vector3<f64>>) -> Vector3<f64> {
    let Some(n) = n else {
        return Vector3::z();
    };
    const TIE: f64 = 1e-9;
    if n.z > TIE {
        n
    } else if n.z < -TIE {
        -n
    } else if n.x > TIE {
        n
    } else if n.x < -TIE {
        -n
    } else if n.y >= 0.0 {
        n
    } else {
        -n
    }
}
