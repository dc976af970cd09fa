//! Point clouds, rigid transforms, and the preprocessing that makes
//! registration pattern-aware (border exclusion, normal estimation).

mod kdtree;
mod normals;
mod transform;

pub use kdtree::{nearest_linear, KdTree};
pub use normals::estimate_normals;
pub use transform::RigidTransform;

pub(crate) use transform::skew;

use crate::error::{Error, Result};
use nalgebra::{Point3, Vector3};

/// One scanned face of a coin: positions in millimetres plus optional unit
/// normals, tagged with an opaque coin identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>, id: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(
                "point coordinates must be finite".into(),
            ));
        }
        Ok(Self {
            points,
            normals: None,
            id: id.into(),
        })
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != self.points.len() {
            return Err(Error::DimensionMismatch {
                expected: self.points.len(),
                got: normals.len(),
            });
        }
        if normals.iter().any(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::InvalidArgument(
                "normals must have unit length".into(),
            ));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Arithmetic mean of the positions.
    pub fn centroid(&self) -> Vector3<f64> {
        let mut sum = Vector3::zeros();
        for p in &self.points {
            sum += p.coords;
        }
        sum / self.points.len() as f64
    }
}

/// Maps every point to `R p + t`; normals are rotated, the id is kept.
pub fn apply(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.apply_point(p)).collect(),
        normals: cloud
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| t.apply_vector(n)).collect()),
        id: cloud.id.clone(),
    }
}

/// Keeps the points within `radius_mm` of the cloud centroid. The coin rim
/// carries no pattern, so registration runs on this central ball.
///
/// Point order is preserved and normals are filtered in lockstep. Fails with
/// [`Error::EmptyResult`] when nothing survives; callers treat that as a
/// registration failure.
pub fn exclude_border(cloud: &PointCloud, radius_mm: f64) -> Result<PointCloud> {
    exclude_border_about(cloud, &cloud.centroid(), radius_mm)
}

/// [`exclude_border`] with an explicit reference center, for callers that
/// recorded the centroid of the original cloud.
pub fn exclude_border_about(
    cloud: &PointCloud,
    center: &Vector3<f64>,
    radius_mm: f64,
) -> Result<PointCloud> {
    if radius_mm <= 0.0 {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let r2 = radius_mm * radius_mm;
    let keep: Vec<bool> = cloud
        .points
        .iter()
        .map(|p| (p.coords - center).norm_squared() <= r2)
        .collect();
    let points: Vec<Point3<f64>> = cloud
        .points
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(p, _)| *p)
        .collect();
    if points.is_empty() {
        return Err(Error::EmptyResult);
    }
    let normals = cloud.normals.as_ref().map(|ns| {
        ns.iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(n, _)| *n)
            .collect()
    });
    Ok(PointCloud {
        points,
        normals,
        id: cloud.id.clone(),
    })
}

/// Deterministic voxel-grid downsampling: points are bucketed into cubes of
/// `voxel_mm` and replaced by the bucket centroid. Output is ordered by
/// voxel key, so the result does not depend on input order beyond content.
pub fn voxel_downsample(cloud: &PointCloud, voxel_mm: f64) -> Result<PointCloud> {
    if voxel_mm <= 0.0 {
        return Err(Error::InvalidArgument("voxel size must be positive".into()));
    }
    use std::collections::BTreeMap;
    let mut cells: BTreeMap<(i64, i64, i64), (Vector3<f64>, Vector3<f64>, usize)> = BTreeMap::new();
    let has_normals = cloud.normals.is_some();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = (
            (p.x / voxel_mm).floor() as i64,
            (p.y / voxel_mm).floor() as i64,
            (p.z / voxel_mm).floor() as i64,
        );
        let entry = cells
            .entry(key)
            .or_insert((Vector3::zeros(), Vector3::zeros(), 0));
        entry.0 += p.coords;
        if let Some(ns) = &cloud.normals {
            entry.1 += ns[i];
        }
        entry.2 += 1;
    }
    let mut points = Vec::with_capacity(cells.len());
    let mut normals = Vec::with_capacity(if has_normals { cells.len() } else { 0 });
    for (_, (psum, nsum, count)) in cells {
        points.push(Point3::from(psum / count as f64));
        if has_normals {
            let n = nsum / count as f64;
            let norm = n.norm();
            normals.push(if norm > 1e-12 {
                n / norm
            } else {
                Vector3::z()
            });
        }
    }
    Ok(PointCloud {
        points,
        normals: if has_normals { Some(normals) } else { None },
        id: cloud.id.clone(),
    })
}
