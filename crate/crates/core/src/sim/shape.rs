//! Object cross-sections: the embedded shape library and JSON overrides.

use super::SimError;
use crate::geom::{
    is_convex_ccw, polygon_centroid, polygon_second_moment, polygon_signed_area, Vec2,
};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectId {
    Banana,
    Bottle,
    Camera,
}

impl ObjectId {
    pub const ALL: [ObjectId; 3] = [ObjectId::Banana, ObjectId::Bottle, ObjectId::Camera];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectId::Banana => "banana",
            ObjectId::Bottle => "bottle",
            ObjectId::Camera => "camera",
        }
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectId {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "banana" => Ok(ObjectId::Banana),
            "bottle" => Ok(ObjectId::Bottle),
            "camera" => Ok(ObjectId::Camera),
            other => Err(SimError::UnknownObject(other.to_string())),
        }
    }
}

/// Convex object cross-section. `vertices` are already scaled and centred on
/// the area centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectShape {
    pub id: ObjectId,
    pub vertices: Vec<Vec2>,
    pub scale: f64,
    pub elongated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeFile {
    pub id: ObjectId,
    pub vertices: Vec<[f64; 2]>,
    pub scale: f64,
    pub elongated: bool,
}

// Unscaled outlines, counter-clockwise.
const BANANA: [[f64; 2]; 10] = [
    [-0.50, 0.16],
    [-0.52, 0.09],
    [-0.40, -0.01],
    [-0.22, -0.09],
    [0.00, -0.12],
    [0.22, -0.09],
    [0.40, -0.01],
    [0.52, 0.09],
    [0.50, 0.16],
    [0.00, 0.17],
];
const BOTTLE: [[f64; 2]; 8] = [
    [-0.30, -0.50],
    [0.30, -0.50],
    [0.32, 0.10],
    [0.20, 0.35],
    [0.10, 0.50],
    [-0.10, 0.50],
    [-0.20, 0.35],
    [-0.32, 0.10],
];
const CAMERA: [[f64; 2]; 7] = [
    [-0.50, -0.30],
    [0.45, -0.35],
    [0.55, 0.00],
    [0.40, 0.30],
    [0.10, 0.38],
    [-0.30, 0.33],
    [-0.55, 0.05],
];

impl ObjectShape {
    /// Builds a shape from raw outline points: scales, recentres on the
    /// centroid and validates.
    pub fn from_outline(
        id: ObjectId,
        outline: &[[f64; 2]],
        scale: f64,
        elongated: bool,
    ) -> Result<Self, SimError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(SimError::InvalidShape(format!("{id}: scale {scale} must be positive")));
        }
        let pts: Vec<Vec2> = outline.iter().map(|p| Vec2::new(p[0] * scale, p[1] * scale)).collect();
        if pts.len() < 5 {
            return Err(SimError::InvalidShape(format!("{id}: needs at least 5 vertices")));
        }
        if !is_convex_ccw(&pts) {
            return Err(SimError::InvalidShape(format!("{id}: outline must be convex and CCW")));
        }
        let c = polygon_centroid(&pts);
        let vertices = pts.into_iter().map(|p| p - c).collect();
        if elongated != (id == ObjectId::Banana) {
            return Err(SimError::InvalidShape(format!("{id}: only banana is elongated")));
        }
        Ok(Self { id, vertices, scale, elongated })
    }

    pub fn builtin(id: ObjectId) -> Self {
        let shape = match id {
            ObjectId::Banana => Self::from_outline(id, &BANANA, 0.16, true),
            ObjectId::Bottle => Self::from_outline(id, &BOTTLE, 0.12, false),
            ObjectId::Camera => Self::from_outline(id, &CAMERA, 0.10, false),
        };
        shape.expect("builtin shapes are valid")
    }

    pub fn from_file(file: &ShapeFile) -> Result<Self, SimError> {
        Self::from_outline(file.id, &file.vertices, file.scale, file.elongated)
    }

    pub fn load_json(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidShape(format!("{}: {e}", path.display())))?;
        let file: ShapeFile = serde_json::from_str(&text)
            .map_err(|e| SimError::InvalidShape(format!("{}: {e}", path.display())))?;
        Self::from_file(&file)
    }

    pub fn area(&self) -> f64 {
        polygon_signed_area(&self.vertices)
    }

    /// Polar moment of inertia about the centroid for the given mass.
    pub fn inertia(&self, mass: f64) -> f64 {
        mass * polygon_second_moment(&self.vertices) / self.area()
    }

    pub fn circumradius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Vertices transformed to world coordinates.
    pub fn world_vertices(&self, pose: &crate::geom::Pose2) -> Vec<Vec2> {
        self.vertices.iter().map(|v| pose.transform_point(*v)).collect()
    }

    /// Unit principal (largest second-moment) axis of the vertex cloud in the object frame.
    pub fn principal_axis(&self) -> Vec2 {
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for v in &self.vertices {
            sxx += v.x * v.x;
            sxy += v.x * v.y;
            syy += v.y * v.y;
        }
        let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        Vec2::new(angle.cos(), angle.sin())
    }

    /// The two vertices extremal along the principal axis (min first).
    pub fn extremal_vertices(&self) -> (Vec2, Vec2) {
        let axis = self.principal_axis();
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            if v.dot(axis) < lo.dot(axis) {
                lo = *v;
            }
            if v.dot(axis) > hi.dot(axis) {
                hi = *v;
            }
        }
        (lo, hi)
    }

    /// Extent along the object-frame y axis: (min, max).
    pub fn extent_along(&self, dir: Vec2) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &self.vertices {
            let d = v.dot(dir);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    }
}
