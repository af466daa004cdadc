//! Camera-frame geometry: pinhole lifting of pixels with depth, 3D waypoint
//! interpolation for visual traces, and the spatial-relation checker that
//! backs the environment reward.
//!
//! Axes follow the usual pinhole convention: x right, y down, z forward, all
//! in millimeters. "Up" is therefore `-y`.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImageMeta, Point2D};
use crate::trace::Trajectory2D;

/// Radius (px) searched for a valid depth when the pixel under a point is missing.
pub const INPAINT_RADIUS: u32 = 5;
pub const DEFAULT_MARGIN_MM: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn sub(self, o: Point3D) -> Point3D {
        Point3D::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn add(self, o: Point3D) -> Point3D {
        Point3D::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn scale(self, s: f64) -> Point3D {
        Point3D::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn dot(self, o: Point3D) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Point3D) -> f64 {
        self.sub(o).norm()
    }
}

impl From<[f64; 3]> for Point3D {
    fn from([x, y, z]: [f64; 3]) -> Self {
        Point3D::new(x, y, z)
    }
}

impl From<Point3D> for [f64; 3] {
    fn from(p: Point3D) -> Self {
        [p.x, p.y, p.z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidIntrinsics("principal point must be finite".into()));
        }
        Ok(())
    }

    /// Pixel coordinates of a camera-frame point with `z > 0`.
    pub fn project(&self, p: Point3D) -> Point2D {
        Point2D::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// `X = (x - cx) Z / fx`, `Y = (y - cy) Z / fy`.
    pub fn backproject_with_depth(&self, p: Point2D, depth_mm: f64) -> Point3D {
        Point3D::new(
            (p.x - self.cx) * depth_mm / self.fx,
            (p.y - self.cy) * depth_mm / self.fy,
            depth_mm,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min_mm: f64,
    pub max_mm: f64,
}

impl Default for DepthRange {
    fn default() -> Self {
        Self {
            min_mm: 600.0,
            max_mm: 1700.0,
        }
    }
}

impl DepthRange {
    pub fn contains(&self, d: f64) -> bool {
        d >= self.min_mm && d <= self.max_mm
    }
}

/// Per-pixel depth in millimeters, row-major; `0` marks a missing reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    dims: ImageMeta,
    values: Vec<f64>,
    range: DepthRange,
}

impl DepthImage {
    pub fn from_mm(dims: ImageMeta, values: Vec<f64>, range: DepthRange) -> Result<Self> {
        if values.len() != dims.area() {
            return Err(Error::InvalidDims {
                width: dims.width,
                height: dims.height,
            });
        }
        if let Some(&bad) = values.iter().find(|&&v| v != 0.0 && !range.contains(v)) {
            return Err(Error::DepthOutOfRange(bad));
        }
        Ok(Self { dims, values, range })
    }

    pub fn uniform(dims: ImageMeta, depth_mm: f64) -> Result<Self> {
        Self::from_mm(dims, vec![depth_mm; dims.area()], DepthRange::default())
    }

    /// 8-bit encoding: `0` is missing, `v` in 1..=255 maps linearly onto the range.
    pub fn decode_u8(dims: ImageMeta, raw: &[u8], range: DepthRange) -> Result<Self> {
        let span = range.max_mm - range.min_mm;
        let values = raw
            .iter()
            .map(|&v| {
                if v == 0 {
                    0.0
                } else {
                    range.min_mm + span * v as f64 / 255.0
                }
            })
            .collect();
        Self::from_mm(dims, values, range)
    }

    /// 16-bit encoding: raw millimeters, `0` is missing.
    pub fn decode_u16(dims: ImageMeta, raw: &[u16], range: DepthRange) -> Result<Self> {
        Self::from_mm(dims, raw.iter().map(|&v| v as f64).collect(), range)
    }

    /// Read an 8-bit or 16-bit grayscale image.
    pub fn read_image(path: impl AsRef<Path>, range: DepthRange) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let dims = ImageMeta::new(img.width(), img.height())?;
        match img {
            image::DynamicImage::ImageLuma16(buf) => Self::decode_u16(dims, buf.as_raw(), range),
            other => Self::decode_u8(dims, other.to_luma8().as_raw(), range),
        }
    }

    pub fn dims(&self) -> ImageMeta {
        self.dims
    }

    pub fn range(&self) -> DepthRange {
        self.range
    }

    pub fn raw(&self, cx: u32, cy: u32) -> f64 {
        self.values[cy as usize * self.dims.width as usize + cx as usize]
    }

    /// Depth under `p`, falling back to the nearest valid pixel within
    /// [`INPAINT_RADIUS`]. Ties resolve to the first pixel in row-major order.
    pub fn depth_at(&self, p: Point2D) -> Result<f64> {
        let (cx, cy) = p.cell(self.dims).ok_or(Error::OutOfBounds { x: p.x, y: p.y })?;
        let here = self.raw(cx, cy);
        if here != 0.0 {
            return Ok(here);
        }
        let r = INPAINT_RADIUS as i64;
        let mut best: Option<(i64, f64)> = None;
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = dx * dx + dy * dy;
                if d2 > r * r || best.is_some_and(|(b, _)| d2 >= b) {
                    continue;
                }
                let (x, y) = (cx as i64 + dx, cy as i64 + dy);
                if x < 0 || y < 0 || x >= self.dims.width as i64 || y >= self.dims.height as i64 {
                    continue;
                }
                let v = self.raw(x as u32, y as u32);
                if v != 0.0 {
                    best = Some((d2, v));
                }
            }
        }
        best.map(|(_, v)| v).ok_or(Error::NoValidDepth {
            x: p.x,
            y: p.y,
            radius: INPAINT_RADIUS,
        })
    }
}

/// Lift an in-bounds pixel to the camera frame using the depth image.
pub fn backproject(p: Point2D, depth: &DepthImage, k: &CameraIntrinsics) -> Result<Point3D> {
    let z = depth.depth_at(p)?;
    Ok(k.backproject_with_depth(p, z))
}

/// Unit quaternion `[w, x, y, z]`.
pub type Quaternion = [f64; 4];

/// Gripper pointing along +y (down in the camera frame): a half turn about x.
pub const TOP_DOWN: Quaternion = [0.0, 1.0, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint3D {
    pub position: Point3D,
    pub orientation: Quaternion,
}

/// Backproject every trace point with the initial depth frame and
/// interpolate the 3D polyline to `n_out` waypoints equally spaced in arc
/// length. Orientation is held at [`TOP_DOWN`].
pub fn lift_trace(
    traj: &Trajectory2D,
    depth: &DepthImage,
    k: &CameraIntrinsics,
    n_out: usize,
) -> Result<Vec<Waypoint3D>> {
    if n_out < 2 {
        return Err(Error::InvalidSampleCount(n_out));
    }
    if traj.len() < 2 {
        return Err(Error::DegenerateTrajectory(format!(
            "{} point(s), need at least 2",
            traj.len()
        )));
    }
    let lifted = traj
        .points()
        .iter()
        .map(|&p| backproject(p, depth, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(resample_3d(&lifted, n_out)?
        .into_iter()
        .map(|position| Waypoint3D {
            position,
            orientation: TOP_DOWN,
        })
        .collect())
}

fn resample_3d(points: &[Point3D], n: usize) -> Result<Vec<Point3D>> {
    let seg: Vec<f64> = points.windows(2).map(|w| w[0].distance(w[1])).collect();
    let total: f64 = seg.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::DegenerateTrajectory("zero 3D arc length".into()));
    }
    let mut out = Vec::with_capacity(n);
    out.push(points[0]);
    let (mut i, mut start) = (0usize, 0.0f64);
    for j in 1..n - 1 {
        let target = j as f64 * total / (n - 1) as f64;
        while i < seg.len() - 1 && start + seg[i] < target {
            start += seg[i];
            i += 1;
        }
        let t = if seg[i] > 0.0 {
            ((target - start) / seg[i]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(points[i].add(points[i + 1].sub(points[i]).scale(t)));
    }
    out.push(*points.last().unwrap());
    Ok(out)
}

/// Axis-aligned box `[x0, y0, z0, x1, y1, z1]` in the camera frame (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct Box3 {
    pub min: Point3D,
    pub max: Point3D,
}

impl From<[f64; 6]> for Box3 {
    fn from(b: [f64; 6]) -> Self {
        Box3 {
            min: Point3D::new(b[0], b[1], b[2]),
            max: Point3D::new(b[3], b[4], b[5]),
        }
    }
}

impl From<Box3> for [f64; 6] {
    fn from(b: Box3) -> Self {
        [b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z]
    }
}

impl Box3 {
    pub fn contains(&self, p: Point3D) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn center(&self) -> Point3D {
        self.min.add(self.max).scale(0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    #[serde(rename = "box")]
    pub bounds: Box3,
}

/// Objects on a table. `table_z` is the table plane's coordinate on the
/// vertical camera axis (y, pointing down); candidates must not lie below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
    pub table_z: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for o in &self.objects {
            if !names.insert(o.name.as_str()) {
                return Err(Error::InvalidScene(format!("duplicate object `{}`", o.name)));
            }
            let b = o.bounds;
            if !(b.min.x < b.max.x && b.min.y < b.max.y && b.min.z < b.max.z) {
                return Err(Error::InvalidScene(format!("degenerate box for `{}`", o.name)));
            }
        }
        if !self.table_z.is_finite() {
            return Err(Error::InvalidScene("table_z must be finite".into()));
        }
        Ok(())
    }

    pub fn object(&self, name: &str) -> Result<&SceneObject> {
        self.objects
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| Error::UnknownAnchor(name.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Left,
    Right,
    Top,
    Behind,
    Front,
    Between,
    CenterOf,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::Left,
        Relation::Right,
        Relation::Top,
        Relation::Behind,
        Relation::Front,
        Relation::Between,
        Relation::CenterOf,
    ];

    pub fn anchor_count(self) -> usize {
        match self {
            Relation::Between | Relation::CenterOf => 2,
            _ => 1,
        }
    }
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN_MM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub relation: Relation,
    pub anchors: Vec<String>,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

impl RelationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.anchors.len() != self.relation.anchor_count() {
            return Err(Error::InvalidRelation(format!(
                "{:?} needs {} anchor(s), got {}",
                self.relation,
                self.relation.anchor_count(),
                self.anchors.len()
            )));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidRelation("margin must be non-negative".into()));
        }
        Ok(())
    }
}

/// Whether a camera-frame point satisfies the relation. Directional relations
/// compare one axis against the anchor box grown by the margin; `between`
/// needs a projection strictly inside the centroid segment and a
/// perpendicular offset within the margin; `center_of` needs the point within
/// the margin of the centroid midpoint. Every relation also requires the
/// point to be on or above the table and outside every object.
pub fn relation_holds(p: Point3D, scene: &SceneSpec, rel: &RelationSpec) -> Result<bool> {
    rel.validate()?;
    let anchors = rel
        .anchors
        .iter()
        .map(|name| scene.object(name).map(|o| o.bounds))
        .collect::<Result<Vec<_>>>()?;
    if p.y > scene.table_z || scene.objects.iter().any(|o| o.bounds.contains(p)) {
        return Ok(false);
    }
    let m = rel.margin;
    let a = anchors[0];
    Ok(match rel.relation {
        Relation::Left => p.x <= a.min.x - m,
        Relation::Right => p.x >= a.max.x + m,
        Relation::Top => p.y <= a.min.y - m,
        Relation::Front => p.z <= a.min.z - m,
        Relation::Behind => p.z >= a.max.z + m,
        Relation::Between => {
            let (ca, cb) = (a.center(), anchors[1].center());
            let axis = cb.sub(ca);
            let len2 = axis.dot(axis);
            if len2 == 0.0 {
                return Ok(false);
            }
            let t = p.sub(ca).dot(axis) / len2;
            t > 0.0 && t < 1.0 && p.distance(ca.add(axis.scale(t))) <= m
        }
        Relation::CenterOf => {
            let mid = a.center().add(anchors[1].center()).scale(0.5);
            p.distance(mid) <= m
        }
    })
}

/// Backproject a `(u, v, depth_mm)` prediction and test the relation.
pub fn check_relation(
    candidate: (f64, f64, f64),
    scene: &SceneSpec,
    rel: &RelationSpec,
    k: &CameraIntrinsics,
) -> Result<bool> {
    let (u, v, d) = candidate;
    if !(u.is_finite() && v.is_finite() && d.is_finite()) || d <= 0.0 {
        return Ok(false);
    }
    relation_holds(k.backproject_with_depth(Point2D::new(u, v), d), scene, rel)
}
