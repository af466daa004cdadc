//! Trajectory containers, the trace post-processing chain (longest-path
//! selection, cubic-spline smoothing, equidistant resampling, rule filters)
//! and the RMSE/MAE similarity metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euclidean, ImageMeta, Point2D};

/// Ordered pixel-coordinate points. JSON: `{"points": [[x, y], ...], "width": w, "height": h}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryJson", into = "TrajectoryJson")]
pub struct Trajectory2D {
    points: Vec<Point2D>,
    dims: ImageMeta,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryJson {
    points: Vec<[f64; 2]>,
    width: u32,
    height: u32,
}

impl TryFrom<TrajectoryJson> for Trajectory2D {
    type Error = Error;

    fn try_from(raw: TrajectoryJson) -> Result<Self> {
        Trajectory2D::new(
            raw.points.into_iter().map(Point2D::from).collect(),
            ImageMeta::new(raw.width, raw.height)?,
        )
    }
}

impl From<Trajectory2D> for TrajectoryJson {
    fn from(t: Trajectory2D) -> Self {
        TrajectoryJson {
            points: t.points.into_iter().map(Into::into).collect(),
            width: t.dims.width,
            height: t.dims.height,
        }
    }
}

impl Trajectory2D {
    pub fn new(points: Vec<Point2D>, dims: ImageMeta) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::DegenerateTrajectory("no points".into()));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::DegenerateTrajectory(format!(
                "non-finite point ({}, {})",
                p.x, p.y
            )));
        }
        Ok(Self { points, dims })
    }

    pub fn points(&self) -> &[Point2D] {
        &self.points
    }

    pub fn dims(&self) -> ImageMeta {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn path_length(&self) -> f64 {
        path_length(&self.points)
    }

    fn with_points(&self, points: Vec<Point2D>) -> Self {
        Self {
            points,
            dims: self.dims,
        }
    }
}

pub fn path_length(points: &[Point2D]) -> f64 {
    points.windows(2).map(|w| euclidean(w[0], w[1])).sum()
}

/// The candidate with the longest path; ties go to the lowest index.
pub fn select_longest(candidates: &[Trajectory2D]) -> Result<&Trajectory2D> {
    let mut best: Option<(&Trajectory2D, f64)> = None;
    for c in candidates {
        let len = c.path_length();
        if best.is_none_or(|(_, b)| len > b) {
            best = Some((c, len));
        }
    }
    best.map(|(c, _)| c).ok_or(Error::EmptyCandidateSet)
}

/// Natural cubic spline through `values` at knots `t = 0, 1, ..., n-1`.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    values: Vec<f64>,
    second: Vec<f64>,
}

impl NaturalSpline {
    pub fn fit(values: &[f64]) -> Self {
        let n = values.len();
        let mut second = vec![0.0; n];
        if n >= 3 {
            // Unit knot spacing: M[i-1] + 4 M[i] + M[i+1] = 6 (y[i+1] - 2 y[i] + y[i-1]),
            // with M[0] = M[n-1] = 0. Thomas algorithm on the interior unknowns.
            let m = n - 2;
            let mut diag = vec![4.0; m];
            let mut rhs: Vec<f64> = (1..n - 1)
                .map(|i| 6.0 * (values[i + 1] - 2.0 * values[i] + values[i - 1]))
                .collect();
            for i in 1..m {
                let w = 1.0 / diag[i - 1];
                diag[i] -= w;
                rhs[i] -= w * rhs[i - 1];
            }
            let mut sol = vec![0.0; m];
            sol[m - 1] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                sol[i] = (rhs[i] - sol[i + 1]) / diag[i];
            }
            second[1..n - 1].copy_from_slice(&sol);
        }
        Self {
            values: values.to_vec(),
            second,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.values.len();
        if n == 1 {
            return self.values[0];
        }
        let k = (t.floor().max(0.0) as usize).min(n - 2);
        let u = t - k as f64;
        if u == 0.0 {
            return self.values[k];
        }
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.second[k], self.second[k + 1]);
        let a = 1.0 - u;
        a * y0 + u * y1 + ((a * a * a - a) * m0 + (u * u * u - u) * m1) / 6.0
    }
}

/// Result of [`smooth_spline`]; `smoothed` is false when the input was too
/// short for a cubic fit and was passed through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    pub trajectory: Trajectory2D,
    pub smoothed: bool,
}

pub const DEFAULT_SAMPLES_PER_SEGMENT: usize = 16;
pub const MIN_SPLINE_KNOTS: usize = 4;

/// Fit a natural cubic spline per coordinate over the knot index and sample
/// it `samples_per_segment` times per knot interval. Knots are reproduced
/// exactly at every multiple of `samples_per_segment`.
pub fn smooth_spline(traj: &Trajectory2D, samples_per_segment: usize) -> Smoothed {
    let n = traj.len();
    if n < MIN_SPLINE_KNOTS || samples_per_segment == 0 {
        return Smoothed {
            trajectory: traj.clone(),
            smoothed: false,
        };
    }
    let xs: Vec<f64> = traj.points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = traj.points.iter().map(|p| p.y).collect();
    let (sx, sy) = (NaturalSpline::fit(&xs), NaturalSpline::fit(&ys));
    let total = (n - 1) * samples_per_segment + 1;
    let points = (0..total)
        .map(|j| {
            let seg = j / samples_per_segment;
            let t = if j % samples_per_segment == 0 {
                seg as f64
            } else {
                seg as f64 + (j % samples_per_segment) as f64 / samples_per_segment as f64
            };
            Point2D::new(sx.eval(t), sy.eval(t))
        })
        .collect();
    Smoothed {
        trajectory: traj.with_points(points),
        smoothed: true,
    }
}

/// `n` points at arc-length positions `k * L / (n - 1)` along the polyline.
pub fn resample_equidistant(traj: &Trajectory2D, n: usize) -> Result<Trajectory2D> {
    if n < 2 {
        return Err(Error::InvalidSampleCount(n));
    }
    Ok(traj.with_points(resample_points(&traj.points, n)?))
}

pub(crate) fn resample_points(points: &[Point2D], n: usize) -> Result<Vec<Point2D>> {
    if points.len() < 2 {
        return Err(Error::DegenerateTrajectory(format!(
            "{} point(s), need at least 2",
            points.len()
        )));
    }
    let seg: Vec<f64> = points.windows(2).map(|w| euclidean(w[0], w[1])).collect();
    let total: f64 = seg.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::DegenerateTrajectory("zero arc length".into()));
    }
    let first = points[0];
    let last = *points.last().unwrap();
    let mut out = Vec::with_capacity(n);
    out.push(first);
    let (mut i, mut start) = (0usize, 0.0f64);
    for k in 1..n - 1 {
        let target = k as f64 * total / (n - 1) as f64;
        while i < seg.len() - 1 && start + seg[i] < target {
            start += seg[i];
            i += 1;
        }
        let t = if seg[i] > 0.0 {
            ((target - start) / seg[i]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(points[i].lerp(points[i + 1], t));
    }
    out.push(last);
    Ok(out)
}

/// Both trajectories resampled to `max(|a|, |b|)` points, paired by index.
fn paired_distances(a: &Trajectory2D, b: &Trajectory2D) -> Result<Vec<f64>> {
    let n = a.len().max(b.len());
    let ra = resample_points(&a.points, n)?;
    let rb = resample_points(&b.points, n)?;
    Ok(ra.iter().zip(&rb).map(|(&p, &q)| euclidean(p, q)).collect())
}

pub fn rmse(a: &Trajectory2D, b: &Trajectory2D) -> Result<f64> {
    let d = paired_distances(a, b)?;
    Ok((d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt())
}

pub fn mae(a: &Trajectory2D, b: &Trajectory2D) -> Result<f64> {
    let d = paired_distances(a, b)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterRules {
    pub min_path_length: f64,
    pub max_path_length: f64,
    pub min_point_count: usize,
    /// Points closer than this to any image border are rejected.
    pub margin: f64,
}

impl FilterRules {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_path_length < self.max_path_length) {
            return Err(Error::InvalidConfig(format!(
                "min_path_length {} must be below max_path_length {}",
                self.min_path_length, self.max_path_length
            )));
        }
        if self.margin < 0.0 {
            return Err(Error::InvalidConfig("margin must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            min_path_length: 20.0,
            max_path_length: 5000.0,
            min_point_count: 4,
            margin: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterVerdict {
    Accept,
    PathTooShort,
    PathTooLong,
    PointCount,
    NearBorder,
}

/// First violated rule in order: path length, point count, border margin.
pub fn apply_filters(traj: &Trajectory2D, rules: &FilterRules) -> FilterVerdict {
    let len = traj.path_length();
    if len < rules.min_path_length {
        return FilterVerdict::PathTooShort;
    }
    if len > rules.max_path_length {
        return FilterVerdict::PathTooLong;
    }
    if traj.len() < rules.min_point_count {
        return FilterVerdict::PointCount;
    }
    let (w, h) = (traj.dims.width as f64, traj.dims.height as f64);
    let m = rules.margin;
    let near = traj
        .points
        .iter()
        .any(|p| p.x < m || p.y < m || p.x > w - m || p.y > h - m);
    if near {
        return FilterVerdict::NearBorder;
    }
    FilterVerdict::Accept
}

/// Smooth (when long enough) and resample to `n` equidistant points.
pub fn process_trace(traj: &Trajectory2D, n: usize, smooth: bool) -> Result<Trajectory2D> {
    let base = if smooth {
        smooth_spline(traj, DEFAULT_SAMPLES_PER_SEGMENT).trajectory
    } else {
        traj.clone()
    };
    resample_equidistant(&base, n)
}
