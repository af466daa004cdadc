//! Verifiable reward primitives and their per-task weighted composition.
//!
//! Every primitive is bounded in `[0, 1]`; a [`RewardSpec`] carries weights
//! that sum to one, so composed totals are bounded as well. A response that
//! fails the format check scores zero overall (the format gate).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{euclidean, Mask, MaskSpec, Point2D};
use crate::parser::{extract_choice, ParsedResponse, TaskKind};
use crate::spatial::{check_relation, CameraIntrinsics, RelationSpec, SceneSpec};
use crate::trace::{rmse, FilterRules, Trajectory2D};

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Format,
    Acc,
    Mask,
    Dis,
    Trace,
    Env,
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Primitive::Format => "format",
            Primitive::Acc => "acc",
            Primitive::Mask => "mask",
            Primitive::Dis => "dis",
            Primitive::Trace => "trace",
            Primitive::Env => "env",
        }
    }

    /// Primitives that may carry weight for a task.
    pub fn applicable(task: TaskKind) -> &'static [Primitive] {
        use Primitive::*;
        match task {
            TaskKind::GeneralQA | TaskKind::SpatialQA => &[Format, Acc],
            TaskKind::REG | TaskKind::RRG | TaskKind::OFG => &[Format, Mask, Dis],
            TaskKind::RRG3D => &[Format, Env],
            TaskKind::VTG => &[Format, Trace],
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pixel thresholds of the clamped linear distance rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub d_min_thresh: f64,
    pub d_max_thresh: f64,
    pub d_rmse_min: f64,
    pub d_rmse_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            d_min_thresh: 10.0,
            d_max_thresh: 100.0,
            d_rmse_min: 10.0,
            d_rmse_max: 150.0,
        }
    }
}

/// How multi-point predictions are reduced to one mask/distance score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiPoint {
    #[default]
    Mean,
    First,
    /// Minimum over points: every point has to score.
    All,
}

impl MultiPoint {
    fn reduce(self, values: impl Iterator<Item = f64>) -> f64 {
        match self {
            MultiPoint::Mean => {
                let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                sum / n as f64
            }
            MultiPoint::First => values.into_iter().next().unwrap_or(0.0),
            MultiPoint::All => values.fold(f64::INFINITY, f64::min),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RewardSpecJson {
    task: TaskKind,
    weights: BTreeMap<Primitive, f64>,
    #[serde(default)]
    thresholds: Thresholds,
    #[serde(default)]
    multi_point: MultiPoint,
    #[serde(default = "default_true")]
    format_gate: bool,
}

/// Per-task weights and thresholds. JSON:
/// `{"task": "RRG", "weights": {"format": 0.1, "mask": 0.6, "dis": 0.3}, "thresholds": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RewardSpecJson", into = "RewardSpecJson")]
pub struct RewardSpec {
    task: TaskKind,
    weights: BTreeMap<Primitive, f64>,
    thresholds: Thresholds,
    multi_point: MultiPoint,
    format_gate: bool,
}

impl TryFrom<RewardSpecJson> for RewardSpec {
    type Error = Error;

    fn try_from(j: RewardSpecJson) -> Result<Self> {
        RewardSpec::new(j.task, j.weights, j.thresholds)
            .map(|s| s.with_multi_point(j.multi_point).with_format_gate(j.format_gate))
    }
}

impl From<RewardSpec> for RewardSpecJson {
    fn from(s: RewardSpec) -> Self {
        RewardSpecJson {
            task: s.task,
            weights: s.weights,
            thresholds: s.thresholds,
            multi_point: s.multi_point,
            format_gate: s.format_gate,
        }
    }
}

impl RewardSpec {
    pub fn new(
        task: TaskKind,
        weights: BTreeMap<Primitive, f64>,
        thresholds: Thresholds,
    ) -> Result<Self> {
        let applicable = Primitive::applicable(task);
        for (&p, &w) in &weights {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidSpec(format!("weight for {p} is {w}, outside [0, 1]")));
            }
            if w != 0.0 && !applicable.contains(&p) {
                return Err(Error::InvalidSpec(format!("{p} does not apply to task {task}")));
            }
        }
        let sum: f64 = weights.values().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidSpec(format!("weights sum to {sum}, expected 1")));
        }
        let t = thresholds;
        if !(t.d_min_thresh < t.d_max_thresh) || !(t.d_rmse_min < t.d_rmse_max) {
            return Err(Error::InvalidSpec(format!("thresholds out of order: {t:?}")));
        }
        Ok(Self {
            task,
            weights,
            thresholds,
            multi_point: MultiPoint::Mean,
            format_gate: true,
        })
    }

    pub fn with_multi_point(mut self, mode: MultiPoint) -> Self {
        self.multi_point = mode;
        self
    }

    /// With the gate off, a failed format contributes 0 and the other
    /// components still score whatever the response carries.
    pub fn with_format_gate(mut self, gate: bool) -> Self {
        self.format_gate = gate;
        self
    }

    pub fn with_thresholds(mut self, thresholds: Thresholds) -> Result<Self> {
        let t = thresholds;
        if !(t.d_min_thresh < t.d_max_thresh) || !(t.d_rmse_min < t.d_rmse_max) {
            return Err(Error::InvalidSpec(format!("thresholds out of order: {t:?}")));
        }
        self.thresholds = thresholds;
        Ok(self)
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn weight(&self, p: Primitive) -> f64 {
        self.weights.get(&p).copied().unwrap_or(0.0)
    }

    pub fn weights(&self) -> &BTreeMap<Primitive, f64> {
        &self.weights
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn multi_point(&self) -> MultiPoint {
        self.multi_point
    }

    pub fn format_gate(&self) -> bool {
        self.format_gate
    }

    fn active(&self) -> impl Iterator<Item = (Primitive, f64)> + '_ {
        self.weights
            .iter()
            .filter(|(_, &w)| w != 0.0)
            .map(|(&p, &w)| (p, w))
    }
}

/// A verification payload: what a response is checked against.
#[derive(Debug, Clone, PartialEq)]
pub enum Verification {
    Choice(String),
    Mask {
        mask: Mask,
        /// `None` for an empty mask; distance rewards then fail with `EmptyMask`.
        centroid: Option<Point2D>,
    },
    Trace(Trajectory2D),
    Relation(RelationTask),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationTask {
    pub scene: SceneSpec,
    pub relation: RelationSpec,
    pub intrinsics: CameraIntrinsics,
}

impl Verification {
    pub fn mask(mask: Mask) -> Self {
        let centroid = mask.centroid().ok();
        Verification::Mask { mask, centroid }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Verification::Choice(_) => "choice",
            Verification::Mask { .. } => "mask",
            Verification::Trace(_) => "trace",
            Verification::Relation(_) => "relation",
        }
    }

    pub fn matches(&self, task: TaskKind) -> bool {
        match self {
            Verification::Choice(_) => task.is_qa(),
            Verification::Mask { .. } => task.uses_mask(),
            Verification::Trace(_) => task == TaskKind::VTG,
            Verification::Relation(_) => task == TaskKind::RRG3D,
        }
    }
}

/// JSON form of a verification payload, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VerificationSpec {
    Choice { answer: String },
    Mask { mask: MaskSpec },
    Trace { trace: Trajectory2D },
    Relation(RelationTask),
}

impl VerificationSpec {
    pub fn load(&self, base_dir: Option<&Path>) -> Result<Verification> {
        Ok(match self {
            VerificationSpec::Choice { answer } => Verification::Choice(answer.clone()),
            VerificationSpec::Mask { mask } => Verification::mask(mask.load(base_dir)?),
            VerificationSpec::Trace { trace } => Verification::Trace(trace.clone()),
            VerificationSpec::Relation(task) => {
                task.scene.validate()?;
                task.relation.validate()?;
                task.intrinsics.validate()?;
                Verification::Relation(task.clone())
            }
        })
    }
}

/// Outcome of an external environment check: success flag or a checker fault.
pub trait EnvChecker: Sync {
    fn check(&self, resp: &ParsedResponse) -> std::result::Result<bool, String>;
}

impl<F> EnvChecker for F
where
    F: Fn(&ParsedResponse) -> std::result::Result<bool, String> + Sync,
{
    fn check(&self, resp: &ParsedResponse) -> std::result::Result<bool, String> {
        self(resp)
    }
}

/// Built-in checker: backprojects the `(x, y, depth)` answer and tests the relation.
pub struct RelationChecker<'a>(pub &'a RelationTask);

impl EnvChecker for RelationChecker<'_> {
    fn check(&self, resp: &ParsedResponse) -> std::result::Result<bool, String> {
        let (Some(p), Some(d)) = (resp.points.first(), resp.depth_mm) else {
            return Ok(false);
        };
        let t = self.0;
        check_relation((p.x, p.y, d), &t.scene, &t.relation, &t.intrinsics).map_err(|e| e.to_string())
    }
}

pub fn r_format(resp: &ParsedResponse) -> f64 {
    if resp.tags_valid {
        1.0
    } else {
        0.0
    }
}

/// 1 iff the extracted choice equals `g` after case folding.
pub fn r_acc(resp: &ParsedResponse, g: &str) -> f64 {
    let got = extract_choice(&resp.answer_text).to_lowercase();
    let want = extract_choice(g).to_lowercase();
    if got == want {
        1.0
    } else {
        0.0
    }
}

/// Membership indicator, averaged over points by default.
pub fn r_mask(points: &[Point2D], mask: &Mask, mode: MultiPoint) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyPrediction);
    }
    Ok(mode.reduce(
        points
            .iter()
            .map(|&p| if mask.contains(p) { 1.0 } else { 0.0 }),
    ))
}

/// `min(1, max(0, 1 - (d - lo) / (hi - lo)))`.
pub fn clamped_linear(d: f64, lo: f64, hi: f64) -> f64 {
    (1.0 - (d - lo) / (hi - lo)).clamp(0.0, 1.0)
}

pub fn dis_reward(d: f64, t: &Thresholds) -> f64 {
    clamped_linear(d, t.d_min_thresh, t.d_max_thresh)
}

pub fn trace_reward(d_rmse: f64, t: &Thresholds) -> f64 {
    clamped_linear(d_rmse, t.d_rmse_min, t.d_rmse_max)
}

/// Distance reward against the mask centroid.
pub fn r_dis(points: &[Point2D], mask: &Mask, spec: &RewardSpec) -> Result<f64> {
    let g = mask.centroid()?;
    r_dis_to(points, g, spec)
}

fn r_dis_to(points: &[Point2D], g: Point2D, spec: &RewardSpec) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyPrediction);
    }
    Ok(spec.multi_point.reduce(
        points
            .iter()
            .map(|&p| dis_reward(euclidean(p, g), &spec.thresholds)),
    ))
}

pub fn r_trace(tau: &Trajectory2D, tau_gt: &Trajectory2D, spec: &RewardSpec) -> Result<f64> {
    if tau.len() < 2 || tau_gt.len() < 2 {
        return Err(Error::DegenerateTrajectory(
            "trace reward needs at least 2 points on both sides".into(),
        ));
    }
    Ok(trace_reward(rmse(tau, tau_gt)?, &spec.thresholds))
}

pub fn r_env(resp: &ParsedResponse, checker: &dyn EnvChecker) -> Result<f64> {
    match checker.check(resp) {
        Ok(true) => Ok(1.0),
        Ok(false) => Ok(0.0),
        Err(msg) => Err(Error::CheckerFailure(msg)),
    }
}

/// Evaluated components and their weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub task: TaskKind,
    pub components: BTreeMap<Primitive, f64>,
    pub total: f64,
}

pub fn compose(
    resp: &ParsedResponse,
    verification: &Verification,
    spec: &RewardSpec,
) -> Result<RewardBreakdown> {
    compose_with_env(resp, verification, spec, None)
}

/// Compose with an optional external environment checker; without one,
/// RRG3D uses [`RelationChecker`] over the verification's relation task.
pub fn compose_with_env(
    resp: &ParsedResponse,
    verification: &Verification,
    spec: &RewardSpec,
    env: Option<&dyn EnvChecker>,
) -> Result<RewardBreakdown> {
    if !verification.matches(spec.task) {
        return Err(Error::SpecMismatch {
            task: spec.task,
            verification: verification.kind(),
        });
    }
    if resp.task != spec.task {
        return Err(Error::InvalidSpec(format!(
            "response parsed as {} but spec is for {}",
            resp.task, spec.task
        )));
    }
    let format = r_format(resp);
    let mut components = BTreeMap::new();
    if format == 0.0 && spec.format_gate {
        for (p, _) in spec.active() {
            components.insert(p, 0.0);
        }
        return Ok(RewardBreakdown {
            task: spec.task,
            components,
            total: 0.0,
        });
    }

    let mut total = 0.0;
    for (p, w) in spec.active() {
        let value = match p {
            Primitive::Format => format,
            Primitive::Acc => match verification {
                Verification::Choice(g) => r_acc(resp, g),
                _ => unreachable!("kind checked above"),
            },
            Primitive::Mask => match verification {
                Verification::Mask { mask, .. } if !resp.points.is_empty() => {
                    r_mask(&resp.points, mask, spec.multi_point)?
                }
                _ => 0.0,
            },
            Primitive::Dis => match verification {
                Verification::Mask { centroid, .. } => {
                    let g = centroid.ok_or(Error::EmptyMask)?;
                    if resp.points.is_empty() {
                        0.0
                    } else {
                        r_dis_to(&resp.points, g, spec)?
                    }
                }
                _ => 0.0,
            },
            Primitive::Trace => match verification {
                Verification::Trace(gt) => predicted_trace_reward(resp, gt, spec)?,
                _ => 0.0,
            },
            Primitive::Env => match (verification, env) {
                (_, Some(checker)) => r_env(resp, checker)?,
                (Verification::Relation(task), None) => r_env(resp, &RelationChecker(task))?,
                _ => 0.0,
            },
        };
        components.insert(p, value);
        total += w * value;
    }
    Ok(RewardBreakdown {
        task: spec.task,
        components,
        total: total.clamp(0.0, 1.0),
    })
}

/// A predicted trace that cannot be compared (fewer than 2 points or zero
/// arc length) scores 0 instead of failing the whole composition.
fn predicted_trace_reward(
    resp: &ParsedResponse,
    gt: &Trajectory2D,
    spec: &RewardSpec,
) -> Result<f64> {
    let Ok(tau) = Trajectory2D::new(resp.points.clone(), gt.dims()) else {
        return Ok(0.0);
    };
    match r_trace(&tau, gt, spec) {
        Ok(v) => Ok(v),
        Err(Error::DegenerateTrajectory(_)) if tau.len() < 2 || tau.path_length() == 0.0 => Ok(0.0),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PresetFileJson {
    presets: Vec<RewardSpec>,
    #[serde(default)]
    alternatives: BTreeMap<String, RewardSpec>,
    #[serde(default)]
    filters: FilterRules,
}

/// Reward presets per task plus named alternatives and trace filter rules,
/// loaded from one declarative JSON file.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetTable {
    presets: BTreeMap<TaskKind, RewardSpec>,
    alternatives: BTreeMap<String, RewardSpec>,
    filters: FilterRules,
}

const BUILTIN_PRESETS: &str = include_str!("../presets/default.json");

impl PresetTable {
    /// The shipped default preset file.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_PRESETS).expect("shipped preset file is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PresetFileJson = serde_json::from_str(text)?;
        let mut presets = BTreeMap::new();
        for spec in raw.presets {
            let task = spec.task;
            if presets.insert(task, spec).is_some() {
                return Err(Error::InvalidSpec(format!("duplicate preset for {task}")));
            }
        }
        raw.filters.validate()?;
        Ok(Self {
            presets,
            alternatives: raw.alternatives,
            filters: raw.filters,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn get(&self, task: TaskKind) -> Option<&RewardSpec> {
        self.presets.get(&task)
    }

    pub fn alternative(&self, name: &str) -> Option<&RewardSpec> {
        self.alternatives.get(name)
    }

    pub fn alternatives(&self) -> impl Iterator<Item = (&str, &RewardSpec)> {
        self.alternatives.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tasks(&self) -> impl Iterator<Item = (TaskKind, &RewardSpec)> {
        self.presets.iter().map(|(&k, v)| (k, v))
    }

    pub fn filters(&self) -> &FilterRules {
        &self.filters
    }

    pub fn insert(&mut self, spec: RewardSpec) {
        self.presets.insert(spec.task, spec);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoxRegion, ImageMeta};
    use crate::parser::{parse, parse_with, ParseOptions};

    fn dims() -> ImageMeta {
        ImageMeta::new(100, 100).unwrap()
    }

    fn box_mask(x0: u32, y0: u32, x1: u32, y1: u32) -> Mask {
        Mask::from_boxes(dims(), vec![BoxRegion { x0, y0, x1, y1 }]).unwrap()
    }

    fn weights(pairs: &[(Primitive, f64)]) -> BTreeMap<Primitive, f64> {
        pairs.iter().copied().collect()
    }

    fn point_response(task: TaskKind, pts: &[(f64, f64)]) -> ParsedResponse {
        let body: Vec<String> = pts.iter().map(|(x, y)| format!("[{x},{y}]")).collect();
        parse_with(
            &format!("<think>t</think><answer><point>[{}]</point></answer>", body.join(",")),
            task,
            ParseOptions {
                enforce_trace_count: false,
                ..ParseOptions::default()
            },
        )
    }

    #[test]
    fn format_reward() {
        assert_eq!(r_format(&point_response(TaskKind::REG, &[(1.0, 1.0)])), 1.0);
        let seven: Vec<String> = (0..7).map(|i| format!("[{i},{i}]")).collect();
        let vtg = parse(
            &format!("<think>t</think><answer><point>[{}]</point></answer>", seven.join(",")),
            TaskKind::VTG,
        );
        assert_eq!(r_format(&vtg), 0.0);
        assert_eq!(r_format(&parse("<think>t</think>", TaskKind::REG)), 0.0);
    }

    #[test]
    fn accuracy_reward() {
        let r = |a: &str| parse(&format!("<think>t</think><answer>{a}</answer>"), TaskKind::GeneralQA);
        assert_eq!(r_acc(&r("B"), "B"), 1.0);
        assert_eq!(r_acc(&r("A"), "B"), 0.0);
        assert_eq!(r_acc(&r("The answer is B."), "B"), 1.0);
        assert_eq!(r_acc(&r("b"), "B"), 1.0);
        assert_eq!(r_acc(&r("Red Cup"), "red cup"), 1.0);
    }

    #[test]
    fn mask_reward() {
        let m = box_mask(10, 10, 19, 19);
        let inside = Point2D::new(15.0, 15.0);
        let outside = Point2D::new(50.0, 50.0);
        assert_eq!(r_mask(&[inside], &m, MultiPoint::Mean).unwrap(), 1.0);
        assert_eq!(r_mask(&[outside], &m, MultiPoint::Mean).unwrap(), 0.0);
        let four = [inside, Point2D::new(10.0, 10.0), Point2D::new(19.9, 19.9), outside];
        let expected = four.iter().filter(|&&p| m.contains(p)).count() as f64 / 4.0;
        assert_eq!(expected, 0.75);
        assert_eq!(r_mask(&four, &m, MultiPoint::Mean).unwrap(), 0.75);
        assert_eq!(r_mask(&four, &m, MultiPoint::First).unwrap(), 1.0);
        assert_eq!(r_mask(&four, &m, MultiPoint::All).unwrap(), 0.0);
        assert!(matches!(r_mask(&[], &m, MultiPoint::Mean), Err(Error::EmptyPrediction)));
    }

    #[test]
    fn distance_reward_clamps() {
        let t = Thresholds {
            d_min_thresh: 10.0,
            d_max_thresh: 100.0,
            ..Thresholds::default()
        };
        assert_eq!(dis_reward(5.0, &t), 1.0);
        assert_eq!(dis_reward(200.0, &t), 0.0);
        assert!((dis_reward(55.0, &t) - 0.5).abs() < 1e-15);

        let spec = RewardSpec::new(
            TaskKind::RRG,
            weights(&[(Primitive::Format, 0.1), (Primitive::Mask, 0.6), (Primitive::Dis, 0.3)]),
            t,
        )
        .unwrap();
        // centroid of cells 0..=9 is (5, 5); a point 55 px away scores 0.5
        let m = box_mask(0, 0, 9, 9);
        let v = r_dis(&[Point2D::new(5.0, 60.0)], &m, &spec).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        let empty = Mask::from_boxes(dims(), vec![]).unwrap();
        assert!(matches!(r_dis(&[Point2D::new(1.0, 1.0)], &empty, &spec), Err(Error::EmptyMask)));
    }

    #[test]
    fn trace_reward_worked_example() {
        let t = Thresholds {
            d_rmse_min: 0.0,
            d_rmse_max: 20.0,
            ..Thresholds::default()
        };
        let spec =
            RewardSpec::new(TaskKind::VTG, weights(&[(Primitive::Format, 0.1), (Primitive::Trace, 0.9)]), t)
                .unwrap();
        let tau = Trajectory2D::new(vec![Point2D::new(0.0, 0.0), Point2D::new(10.0, 0.0)], dims()).unwrap();
        let gt = Trajectory2D::new(vec![Point2D::new(0.0, 0.0), Point2D::new(0.0, 10.0)], dims()).unwrap();
        assert!((r_trace(&tau, &gt, &spec).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(r_trace(&gt, &gt, &spec).unwrap(), 1.0);
        let single = Trajectory2D::new(vec![Point2D::new(0.0, 0.0)], dims()).unwrap();
        assert!(matches!(r_trace(&single, &gt, &spec), Err(Error::DegenerateTrajectory(_))));
    }

    #[test]
    fn env_reward_and_checker_failure() {
        let resp = point_response(TaskKind::REG, &[(1.0, 1.0)]);
        let yes = |_: &ParsedResponse| Ok(true);
        let no = |_: &ParsedResponse| Ok(false);
        let broken = |_: &ParsedResponse| Err("simulator crashed".to_string());
        assert_eq!(r_env(&resp, &yes).unwrap(), 1.0);
        assert_eq!(r_env(&resp, &no).unwrap(), 0.0);
        assert!(matches!(r_env(&resp, &broken), Err(Error::CheckerFailure(_))));
    }

    #[test]
    fn spec_validation() {
        let t = Thresholds::default();
        assert!(RewardSpec::new(TaskKind::REG, weights(&[(Primitive::Format, 0.1), (Primitive::Mask, 0.8)]), t).is_err());
        assert!(RewardSpec::new(TaskKind::REG, weights(&[(Primitive::Format, 0.1), (Primitive::Acc, 0.9)]), t).is_err());
        assert!(RewardSpec::new(TaskKind::REG, weights(&[(Primitive::Format, -0.1), (Primitive::Mask, 1.1)]), t).is_err());
        let bad = Thresholds {
            d_min_thresh: 50.0,
            d_max_thresh: 10.0,
            ..t
        };
        assert!(RewardSpec::new(TaskKind::REG, weights(&[(Primitive::Format, 0.1), (Primitive::Mask, 0.9)]), bad).is_err());
        // zero weight on an inapplicable primitive is allowed
        assert!(RewardSpec::new(
            TaskKind::REG,
            weights(&[(Primitive::Format, 0.1), (Primitive::Mask, 0.9), (Primitive::Acc, 0.0)]),
            t
        )
        .is_ok());
    }

    #[test]
    fn compose_general_qa() {
        let presets = PresetTable::builtin();
        let spec = presets.get(TaskKind::GeneralQA).unwrap();
        let resp = parse("<think>t</think><answer>B</answer>", TaskKind::GeneralQA);
        let b = compose(&resp, &Verification::Choice("B".into()), spec).unwrap();
        assert_eq!(b.total, 1.0);
        assert_eq!(b.components[&Primitive::Acc], 1.0);
    }

    #[test]
    fn compose_rrg_at_centroid() {
        let presets = PresetTable::builtin();
        let spec = presets.get(TaskKind::RRG).unwrap();
        let v = Verification::mask(box_mask(20, 20, 39, 39));
        let resp = point_response(TaskKind::RRG, &[(30.0, 30.0)]);
        let b = compose(&resp, &v, spec).unwrap();
        assert_eq!(b.components[&Primitive::Format], 1.0);
        assert_eq!(b.components[&Primitive::Mask], 1.0);
        assert_eq!(b.components[&Primitive::Dis], 1.0);
        assert!((b.total - 1.0).abs() < 1e-12);
        let alt = presets.alternative("rrg-main-text").unwrap();
        assert_eq!(alt.weight(Primitive::Mask), 0.7);
        assert!((compose(&resp, &v, alt).unwrap().total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn format_gate_zeroes_everything() {
        let presets = PresetTable::builtin();
        let spec = presets.get(TaskKind::VTG).unwrap();
        let gt_pts: Vec<Point2D> = (0..8).map(|i| Point2D::new(10.0 * i as f64, 5.0)).collect();
        let gt = Trajectory2D::new(gt_pts, dims()).unwrap();
        let seven: Vec<String> = (0..7).map(|i| format!("[{},5]", 10 * i)).collect();
        let resp = parse(
            &format!("<think>t</think><answer><point>[{}]</point></answer>", seven.join(",")),
            TaskKind::VTG,
        );
        let b = compose(&resp, &Verification::Trace(gt.clone()), spec).unwrap();
        assert_eq!(b.total, 0.0);
        assert!(b.components.values().all(|&v| v == 0.0));

        // without the gate the trace still earns its share
        let open = spec.clone().with_format_gate(false);
        let b = compose(&resp, &Verification::Trace(gt), &open).unwrap();
        assert_eq!(b.components[&Primitive::Format], 0.0);
        assert!(b.components[&Primitive::Trace] > 0.9);
        assert!(b.total > 0.8 && b.total <= 0.9);
    }

    #[test]
    fn compose_rejects_mismatched_verification() {
        let presets = PresetTable::builtin();
        let resp = point_response(TaskKind::VTG, &[(1.0, 1.0), (2.0, 2.0)]);
        let err = compose(&resp, &Verification::mask(box_mask(0, 0, 3, 3)), presets.get(TaskKind::VTG).unwrap());
        assert!(matches!(err, Err(Error::SpecMismatch { .. })));
    }

    #[test]
    fn degenerate_predicted_trace_scores_zero() {
        let presets = PresetTable::builtin();
        let spec = presets.get(TaskKind::VTG).unwrap();
        let gt = Trajectory2D::new(vec![Point2D::new(0.0, 0.0), Point2D::new(50.0, 0.0)], dims()).unwrap();
        let relaxed = ParseOptions {
            enforce_trace_count: false,
            ..ParseOptions::default()
        };
        let one = parse_with("<think>t</think><answer><point>[[3,3]]</point></answer>", TaskKind::VTG, relaxed);
        let b = compose(&one, &Verification::Trace(gt.clone()), spec).unwrap();
        assert_eq!(b.components[&Primitive::Trace], 0.0);
        assert!((b.total - 0.1).abs() < 1e-12);
    }

    #[test]
    fn preset_json_shape() {
        let spec: RewardSpec = serde_json::from_str(
            r#"{ "task": "RRG", "weights": {"format":0.1,"mask":0.6,"dis":0.3}, "thresholds": {"d_min_thresh": 5, "d_max_thresh": 50, "d_rmse_min": 1, "d_rmse_max": 2} }"#,
        )
        .unwrap();
        assert_eq!(spec.thresholds().d_max_thresh, 50.0);
        assert!(spec.format_gate());
        assert!(serde_json::from_str::<RewardSpec>(
            r#"{ "task": "RRG", "weights": {"format":0.5,"mask":0.6} }"#
        )
        .is_err());
        let table = PresetTable::builtin();
        assert_eq!(table.tasks().count(), 7);
        assert_eq!(table.filters().min_point_count, 4);
    }
}
