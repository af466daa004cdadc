//! Group-relative policy optimization on a tabular pointing policy.
//!
//! The math is the usual GRPO recipe: rewards of `G` sampled responses are
//! normalized within the group to form advantages, and the policy maximizes
//! the clipped importance-weighted surrogate, optionally minus a per-token KL
//! penalty against a frozen reference policy. The policy here is a table of
//! softmax heads (one per decision point), so gradients are exact and the
//! trainer runs on a laptop in seconds.
//!
//! Every sampled response is rendered to the canonical answer text, parsed,
//! and scored by [`crate::reward::compose`], so the format gate and the
//! parser sit on the training path.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxRegion, ImageMeta, Mask, Point2D};
use crate::par::{Executor, Parallelism};
use crate::parser::{parse_with, render_point_block, ParseOptions, TaskKind, TRACE_POINT_COUNT};
use crate::reward::{compose, Primitive, RewardSpec, Thresholds, Verification};
use crate::trace::Trajectory2D;

pub const DEFAULT_GROUP_SIZE: usize = 8;
pub const DEFAULT_KL_COEFF: f64 = 0.01;
pub const DEFAULT_CLIP_EPS: f64 = 0.2;
pub const DEFAULT_STD_FLOOR: f64 = 1e-8;

/// `(r_i - mean) / std` with the population standard deviation. Groups whose
/// std falls below `std_floor` get all-zero advantages.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if !(std >= std_floor) {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Clip range and KL weight of the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub clip_eps: f64,
    pub kl_coeff: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            clip_eps: DEFAULT_CLIP_EPS,
            kl_coeff: DEFAULT_KL_COEFF,
        }
    }
}

/// `min(rho * adv, clip(rho, 1 - eps, 1 + eps) * adv)` and its derivative
/// with respect to `log pi_new` (where `d rho / d logp = rho`).
pub fn clipped_term(logp_new: f64, logp_old: f64, adv: f64, eps: f64) -> (f64, f64) {
    let ratio = (logp_new - logp_old).exp();
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if unclipped <= clipped {
        (unclipped, ratio * adv)
    } else {
        (clipped, 0.0)
    }
}

/// One group of `G` responses with aligned per-token log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRollout {
    pub responses: Vec<Vec<usize>>,
    pub logp_new: Vec<Vec<f64>>,
    pub logp_old: Vec<Vec<f64>>,
    /// Frozen reference log-probabilities; required when the KL weight is nonzero.
    pub logp_ref: Option<Vec<Vec<f64>>>,
    pub rewards: Vec<f64>,
    /// Per response, per token. Constant along each response.
    pub advantages: Vec<Vec<f64>>,
}

impl GroupRollout {
    pub fn new(
        responses: Vec<Vec<usize>>,
        logp_new: Vec<Vec<f64>>,
        logp_old: Vec<Vec<f64>>,
        logp_ref: Option<Vec<Vec<f64>>>,
        rewards: Vec<f64>,
        std_floor: f64,
    ) -> Result<Self> {
        let g = responses.len();
        if rewards.len() != g {
            return Err(Error::MisalignedLogp(format!(
                "{} responses but {} rewards",
                g,
                rewards.len()
            )));
        }
        let adv = group_advantages(&rewards, std_floor)?;
        let advantages = responses
            .iter()
            .zip(&adv)
            .map(|(r, &a)| vec![a; r.len()])
            .collect();
        let rollout = Self {
            responses,
            logp_new,
            logp_old,
            logp_ref,
            rewards,
            advantages,
        };
        rollout.validate()?;
        Ok(rollout)
    }

    pub fn group_size(&self) -> usize {
        self.responses.len()
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.responses.len();
        if g < 2 {
            return Err(Error::GroupTooSmall(g));
        }
        let check = |name: &str, arr: &[Vec<f64>]| -> Result<()> {
            if arr.len() != g {
                return Err(Error::MisalignedLogp(format!(
                    "{name} has {} rows, expected {g}",
                    arr.len()
                )));
            }
            for (i, (row, resp)) in arr.iter().zip(&self.responses).enumerate() {
                if row.len() != resp.len() {
                    return Err(Error::MisalignedLogp(format!(
                        "{name}[{i}] has {} entries for {} tokens",
                        row.len(),
                        resp.len()
                    )));
                }
            }
            Ok(())
        };
        check("logp_new", &self.logp_new)?;
        check("logp_old", &self.logp_old)?;
        check("advantages", &self.advantages)?;
        if let Some(r) = &self.logp_ref {
            check("logp_ref", r)?;
        }
        if self.rewards.len() != g {
            return Err(Error::MisalignedLogp("reward count".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateOutput {
    /// `-objective`, the quantity minimized.
    pub loss: f64,
    /// `(1/G) sum_i sum_t [term - kl_coeff * (logp_new - logp_ref)]`.
    pub objective: f64,
    /// `d loss / d logp_new`, aligned with the rollout tokens.
    pub grad_logp: Vec<Vec<f64>>,
    /// Mean per-token KL estimate (0 without a reference).
    pub kl: f64,
    /// Fraction of tokens where the clipped branch was selected with zero gradient.
    pub clip_fraction: f64,
}

pub fn grpo_loss(rollout: &GroupRollout, params: &SurrogateParams) -> Result<SurrogateOutput> {
    rollout.validate()?;
    if params.kl_coeff != 0.0 && rollout.logp_ref.is_none() {
        return Err(Error::MisalignedLogp(
            "kl_coeff is nonzero but no reference log-probabilities were given".into(),
        ));
    }
    let g = rollout.group_size() as f64;
    let mut objective = 0.0;
    let (mut kl_sum, mut tokens, mut clipped) = (0.0, 0usize, 0usize);
    let mut grad_logp = Vec::with_capacity(rollout.group_size());
    for i in 0..rollout.group_size() {
        let mut row = Vec::with_capacity(rollout.responses[i].len());
        for t in 0..rollout.responses[i].len() {
            let lp = rollout.logp_new[i][t];
            let (term, dterm) = clipped_term(
                lp,
                rollout.logp_old[i][t],
                rollout.advantages[i][t],
                params.clip_eps,
            );
            let mut value = term;
            let mut dvalue = dterm;
            if let Some(r) = &rollout.logp_ref {
                let kl = lp - r[i][t];
                kl_sum += kl;
                value -= params.kl_coeff * kl;
                dvalue -= params.kl_coeff;
            }
            if dterm == 0.0 && term != 0.0 {
                clipped += 1;
            }
            tokens += 1;
            objective += value;
            row.push(-dvalue / g);
        }
        grad_logp.push(row);
    }
    objective /= g;
    Ok(SurrogateOutput {
        loss: -objective,
        objective,
        grad_logp,
        kl: if tokens > 0 { kl_sum / tokens as f64 } else { 0.0 },
        clip_fraction: if tokens > 0 {
            clipped as f64 / tokens as f64
        } else {
            0.0
        },
    })
}

/// One decision of a response: which softmax head, which action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub head: usize,
    pub action: usize,
}

/// Tabular softmax policy: per context, one logit vector per head.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPolicy {
    contexts: usize,
    head_sizes: Vec<usize>,
    offsets: Vec<usize>,
    per_context: usize,
    logits: Vec<f64>,
    temperature: f64,
}

impl GridPolicy {
    /// Uniform policy (all logits zero).
    pub fn new(contexts: usize, head_sizes: Vec<usize>, temperature: f64) -> Result<Self> {
        if contexts == 0 || head_sizes.is_empty() || head_sizes.contains(&0) {
            return Err(Error::InvalidConfig("policy needs contexts and non-empty heads".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature {temperature} must be positive")));
        }
        let mut offsets = Vec::with_capacity(head_sizes.len());
        let mut acc = 0;
        for &s in &head_sizes {
            offsets.push(acc);
            acc += s;
        }
        Ok(Self {
            contexts,
            head_sizes,
            offsets,
            per_context: acc,
            logits: vec![0.0; contexts * acc],
            temperature,
        })
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn head_sizes(&self) -> &[usize] {
        &self.head_sizes
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Flat parameter index of `(ctx, head, 0)`.
    pub fn offset(&self, ctx: usize, head: usize) -> usize {
        ctx * self.per_context + self.offsets[head]
    }

    pub fn logits(&self, ctx: usize, head: usize) -> &[f64] {
        let o = self.offset(ctx, head);
        &self.logits[o..o + self.head_sizes[head]]
    }

    pub fn logits_mut(&mut self, ctx: usize, head: usize) -> &mut [f64] {
        let o = self.offset(ctx, head);
        let n = self.head_sizes[head];
        &mut self.logits[o..o + n]
    }

    pub fn probs(&self, ctx: usize, head: usize) -> Vec<f64> {
        let z = self.logits(ctx, head);
        let t = self.temperature;
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|&v| ((v - max) / t).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn log_prob(&self, ctx: usize, tok: Token) -> f64 {
        let z = self.logits(ctx, tok.head);
        let t = self.temperature;
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = z.iter().map(|&v| ((v - max) / t).exp()).sum::<f64>().ln();
        (z[tok.action] - max) / t - lse
    }

    pub fn sample(&self, ctx: usize, head: usize, rng: &mut impl Rng) -> usize {
        let p = self.probs(ctx, head);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, &pa) in p.iter().enumerate() {
            acc += pa;
            if u < acc {
                return a;
            }
        }
        p.len() - 1
    }

    /// Accumulate `upstream * d logp(tok) / d logits` into a flat gradient buffer.
    pub fn accumulate_logp_grad(&self, ctx: usize, tok: Token, upstream: f64, grad: &mut [f64]) {
        let p = self.probs(ctx, tok.head);
        let o = self.offset(ctx, tok.head);
        let scale = upstream / self.temperature;
        for (a, &pa) in p.iter().enumerate() {
            let indicator = if a == tok.action { 1.0 } else { 0.0 };
            grad[o + a] += scale * (indicator - pa);
        }
    }
}

/// Surrogate loss of one context's group under `policy`, with the exact
/// gradient over the policy's flat parameters.
pub fn policy_surrogate(
    policy: &GridPolicy,
    ctx: usize,
    responses: &[Vec<Token>],
    logp_old: &[Vec<f64>],
    logp_ref: Option<&[Vec<f64>]>,
    rewards: &[f64],
    params: &SurrogateParams,
    std_floor: f64,
) -> Result<(SurrogateOutput, Vec<f64>)> {
    let logp_new: Vec<Vec<f64>> = responses
        .iter()
        .map(|r| r.iter().map(|&t| policy.log_prob(ctx, t)).collect())
        .collect();
    let rollout = GroupRollout::new(
        responses
            .iter()
            .map(|r| r.iter().map(|t| t.action).collect())
            .collect(),
        logp_new,
        logp_old.to_vec(),
        logp_ref.map(|r| r.to_vec()),
        rewards.to_vec(),
        std_floor,
    )?;
    let out = grpo_loss(&rollout, params)?;
    let mut grad = vec![0.0; policy.params().len()];
    for (resp, row) in responses.iter().zip(&out.grad_logp) {
        for (&tok, &g) in resp.iter().zip(row) {
            if g != 0.0 {
                policy.accumulate_logp_grad(ctx, tok, g, &mut grad);
            }
        }
    }
    Ok((out, grad))
}

/// Which synthetic task a [`SyntheticEnv`] poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyTask {
    Reg,
    Rrg,
    Vtg,
}

impl std::str::FromStr for ToyTask {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "reg" => Ok(ToyTask::Reg),
            "rrg" => Ok(ToyTask::Rrg),
            "vtg" => Ok(ToyTask::Vtg),
            _ => Err(format!("unknown toy task `{s}` (expected reg, rrg or vtg)")),
        }
    }
}

/// Shortest and longest trace a VTG response may commit to.
const MIN_TRACE_LEN: usize = 2;
const MAX_TRACE_LEN: usize = TRACE_POINT_COUNT;

/// A desk-scale pointing environment over a cell grid. Each context carries
/// its own verification; responses are cell choices rendered at cell centers.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    task: ToyTask,
    grid_w: u32,
    grid_h: u32,
    cell_px: f64,
    contexts: Vec<Verification>,
    spec: RewardSpec,
    parse: ParseOptions,
}

impl SyntheticEnv {
    fn image_dims(grid_w: u32, grid_h: u32, cell_px: f64) -> ImageMeta {
        ImageMeta {
            width: (grid_w as f64 * cell_px) as u32,
            height: (grid_h as f64 * cell_px) as u32,
        }
    }

    fn random_box_contexts(
        grid_w: u32,
        grid_h: u32,
        cell_px: f64,
        n: usize,
        box_cells: u32,
        seed: u64,
    ) -> Result<Vec<Verification>> {
        if box_cells == 0 || box_cells > grid_w || box_cells > grid_h {
            return Err(Error::InvalidConfig(format!(
                "box of {box_cells} cells does not fit a {grid_w}x{grid_h} grid"
            )));
        }
        let dims = Self::image_dims(grid_w, grid_h, cell_px);
        let mut rng = stream_rng(seed, &[0xB0C5]);
        let px = cell_px as u32;
        (0..n)
            .map(|_| {
                let cx = rng.random_range(0..=grid_w - box_cells);
                let cy = rng.random_range(0..=grid_h - box_cells);
                let region = BoxRegion {
                    x0: cx * px,
                    y0: cy * px,
                    x1: (cx + box_cells) * px - 1,
                    y1: (cy + box_cells) * px - 1,
                };
                Ok(Verification::mask(Mask::from_boxes(dims, vec![region])?))
            })
            .collect()
    }

    /// Referring-expression toy: a random `box_cells`-square mask per context.
    pub fn reg(grid: u32, contexts: usize, box_cells: u32, cell_px: u32, spec: RewardSpec, seed: u64) -> Result<Self> {
        Self::check_spec(&spec, TaskKind::REG)?;
        Ok(Self {
            task: ToyTask::Reg,
            grid_w: grid,
            grid_h: grid,
            cell_px: cell_px as f64,
            contexts: Self::random_box_contexts(grid, grid, cell_px as f64, contexts, box_cells, seed)?,
            spec,
            parse: ParseOptions::default(),
        })
    }

    /// Region-referring toy: same masks, scored with mask plus distance terms.
    pub fn rrg(grid: u32, contexts: usize, box_cells: u32, cell_px: u32, spec: RewardSpec, seed: u64) -> Result<Self> {
        Self::check_spec(&spec, TaskKind::RRG)?;
        Ok(Self {
            task: ToyTask::Rrg,
            grid_w: grid,
            grid_h: grid,
            cell_px: cell_px as f64,
            contexts: Self::random_box_contexts(grid, grid, cell_px as f64, contexts, box_cells, seed)?,
            spec,
            parse: ParseOptions::default(),
        })
    }

    /// Visual-trace toy: straight ground-truth corridors of 8 cell-centered
    /// points (horizontal, vertical or diagonal, either direction). A response
    /// first commits to a length in 2..=8, then picks a cell per point.
    /// `point_count_constraint` toggles the 8-point format rule.
    pub fn vtg(grid: u32, contexts: usize, cell_px: u32, spec: RewardSpec, point_count_constraint: bool, seed: u64) -> Result<Self> {
        Self::check_spec(&spec, TaskKind::VTG)?;
        let span = 2 * (TRACE_POINT_COUNT as u32 - 1);
        if grid < span + 2 {
            return Err(Error::InvalidConfig(format!(
                "VTG toy needs a grid of at least {} cells",
                span + 2
            )));
        }
        let dims = Self::image_dims(grid, grid, cell_px as f64);
        let mut rng = stream_rng(seed, &[0x7ACE]);
        let px = cell_px as f64;
        let center = |c: u32| (c as f64 + 0.5) * px;
        let mut traces = Vec::with_capacity(contexts);
        for ctx in 0..contexts {
            let lane = rng.random_range(1..grid - 1);
            let start = rng.random_range(0..=grid - 1 - span);
            let cells: Vec<(u32, u32)> = (0..TRACE_POINT_COUNT as u32)
                .map(|t| match ctx % 3 {
                    0 => (start + 2 * t, lane),
                    1 => (lane, start + 2 * t),
                    _ => (start + 2 * t, start + 2 * t),
                })
                .collect();
            let mut pts: Vec<Point2D> = cells
                .into_iter()
                .map(|(x, y)| Point2D::new(center(x), center(y)))
                .collect();
            if rng.random_bool(0.5) {
                pts.reverse();
            }
            traces.push(Verification::Trace(Trajectory2D::new(pts, dims)?));
        }
        Ok(Self {
            task: ToyTask::Vtg,
            grid_w: grid,
            grid_h: grid,
            cell_px: px,
            contexts: traces,
            spec,
            parse: ParseOptions {
                enforce_trace_count: point_count_constraint,
                ..ParseOptions::default()
            },
        })
    }

    fn check_spec(spec: &RewardSpec, task: TaskKind) -> Result<()> {
        if spec.task() != task {
            return Err(Error::InvalidConfig(format!(
                "toy environment needs a {task} reward spec, got {}",
                spec.task()
            )));
        }
        Ok(())
    }

    pub fn task(&self) -> ToyTask {
        self.task
    }

    pub fn task_kind(&self) -> TaskKind {
        match self.task {
            ToyTask::Reg => TaskKind::REG,
            ToyTask::Rrg => TaskKind::RRG,
            ToyTask::Vtg => TaskKind::VTG,
        }
    }

    pub fn spec(&self) -> &RewardSpec {
        &self.spec
    }

    pub fn contexts(&self) -> &[Verification] {
        &self.contexts
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn parse_options(&self) -> ParseOptions {
        self.parse
    }

    fn cells(&self) -> usize {
        (self.grid_w * self.grid_h) as usize
    }

    /// Head layout: a single cell head for REG/RRG; for VTG a length head
    /// followed by one cell head per (length, position).
    pub fn head_sizes(&self) -> Vec<usize> {
        match self.task {
            ToyTask::Reg | ToyTask::Rrg => vec![self.cells()],
            ToyTask::Vtg => {
                let positions: usize = (MIN_TRACE_LEN..=MAX_TRACE_LEN).sum();
                let mut heads = vec![MAX_TRACE_LEN - MIN_TRACE_LEN + 1];
                heads.extend(std::iter::repeat_n(self.cells(), positions));
                heads
            }
        }
    }

    fn position_head(len: usize, j: usize) -> usize {
        1 + (MIN_TRACE_LEN..len).sum::<usize>() + j
    }

    pub fn initial_policy(&self) -> Result<GridPolicy> {
        GridPolicy::new(self.num_contexts(), self.head_sizes(), 1.0)
    }

    pub fn sample_response(&self, policy: &GridPolicy, ctx: usize, rng: &mut impl Rng) -> Vec<Token> {
        match self.task {
            ToyTask::Reg | ToyTask::Rrg => vec![Token {
                head: 0,
                action: policy.sample(ctx, 0, rng),
            }],
            ToyTask::Vtg => {
                let len_action = policy.sample(ctx, 0, rng);
                let len = MIN_TRACE_LEN + len_action;
                let mut tokens = vec![Token {
                    head: 0,
                    action: len_action,
                }];
                for j in 0..len {
                    let head = Self::position_head(len, j);
                    tokens.push(Token {
                        head,
                        action: policy.sample(ctx, head, rng),
                    });
                }
                tokens
            }
        }
    }

    fn cell_center(&self, cell: usize) -> Point2D {
        let w = self.grid_w as usize;
        Point2D::new(
            ((cell % w) as f64 + 0.5) * self.cell_px,
            ((cell / w) as f64 + 0.5) * self.cell_px,
        )
    }

    /// Points encoded by a token sequence.
    pub fn decode_points(&self, tokens: &[Token]) -> Vec<Point2D> {
        let cells = match self.task {
            ToyTask::Reg | ToyTask::Rrg => tokens,
            ToyTask::Vtg => &tokens[1..],
        };
        cells.iter().map(|t| self.cell_center(t.action)).collect()
    }

    /// Canonical response text for a token sequence.
    pub fn render(&self, tokens: &[Token]) -> String {
        format!(
            "<think>{}</think><answer>{}</answer>",
            THINK_PLACEHOLDER,
            render_point_block(&self.decode_points(tokens), None)
        )
    }

    /// Render, parse and score one response.
    pub fn score(&self, ctx: usize, tokens: &[Token]) -> Result<ScoredSample> {
        let text = self.render(tokens);
        let parsed = parse_with(&text, self.task_kind(), self.parse);
        let breakdown = compose(&parsed, &self.contexts[ctx], &self.spec)?;
        let primary = match self.task {
            ToyTask::Reg | ToyTask::Rrg => Primitive::Mask,
            ToyTask::Vtg => Primitive::Trace,
        };
        Ok(ScoredSample {
            reward: breakdown.total,
            format_ok: parsed.tags_valid,
            primary: breakdown.components.get(&primary).copied().unwrap_or(0.0),
            point_count: parsed.points.len(),
        })
    }
}

const THINK_PLACEHOLDER: &str = "locate the target";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub reward: f64,
    pub format_ok: bool,
    /// The task's main component: `mask` for REG/RRG, `trace` for VTG.
    pub primary: f64,
    pub point_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub clip_eps: f64,
    pub kl_coeff: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub group_size: usize,
    pub seed: u64,
    pub std_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip_eps: DEFAULT_CLIP_EPS,
            kl_coeff: DEFAULT_KL_COEFF,
            learning_rate: 0.5,
            steps: 300,
            group_size: DEFAULT_GROUP_SIZE,
            seed: 0,
            std_floor: DEFAULT_STD_FLOOR,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::InvalidConfig(format!("clip_eps {} not in (0, 1)", self.clip_eps)));
        }
        if !(self.kl_coeff >= 0.0) {
            return Err(Error::InvalidConfig(format!("kl_coeff {} is negative", self.kl_coeff)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.group_size < 2 {
            return Err(Error::GroupTooSmall(self.group_size));
        }
        if !(self.std_floor >= 0.0) {
            return Err(Error::InvalidConfig("std_floor must be non-negative".into()));
        }
        Ok(())
    }

    pub fn surrogate(&self) -> SurrogateParams {
        SurrogateParams {
            clip_eps: self.clip_eps,
            kl_coeff: self.kl_coeff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_format_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<CurvePoint>,
    pub policy: GridPolicy,
}

/// Independent random stream for a tuple of indices.
pub fn stream_rng(seed: u64, ids: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed ^ 0x5EED_0F_6A77);
    for &id in ids {
        h = splitmix64(h ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Sampled {
    tokens: Vec<Token>,
    logp_old: Vec<f64>,
    scored: ScoredSample,
}

const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

fn sample_group(
    env: &SyntheticEnv,
    policy: &GridPolicy,
    ctx: usize,
    g: usize,
    seed: u64,
    stream: u64,
    step: usize,
) -> Result<Vec<Sampled>> {
    (0..g)
        .map(|i| {
            let mut rng = stream_rng(seed, &[stream, step as u64, ctx as u64, i as u64]);
            let tokens = env.sample_response(policy, ctx, &mut rng);
            let logp_old = tokens.iter().map(|&t| policy.log_prob(ctx, t)).collect();
            let scored = env.score(ctx, &tokens)?;
            Ok(Sampled {
                tokens,
                logp_old,
                scored,
            })
        })
        .collect()
}

/// GRPO training: per step, sample `G` responses per context from a snapshot
/// of the policy, score them through the full reward path, and take one
/// gradient step on the surrogate. Contexts are sampled on `parallelism`
/// workers with per-sample random streams, so results do not depend on the
/// worker count.
pub fn run_training(
    env: &SyntheticEnv,
    policy: GridPolicy,
    cfg: &TrainConfig,
    parallelism: Parallelism,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if policy.head_sizes() != env.head_sizes().as_slice() || policy.contexts() != env.num_contexts() {
        return Err(Error::InvalidConfig("policy layout does not match the environment".into()));
    }
    let exec = Executor::new(parallelism)?;
    let reference = policy.clone();
    let mut policy = policy;
    let params = cfg.surrogate();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let old = policy.clone();
        let groups = exec.map_range(env.num_contexts(), |ctx| {
            sample_group(env, &old, ctx, cfg.group_size, cfg.seed, TRAIN_STREAM, step)
        });
        let mut grad = vec![0.0; policy.params().len()];
        let (mut reward_sum, mut format_sum, mut n) = (0.0, 0.0, 0usize);
        for (ctx, group) in groups.into_iter().enumerate() {
            let group = group?;
            let responses: Vec<Vec<Token>> = group.iter().map(|s| s.tokens.clone()).collect();
            let logp_old: Vec<Vec<f64>> = group.iter().map(|s| s.logp_old.clone()).collect();
            let rewards: Vec<f64> = group.iter().map(|s| s.scored.reward).collect();
            let logp_ref: Option<Vec<Vec<f64>>> = (cfg.kl_coeff != 0.0).then(|| {
                responses
                    .iter()
                    .map(|r| r.iter().map(|&t| reference.log_prob(ctx, t)).collect())
                    .collect()
            });
            let (_, g) = policy_surrogate(
                &policy,
                ctx,
                &responses,
                &logp_old,
                logp_ref.as_deref(),
                &rewards,
                &params,
                cfg.std_floor,
            )?;
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
            for s in &group {
                reward_sum += s.scored.reward;
                format_sum += if s.scored.format_ok { 1.0 } else { 0.0 };
                n += 1;
            }
        }
        for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
        curve.push(CurvePoint {
            step,
            mean_reward: reward_sum / n as f64,
            mean_format_rate: format_sum / n as f64,
        });
    }
    Ok(TrainOutcome { curve, policy })
}

/// Summary of responses sampled from a fixed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEval {
    pub samples: usize,
    pub mean_reward: f64,
    pub format_rate: f64,
    /// Mean of the task's main component (`mask` or `trace`).
    pub mean_primary: f64,
    pub mean_point_count: f64,
    /// Fraction of responses carrying exactly 8 points.
    pub full_trace_rate: f64,
}

pub fn evaluate_policy(
    env: &SyntheticEnv,
    policy: &GridPolicy,
    samples_per_context: usize,
    seed: u64,
    parallelism: Parallelism,
) -> Result<PolicyEval> {
    let exec = Executor::new(parallelism)?;
    let groups = exec.map_range(env.num_contexts(), |ctx| {
        sample_group(env, policy, ctx, samples_per_context, seed, EVAL_STREAM, 0)
    });
    let (mut reward, mut format, mut primary, mut points, mut full, mut n) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0usize);
    for group in groups {
        for s in group? {
            reward += s.scored.reward;
            format += if s.scored.format_ok { 1.0 } else { 0.0 };
            primary += s.scored.primary;
            points += s.scored.point_count as f64;
            full += if s.scored.point_count == TRACE_POINT_COUNT { 1.0 } else { 0.0 };
            n += 1;
        }
    }
    let n_f = n.max(1) as f64;
    Ok(PolicyEval {
        samples: n,
        mean_reward: reward / n_f,
        format_rate: format / n_f,
        mean_primary: primary / n_f,
        mean_point_count: points / n_f,
        full_trace_rate: full / n_f,
    })
}

/// Learning curve as CSV: `step,mean_reward,mean_format_rate`.
pub fn write_curve_csv(curve: &[CurvePoint], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "step,mean_reward,mean_format_rate")?;
    for p in curve {
        writeln!(out, "{},{},{}", p.step, p.mean_reward, p.mean_format_rate)?;
    }
    Ok(())
}

/// Reward spec used by the toy environments: the shipped preset weights with
/// thresholds scaled to the toy image size.
pub fn toy_spec(base: &RewardSpec, thresholds: Thresholds) -> Result<RewardSpec> {
    base.clone().with_thresholds(thresholds)
}
