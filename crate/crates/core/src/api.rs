//! Stateless JSON-in, JSON-out entry points for foreign-language bindings.
//!
//! Every function takes JSON (or raw strings) and returns JSON or an
//! [`ApiError`] whose `code` is [`Error::code`] of the underlying failure.
//! `BadRequest` marks payloads that do not deserialize.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Error;
use crate::grpo::{self, GroupRollout, SurrogateParams, DEFAULT_STD_FLOOR};
use crate::parser::{self, ParseOptions, TaskKind};
use crate::reward::{self, RewardSpec, VerificationSpec};
use crate::trace::{self, Trajectory2D};

/// Names accepted by [`dispatch`].
pub const FUNCTIONS: [&str; 7] = [
    "parse",
    "score_response",
    "trace_rmse",
    "trace_mae",
    "trace_resample",
    "group_advantages",
    "grpo_loss_terms",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

fn bad_request(what: &str, e: impl std::fmt::Display) -> ApiError {
    ApiError {
        code: "BadRequest".into(),
        message: format!("{what}: {e}"),
    }
}

fn from_json<T: for<'de> Deserialize<'de>>(what: &str, text: &str) -> ApiResult<T> {
    serde_json::from_str(text).map_err(|e| bad_request(what, e))
}

fn from_value<T: for<'de> Deserialize<'de>>(what: &str, v: Value) -> ApiResult<T> {
    serde_json::from_value(v).map_err(|e| bad_request(what, e))
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("API results serialize")
}

/// Parse a raw response for `task`; `options` is an optional ParseOptions object.
pub fn parse(raw: &str, task: &str, options: Option<&str>) -> ApiResult<String> {
    let task: TaskKind = task.parse().map_err(|e: String| bad_request("task", e))?;
    let opts: ParseOptions = match options {
        Some(o) => from_json("options", o)?,
        None => ParseOptions::default(),
    };
    Ok(to_json(&parser::parse_with(raw, task, opts)))
}

/// Parse and compose a reward; `preset` is a RewardSpec object whose task
/// selects the parser grammar.
pub fn score_response(raw: &str, verification: &str, preset: &str) -> ApiResult<String> {
    let spec: RewardSpec = from_json("preset", preset)?;
    let verification: VerificationSpec = from_json("verification", verification)?;
    let verification = verification.load(None)?;
    let parsed = parser::parse(raw, spec.task());
    Ok(to_json(&reward::compose(&parsed, &verification, &spec)?))
}

pub fn trace_rmse(a: &str, b: &str) -> ApiResult<f64> {
    let a: Trajectory2D = from_json("a", a)?;
    let b: Trajectory2D = from_json("b", b)?;
    Ok(trace::rmse(&a, &b)?)
}

pub fn trace_mae(a: &str, b: &str) -> ApiResult<f64> {
    let a: Trajectory2D = from_json("a", a)?;
    let b: Trajectory2D = from_json("b", b)?;
    Ok(trace::mae(&a, &b)?)
}

/// Optionally spline-smooth, then resample to `n` equidistant points.
pub fn trace_resample(traj: &str, n: usize, smooth: bool) -> ApiResult<String> {
    let t: Trajectory2D = from_json("trajectory", traj)?;
    Ok(to_json(&trace::process_trace(&t, n, smooth)?))
}

pub fn group_advantages(rewards: &str, std_floor: Option<f64>) -> ApiResult<String> {
    let r: Vec<f64> = from_json("rewards", rewards)?;
    Ok(to_json(&grpo::group_advantages(&r, std_floor.unwrap_or(DEFAULT_STD_FLOOR))?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RolloutJson {
    responses: Vec<Vec<usize>>,
    logp_new: Vec<Vec<f64>>,
    logp_old: Vec<Vec<f64>>,
    #[serde(default)]
    logp_ref: Option<Vec<Vec<f64>>>,
    rewards: Vec<f64>,
    #[serde(default)]
    std_floor: Option<f64>,
}

/// Surrogate loss, objective and `d loss / d logp_new` for one group. The
/// rollout object carries `responses`, `logp_new`, `logp_old`, `rewards` and
/// optionally `logp_ref` and `std_floor`; `params` is `{clip_eps, kl_coeff}`.
pub fn grpo_loss_terms(rollout: &str, params: &str) -> ApiResult<String> {
    let r: RolloutJson = from_json("rollout", rollout)?;
    let params: SurrogateParams = from_json("params", params)?;
    let rollout = GroupRollout::new(
        r.responses,
        r.logp_new,
        r.logp_old,
        r.logp_ref,
        r.rewards,
        r.std_floor.unwrap_or(DEFAULT_STD_FLOOR),
    )?;
    let out = grpo::grpo_loss(&rollout, &params)?;
    Ok(to_json(&json!({
        "loss": out.loss,
        "objective": out.objective,
        "advantages": rollout.advantages.iter().map(|a| a.first().copied().unwrap_or(0.0)).collect::<Vec<_>>(),
        "grad_logp": out.grad_logp,
        "kl": out.kl,
        "clip_fraction": out.clip_fraction,
    })))
}

fn field<T: for<'de> Deserialize<'de>>(args: &Value, name: &str) -> ApiResult<T> {
    from_value(name, args.get(name).cloned().unwrap_or(Value::Null))
}

fn raw_field(args: &Value, name: &str) -> ApiResult<String> {
    match args.get(name) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(v) if !v.is_null() => Ok(v.to_string()),
        _ => Err(bad_request(name, "missing")),
    }
}

/// Single entry point: `function` names one of [`FUNCTIONS`], `args` is a
/// JSON object of its arguments. Returns `{"ok": result}` or
/// `{"error": {"code", "message"}}`; never panics on bad input.
pub fn dispatch(function: &str, args: &str) -> String {
    let result = (|| -> ApiResult<Value> {
        let args: Value = from_json("args", args)?;
        let text = |s: String| serde_json::from_str::<Value>(&s).expect("valid JSON");
        Ok(match function {
            "parse" => {
                let opts = args.get("options").filter(|v| !v.is_null()).map(Value::to_string);
                text(parse(&field::<String>(&args, "raw")?, &field::<String>(&args, "task")?, opts.as_deref())?)
            }
            "score_response" => text(score_response(
                &field::<String>(&args, "raw")?,
                &raw_field(&args, "verification")?,
                &raw_field(&args, "preset")?,
            )?),
            "trace_rmse" => json!(trace_rmse(&raw_field(&args, "a")?, &raw_field(&args, "b")?)?),
            "trace_mae" => json!(trace_mae(&raw_field(&args, "a")?, &raw_field(&args, "b")?)?),
            "trace_resample" => text(trace_resample(
                &raw_field(&args, "trajectory")?,
                field(&args, "n")?,
                field::<Option<bool>>(&args, "smooth")?.unwrap_or(false),
            )?),
            "group_advantages" => text(group_advantages(
                &raw_field(&args, "rewards")?,
                field(&args, "std_floor")?,
            )?),
            "grpo_loss_terms" => text(grpo_loss_terms(
                &raw_field(&args, "rollout")?,
                &raw_field(&args, "params")?,
            )?),
            other => return Err(bad_request("function", format!("unknown function `{other}`"))),
        })
    })();
    match result {
        Ok(v) => json!({ "ok": v }).to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}
