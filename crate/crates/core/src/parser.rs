//! Structured-output parsing for model responses.
//!
//! Grammar: `<think>` T `</think>` followed by `<answer>` A `</answer>`. For
//! pointing tasks A holds exactly one `<point>[[x1, y1], ...]</point>` block.
//! Parsing is total: every input yields a [`ParsedResponse`], failures are
//! recorded in `failure_reason`.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::geometry::Point2D;

/// Number of points a visual trace must carry.
pub const TRACE_POINT_COUNT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    GeneralQA,
    SpatialQA,
    REG,
    RRG,
    RRG3D,
    #[serde(alias = "OAG")]
    OFG,
    VTG,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::GeneralQA,
        TaskKind::SpatialQA,
        TaskKind::REG,
        TaskKind::RRG,
        TaskKind::RRG3D,
        TaskKind::OFG,
        TaskKind::VTG,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::GeneralQA => "GeneralQA",
            TaskKind::SpatialQA => "SpatialQA",
            TaskKind::REG => "REG",
            TaskKind::RRG => "RRG",
            TaskKind::RRG3D => "RRG3D",
            TaskKind::OFG => "OFG",
            TaskKind::VTG => "VTG",
        }
    }

    pub fn is_qa(self) -> bool {
        matches!(self, TaskKind::GeneralQA | TaskKind::SpatialQA)
    }

    /// Tasks whose answer is a `<point>` block.
    pub fn is_pointing(self) -> bool {
        !self.is_qa()
    }

    /// Tasks verified against a mask.
    pub fn uses_mask(self) -> bool {
        matches!(self, TaskKind::REG | TaskKind::RRG | TaskKind::OFG)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "generalqa" | "qa" => TaskKind::GeneralQA,
            "spatialqa" => TaskKind::SpatialQA,
            "reg" => TaskKind::REG,
            "rrg" => TaskKind::RRG,
            "rrg3d" | "3drrg" => TaskKind::RRG3D,
            "ofg" | "oag" => TaskKind::OFG,
            "vtg" => TaskKind::VTG,
            _ => return Err(format!("unknown task `{s}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureReason {
    MissingThink,
    MissingAnswer,
    MalformedPointBlock,
    WrongPointCount,
    NonNumericCoordinate,
    TrailingContent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    /// Text around the tag pairs is tolerated.
    #[default]
    Lenient,
    /// Only whitespace may surround the tag pairs and the point block.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOptions {
    pub mode: ParseMode,
    /// Require exactly [`TRACE_POINT_COUNT`] points for VTG answers.
    pub enforce_trace_count: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            mode: ParseMode::Lenient,
            enforce_trace_count: true,
        }
    }
}

impl ParseOptions {
    pub fn strict() -> Self {
        Self {
            mode: ParseMode::Strict,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub task: TaskKind,
    pub think_text: String,
    pub answer_text: String,
    pub points: Vec<Point2D>,
    pub depth_mm: Option<f64>,
    pub tags_valid: bool,
    pub failure_reason: Option<FailureReason>,
}

impl ParsedResponse {
    fn failed(task: TaskKind, reason: FailureReason) -> Self {
        Self {
            task,
            think_text: String::new(),
            answer_text: String::new(),
            points: Vec::new(),
            depth_mm: None,
            tags_valid: false,
            failure_reason: Some(reason),
        }
    }

    /// Render in the canonical prompt format.
    pub fn to_canonical(&self) -> String {
        let answer = if self.task.is_pointing() {
            render_point_block(&self.points, self.depth_mm)
        } else {
            self.answer_text.clone()
        };
        format!(
            "<think>{}</think><answer>{}</answer>",
            self.think_text, answer
        )
    }
}

/// `<point>[[x1, y1], [x2, y2]]</point>`; with a depth, a single `[[x, y, d]]` triple.
pub fn render_point_block(points: &[Point2D], depth_mm: Option<f64>) -> String {
    let body = match (depth_mm, points) {
        (Some(d), [p]) => format!("[{}, {}, {}]", p.x, p.y, d),
        _ => points
            .iter()
            .map(|p| format!("[{}, {}]", p.x, p.y))
            .collect::<Vec<_>>()
            .join(", "),
    };
    format!("<point>[{body}]</point>")
}

pub fn parse(raw: &str, task: TaskKind) -> ParsedResponse {
    parse_with(raw, task, ParseOptions::default())
}

pub fn parse_with(raw: &str, task: TaskKind, opts: ParseOptions) -> ParsedResponse {
    const THINK_OPEN: &str = "<think>";
    const THINK_CLOSE: &str = "</think>";
    const ANSWER_OPEN: &str = "<answer>";
    const ANSWER_CLOSE: &str = "</answer>";

    let Some(think_start) = raw.find(THINK_OPEN) else {
        return ParsedResponse::failed(task, FailureReason::MissingThink);
    };
    let think_body_start = think_start + THINK_OPEN.len();
    let Some(think_len) = raw[think_body_start..].find(THINK_CLOSE) else {
        return ParsedResponse::failed(task, FailureReason::MissingThink);
    };
    let think_text = raw[think_body_start..think_body_start + think_len].trim();
    let after_think = think_body_start + think_len + THINK_CLOSE.len();

    let Some(answer_off) = raw[after_think..].find(ANSWER_OPEN) else {
        return ParsedResponse::failed(task, FailureReason::MissingAnswer);
    };
    let answer_start = after_think + answer_off;
    let answer_body_start = answer_start + ANSWER_OPEN.len();
    let Some(answer_len) = raw[answer_body_start..].find(ANSWER_CLOSE) else {
        return ParsedResponse::failed(task, FailureReason::MissingAnswer);
    };
    let answer_text = raw[answer_body_start..answer_body_start + answer_len].trim();
    let tail_start = answer_body_start + answer_len + ANSWER_CLOSE.len();

    let outside_is_blank = raw[..think_start].trim().is_empty()
        && raw[after_think..answer_start].trim().is_empty()
        && raw[tail_start..].trim().is_empty();

    let mut resp = ParsedResponse {
        task,
        think_text: think_text.to_string(),
        answer_text: answer_text.to_string(),
        points: Vec::new(),
        depth_mm: None,
        tags_valid: false,
        failure_reason: None,
    };

    if task.is_pointing() {
        match parse_point_answer(answer_text, task, opts.mode) {
            Ok((points, depth)) => {
                resp.points = points;
                resp.depth_mm = depth;
            }
            Err(reason) => {
                resp.failure_reason = Some(reason);
                return resp;
            }
        }
        if task == TaskKind::VTG
            && opts.enforce_trace_count
            && resp.points.len() != TRACE_POINT_COUNT
        {
            resp.failure_reason = Some(FailureReason::WrongPointCount);
            return resp;
        }
    }

    if opts.mode == ParseMode::Strict && !outside_is_blank {
        resp.failure_reason = Some(FailureReason::TrailingContent);
        return resp;
    }
    resp.tags_valid = true;
    resp
}

type PointAnswer = (Vec<Point2D>, Option<f64>);

fn parse_point_answer(
    answer: &str,
    task: TaskKind,
    mode: ParseMode,
) -> Result<PointAnswer, FailureReason> {
    const OPEN: &str = "<point>";
    const CLOSE: &str = "</point>";
    if answer.matches(OPEN).count() != 1 || answer.matches(CLOSE).count() != 1 {
        return Err(FailureReason::MalformedPointBlock);
    }
    let start = answer.find(OPEN).unwrap() + OPEN.len();
    let Some(len) = answer[start..].find(CLOSE) else {
        return Err(FailureReason::MalformedPointBlock);
    };
    if mode == ParseMode::Strict {
        let before = &answer[..start - OPEN.len()];
        let after = &answer[start + len + CLOSE.len()..];
        if !before.trim().is_empty() || !after.trim().is_empty() {
            return Err(FailureReason::TrailingContent);
        }
    }
    let tuples = parse_tuple_list(&answer[start..start + len])?;
    if tuples.is_empty() {
        return Err(FailureReason::MalformedPointBlock);
    }
    if task == TaskKind::RRG3D {
        match tuples.as_slice() {
            [t] if t.len() == 3 => Ok((vec![Point2D::new(t[0], t[1])], Some(t[2]))),
            _ => Err(FailureReason::MalformedPointBlock),
        }
    } else if tuples.iter().all(|t| t.len() == 2) {
        Ok((tuples.iter().map(|t| Point2D::new(t[0], t[1])).collect(), None))
    } else {
        Err(FailureReason::MalformedPointBlock)
    }
}

/// Parse `[[a, b], [c, d], ...]` into numeric tuples of any arity.
fn parse_tuple_list(body: &str) -> Result<Vec<Vec<f64>>, FailureReason> {
    use FailureReason::{MalformedPointBlock as Malformed, NonNumericCoordinate};

    let mut cur = Cursor::new(body);
    cur.expect('[').ok_or(Malformed)?;
    let mut tuples = Vec::new();
    if cur.eat(']') {
        return if cur.at_end() { Ok(tuples) } else { Err(Malformed) };
    }
    loop {
        cur.expect('[').ok_or(Malformed)?;
        let mut tuple = Vec::new();
        loop {
            let token = cur.number_token();
            if token.is_empty() {
                return Err(match cur.peek() {
                    Some(c) if c.is_alphanumeric() || c == '_' => NonNumericCoordinate,
                    _ => Malformed,
                });
            }
            let value = parse_decimal(token).ok_or(NonNumericCoordinate)?;
            // "12abc" style tokens
            if matches!(cur.peek(), Some(c) if c.is_alphanumeric()) {
                return Err(NonNumericCoordinate);
            }
            tuple.push(value);
            if cur.eat(',') {
                continue;
            }
            cur.expect(']').ok_or(Malformed)?;
            break;
        }
        tuples.push(tuple);
        if cur.eat(',') {
            continue;
        }
        cur.expect(']').ok_or(Malformed)?;
        break;
    }
    if cur.at_end() {
        Ok(tuples)
    } else {
        Err(Malformed)
    }
}

fn parse_decimal(token: &str) -> Option<f64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$").expect("decimal regex")
    });
    if !re.is_match(token) {
        return None;
    }
    token.parse::<f64>().ok().filter(|v| v.is_finite())
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }

    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.text[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Option<()> {
        self.eat(c).then_some(())
    }

    fn number_token(&mut self) -> &'a str {
        self.skip_ws();
        let rest = &self.text[self.pos..];
        let len = rest
            .find(|c: char| !(c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | 'e' | 'E')))
            .unwrap_or(rest.len());
        self.pos += len;
        &rest[..len]
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos == self.text.len()
    }
}

/// Normalize a multiple-choice answer. Bare or decorated labels ("B", "(c)",
/// "B.", "B) the cup", "The answer is B.") become an uppercase letter; any
/// other answer is trimmed and lowercased for exact comparison.
pub fn extract_choice(answer_text: &str) -> String {
    static PATTERNS: OnceLock<[Regex; 3]> = OnceLock::new();
    let [whole, phrase, leading] = PATTERNS.get_or_init(|| {
        [
            Regex::new(r"^\(?\s*([A-Za-z])\s*\)?\s*[.:,;!]?$").unwrap(),
            Regex::new(
                r"(?i)\b(?:answer|option|choice)\s*(?:is|:)?\s*(?:option\s+)?\(?([A-Za-z])\)?(?:[\s.,;:!]|$)",
            )
            .unwrap(),
            Regex::new(r"^(?:\(([A-Za-z])\)|([A-Za-z])[.:,;)])(?:\s|$)").unwrap(),
        ]
    });
    let text = answer_text.trim();
    let label = whole
        .captures(text)
        .and_then(|c| c.get(1))
        .or_else(|| phrase.captures(text).and_then(|c| c.get(1)))
        .or_else(|| {
            leading
                .captures(text)
                .and_then(|c| c.get(1).or_else(|| c.get(2)))
        });
    match label {
        Some(m) => m.as_str().to_ascii_uppercase(),
        None => text.to_lowercase(),
    }
}
