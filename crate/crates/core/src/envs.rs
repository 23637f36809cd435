//! Synthetic token-sequence tasks and the named reward components scored on
//! their completions.
//!
//! A task maps each prompt to a one-hot slot (the prompt "key") and an answer
//! token. Completions are fixed-length token strings; the answer is read at
//! the slot right after the first `open_tag .. close_tag` pair, falling back
//! to the final token when no such pair is followed by a token.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use crate::error::{invalid, Error, Result};
use crate::numeric::RngStream;

pub type Token = usize;

pub const ACCURACY: &str = "accuracy";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecialTokens {
    pub pad: Token,
    pub open_tag: Token,
    pub close_tag: Token,
}

impl SpecialTokens {
    /// `pad = 0`, tags on the two highest ids.
    pub fn for_vocab(vocab_size: usize) -> Self {
        Self {
            pad: 0,
            open_tag: vocab_size - 2,
            close_tag: vocab_size - 1,
        }
    }

    pub fn is_special(&self, t: Token) -> bool {
        t == self.pad || t == self.open_tag || t == self.close_tag
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    /// Stands in for the math datasets: tag/format auxiliaries.
    MathLike,
    /// Stands in for the code dataset: code_format plus one style auxiliary.
    CodeLike,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::MathLike => "math",
            TaskKind::CodeLike => "code",
        }
    }
}

/// One synthetic task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub label: String,
    pub kind: TaskKind,
    pub vocab_size: usize,
    pub max_len: usize,
    pub special: SpecialTokens,
    /// Width of the prompt one-hot block. Shared by all tasks of a scenario
    /// so that every client runs the same architecture.
    pub prompt_dim: usize,
    /// prompt id -> one-hot slot in `0..prompt_dim`
    pub prompt_slot: Vec<usize>,
    /// prompt id -> answer token (the target map)
    pub target: Vec<Token>,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    /// Components averaged (unweighted) into the task's multi-objective reward.
    pub canonical: Vec<RewardComponent>,
}

impl TaskSpec {
    pub fn prompt_count(&self) -> usize {
        self.target.len()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(format!("task '{}': {m}", self.label)));
        if self.vocab_size < 4 {
            return cfg(format!("vocab_size {} too small", self.vocab_size));
        }
        if self.max_len == 0 {
            return cfg("max_len must be positive".into());
        }
        let s = self.special;
        if [s.pad, s.open_tag, s.close_tag].iter().any(|&t| t >= self.vocab_size) {
            return cfg("special token outside vocabulary".into());
        }
        if s.open_tag == s.close_tag || s.pad == s.open_tag || s.pad == s.close_tag {
            return cfg("special tokens must be distinct".into());
        }
        if self.prompt_slot.len() != self.target.len() {
            return cfg("prompt slot and target tables differ in length".into());
        }
        if let Some(&t) = self.target.iter().find(|&&t| t >= self.vocab_size) {
            return cfg(format!("answer token {t} outside vocabulary"));
        }
        if let Some(&k) = self.prompt_slot.iter().find(|&&k| k >= self.prompt_dim) {
            return cfg(format!("prompt slot {k} outside prompt_dim {}", self.prompt_dim));
        }
        if self.train.is_empty() {
            return cfg("no train prompts".into());
        }
        if self.eval.is_empty() {
            return cfg("no eval prompts".into());
        }
        let n = self.prompt_count();
        if let Some(&p) = self.train.iter().chain(&self.eval).find(|&&p| p >= n) {
            return cfg(format!("prompt id {p} has no target"));
        }
        if self.train.iter().any(|p| self.eval.contains(p)) {
            return cfg("train and eval prompt sets overlap".into());
        }
        validate_components(&self.canonical)
    }

    pub fn validate_completion(&self, c: &Completion) -> Result<()> {
        if c.prompt_id >= self.prompt_count() {
            return Err(invalid!("prompt id {} unknown to task '{}'", c.prompt_id, self.label));
        }
        if c.tokens.len() > self.max_len {
            return Err(invalid!("completion longer than max_len {}", self.max_len));
        }
        if let Some(&t) = c.tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(invalid!("token {t} outside vocabulary {}", self.vocab_size));
        }
        Ok(())
    }

    pub fn answer_for(&self, prompt_id: usize) -> Token {
        self.target[prompt_id]
    }
}

/// Parameters for generating a synthetic task.
#[derive(Clone, Debug)]
pub struct TaskLayout {
    pub label: String,
    pub kind: TaskKind,
    pub vocab_size: usize,
    pub max_len: usize,
    /// Distinct prompt keys; each key owns one one-hot slot and one answer.
    pub keys: usize,
    pub train_prompts: usize,
    pub eval_prompts: usize,
    /// First one-hot slot owned by this task.
    pub slot_offset: usize,
    pub prompt_dim: usize,
}

impl TaskLayout {
    pub fn new(label: &str, kind: TaskKind) -> Self {
        Self {
            label: label.to_string(),
            kind,
            vocab_size: 16,
            max_len: 8,
            keys: 8,
            train_prompts: 64,
            eval_prompts: 32,
            slot_offset: 0,
            prompt_dim: 8,
        }
    }

    /// Build the task. Prompt `i` gets key `i % keys`; the first
    /// `train_prompts` ids form the train split and the rest the eval split,
    /// so every key is represented in both. Answers are distinct content
    /// tokens drawn from `rng`.
    pub fn build(&self, rng: &mut RngStream) -> Result<TaskSpec> {
        let special = SpecialTokens::for_vocab(self.vocab_size.max(4));
        let content: Vec<Token> = (0..self.vocab_size)
            .filter(|&t| !special.is_special(t))
            .collect();
        if self.keys == 0 {
            return Err(Error::Config(format!("task '{}': keys must be positive", self.label)));
        }
        if self.keys > content.len() {
            return Err(Error::Config(format!(
                "task '{}': {} keys but only {} content tokens",
                self.label,
                self.keys,
                content.len()
            )));
        }
        if self.slot_offset + self.keys > self.prompt_dim {
            return Err(Error::Config(format!(
                "task '{}': key slots {}..{} exceed prompt_dim {}",
                self.label,
                self.slot_offset,
                self.slot_offset + self.keys,
                self.prompt_dim
            )));
        }

        let mut pool = content;
        rng.shuffle(&mut pool);
        let key_answer = &pool[..self.keys];

        let total = self.train_prompts + self.eval_prompts;
        let prompt_slot = (0..total).map(|i| self.slot_offset + i % self.keys).collect();
        let target = (0..total).map(|i| key_answer[i % self.keys]).collect();

        let task = TaskSpec {
            label: self.label.clone(),
            kind: self.kind,
            vocab_size: self.vocab_size,
            max_len: self.max_len,
            special,
            prompt_dim: self.prompt_dim,
            prompt_slot,
            target,
            train: (0..self.train_prompts).collect(),
            eval: (self.train_prompts..total).collect(),
            canonical: canonical_components(self.kind),
        };
        task.validate()?;
        Ok(task)
    }
}

/// A sampled (or hand-built) response to one prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Completion {
    pub prompt_id: usize,
    pub tokens: Vec<Token>,
}

/// A named reward component; every variant scores into `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub enum RewardComponent {
    Accuracy,
    Format,
    TagCount,
    Length { target_len: f64 },
    RepetitionPenalty,
    CodeFormat,
}

pub const DEFAULT_TARGET_LEN: f64 = 4.0;

impl RewardComponent {
    pub const NAMES: [&'static str; 6] = [
        "accuracy",
        "format",
        "tag_count",
        "length",
        "repetition_penalty",
        "code_format",
    ];

    /// Resolve a component by name. Unknown names and unknown parameters are
    /// configuration errors; this is the only place they can surface.
    pub fn parse(name: &str, params: &[(String, f64)]) -> Result<Self> {
        let reject_params = |allowed: &[&str]| -> Result<()> {
            match params.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
                Some((k, _)) => Err(Error::Config(format!(
                    "reward component '{name}' has no parameter '{k}'"
                ))),
                None => Ok(()),
            }
        };
        let comp = match name {
            "accuracy" => RewardComponent::Accuracy,
            "format" => RewardComponent::Format,
            "tag_count" => RewardComponent::TagCount,
            "repetition_penalty" => RewardComponent::RepetitionPenalty,
            "code_format" => RewardComponent::CodeFormat,
            "length" => {
                reject_params(&["target_len"])?;
                let target_len = params
                    .iter()
                    .find(|(k, _)| k == "target_len")
                    .map_or(DEFAULT_TARGET_LEN, |(_, v)| *v);
                if !(target_len.is_finite() && target_len >= 0.0) {
                    return Err(Error::Config(format!("length target_len {target_len} invalid")));
                }
                return Ok(RewardComponent::Length { target_len });
            }
            other => {
                return Err(Error::Config(format!("unknown reward component '{other}'")));
            }
        };
        reject_params(&[])?;
        Ok(comp)
    }

    pub fn name(&self) -> &'static str {
        match self {
            RewardComponent::Accuracy => "accuracy",
            RewardComponent::Format => "format",
            RewardComponent::TagCount => "tag_count",
            RewardComponent::Length { .. } => "length",
            RewardComponent::RepetitionPenalty => "repetition_penalty",
            RewardComponent::CodeFormat => "code_format",
        }
    }
}

/// Accuracy must be present and first; names must be unique.
pub fn validate_components(components: &[RewardComponent]) -> Result<()> {
    match components.first() {
        Some(RewardComponent::Accuracy) => {}
        _ => {
            return Err(Error::Config(
                "reward components must start with 'accuracy'".into(),
            ))
        }
    }
    for (i, c) in components.iter().enumerate() {
        if components[..i].iter().any(|d| d.name() == c.name()) {
            return Err(Error::Config(format!("duplicate reward component '{}'", c.name())));
        }
    }
    Ok(())
}

pub fn component_names(components: &[RewardComponent]) -> Vec<String> {
    components.iter().map(|c| c.name().to_string()).collect()
}

/// Canonical component set for a task kind: the union of its three reward
/// configurations.
pub fn canonical_components(kind: TaskKind) -> Vec<RewardComponent> {
    use RewardComponent::*;
    match kind {
        TaskKind::MathLike => vec![Accuracy, Format, TagCount],
        TaskKind::CodeLike => vec![
            Accuracy,
            CodeFormat,
            TagCount,
            Length {
                target_len: DEFAULT_TARGET_LEN,
            },
            RepetitionPenalty,
        ],
    }
}

/// The three heterogeneous reward configurations per task kind.
///
/// Math-like: A = [accuracy, format, tag_count], B = [accuracy, format],
/// C = [accuracy, tag_count]. Code-like: [accuracy, code_format, X] with
/// X = tag_count, length, repetition_penalty for A, B, C.
pub fn reward_config(kind: TaskKind, variant: usize) -> Vec<RewardComponent> {
    use RewardComponent::*;
    match (kind, variant % 3) {
        (TaskKind::MathLike, 0) => vec![Accuracy, Format, TagCount],
        (TaskKind::MathLike, 1) => vec![Accuracy, Format],
        (TaskKind::MathLike, _) => vec![Accuracy, TagCount],
        (TaskKind::CodeLike, 0) => vec![Accuracy, CodeFormat, TagCount],
        (TaskKind::CodeLike, 1) => vec![
            Accuracy,
            CodeFormat,
            Length {
                target_len: DEFAULT_TARGET_LEN,
            },
        ],
        (TaskKind::CodeLike, _) => vec![Accuracy, CodeFormat, RepetitionPenalty],
    }
}

/// Index of the token read as the answer.
///
/// The token right after the first `open_tag` .. `close_tag` pair when that
/// pair exists and is followed by a token; otherwise the final token.
pub fn answer_slot(tokens: &[Token], special: &SpecialTokens) -> Option<usize> {
    if tokens.is_empty() {
        return None;
    }
    let paired = tokens.iter().position(|&t| t == special.open_tag).and_then(|open| {
        tokens[open + 1..]
            .iter()
            .position(|&t| t == special.close_tag)
            .map(|off| open + 1 + off + 1)
    });
    match paired {
        Some(slot) if slot < tokens.len() => Some(slot),
        _ => Some(tokens.len() - 1),
    }
}

pub fn score_component(component: &RewardComponent, task: &TaskSpec, c: &Completion) -> f64 {
    let toks = &c.tokens;
    let sp = &task.special;
    let bool_score = |b: bool| if b { 1.0 } else { 0.0 };
    match component {
        RewardComponent::Accuracy => match answer_slot(toks, sp) {
            Some(i) => bool_score(toks[i] == task.answer_for(c.prompt_id)),
            None => 0.0,
        },
        RewardComponent::Format => bool_score(
            toks.len() >= 2 && toks[0] == sp.open_tag && toks[toks.len() - 1] == sp.close_tag,
        ),
        RewardComponent::TagCount => {
            let present = [sp.open_tag, sp.close_tag]
                .iter()
                .filter(|tag| toks.contains(tag))
                .count();
            present as f64 / 2.0
        }
        RewardComponent::Length { target_len } => {
            let nonpad = toks.iter().filter(|&&t| t != sp.pad).count() as f64;
            (1.0 - (nonpad - target_len).abs() / task.max_len as f64).clamp(0.0, 1.0)
        }
        RewardComponent::RepetitionPenalty => {
            if toks.len() <= 1 {
                1.0
            } else {
                let dups = toks.windows(2).filter(|w| w[0] == w[1]).count();
                1.0 - dups as f64 / (toks.len() - 1) as f64
            }
        }
        RewardComponent::CodeFormat => {
            let opens = toks.iter().filter(|&&t| t == sp.open_tag).count();
            let closes = toks.iter().filter(|&&t| t == sp.close_tag).count();
            let ordered = match (
                toks.iter().position(|&t| t == sp.open_tag),
                toks.iter().position(|&t| t == sp.close_tag),
            ) {
                (Some(o), Some(cl)) => o < cl,
                _ => false,
            };
            bool_score(opens == 1 && closes == 1 && ordered)
        }
    }
}

/// Score every component in declared order (accuracy first).
pub fn score_all(components: &[RewardComponent], task: &TaskSpec, c: &Completion) -> Vec<f64> {
    components.iter().map(|comp| score_component(comp, task, c)).collect()
}
