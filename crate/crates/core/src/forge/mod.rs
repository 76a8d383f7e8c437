//! Annotated temporal questions: data types, JSONL I/O, generation from a
//! template bank, the brute-force answer oracle and signature-grouped splits.

mod generate;
mod oracle;
mod split;
mod templates;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tkg::{EntityId, TimeId};
use crate::{Result, TqrError};

pub use generate::{generate_dataset, generate_unseen_combos, Mix};
pub use oracle::answer_oracle;
pub use split::{split_dataset, Splits};
pub use templates::{Template, TemplateBank};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QType {
    SimpleEntity,
    SimpleTime,
    BeforeAfter,
    FirstLast,
    TimeJoin,
    BeforeAndAfter,
    BeforeAfterFirstLast,
}

impl QType {
    pub const ALL: [QType; 7] = [
        QType::SimpleEntity,
        QType::SimpleTime,
        QType::BeforeAfter,
        QType::FirstLast,
        QType::TimeJoin,
        QType::BeforeAndAfter,
        QType::BeforeAfterFirstLast,
    ];

    /// The five types seen during training.
    pub const SEEN: [QType; 5] = [
        QType::SimpleEntity,
        QType::SimpleTime,
        QType::BeforeAfter,
        QType::FirstLast,
        QType::TimeJoin,
    ];

    pub const UNSEEN: [QType; 2] = [QType::BeforeAndAfter, QType::BeforeAfterFirstLast];

    pub fn name(self) -> &'static str {
        match self {
            QType::SimpleEntity => "simple_entity",
            QType::SimpleTime => "simple_time",
            QType::BeforeAfter => "before_after",
            QType::FirstLast => "first_last",
            QType::TimeJoin => "time_join",
            QType::BeforeAndAfter => "before_and_after",
            QType::BeforeAfterFirstLast => "before_after_first_last",
        }
    }

    pub fn is_simple(self) -> bool {
        matches!(self, QType::SimpleEntity | QType::SimpleTime)
    }

    pub fn is_complex(self) -> bool {
        !self.is_simple()
    }

    /// Answer kinds a question of this type may have.
    pub fn allows(self, kind: AnswerKind) -> bool {
        match self {
            QType::SimpleTime => kind == AnswerKind::Time,
            QType::FirstLast => true,
            _ => kind == AnswerKind::Entity,
        }
    }
}

impl fmt::Display for QType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QType {
    type Err = TqrError;

    fn from_str(s: &str) -> Result<Self> {
        QType::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| TqrError::UnknownName {
                kind: "question type",
                name: s.to_string(),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Entity,
    Time,
}

impl AnswerKind {
    pub fn name(self) -> &'static str {
        match self {
            AnswerKind::Entity => "entity",
            AnswerKind::Time => "time",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnKind {
    Entity,
    Timestamp,
}

/// Position of an annotated entity in the fact the question is about.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Subject,
    Object,
    #[default]
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Before,
    After,
    First,
    Last,
    /// After the object and before the second object.
    AfterAndBefore,
    /// Before the object and after the second object.
    BeforeAndAfter,
    AfterFirst,
    BeforeLast,
}

impl Constraint {
    pub fn name(self) -> &'static str {
        match self {
            Constraint::Before => "before",
            Constraint::After => "after",
            Constraint::First => "first",
            Constraint::Last => "last",
            Constraint::AfterAndBefore => "after_and_before",
            Constraint::BeforeAndAfter => "before_and_after",
            Constraint::AfterFirst => "after_first",
            Constraint::BeforeLast => "before_last",
        }
    }

    /// Constraints valid for a question type (`None` if it takes none).
    pub fn for_qtype(q: QType) -> &'static [Constraint] {
        match q {
            QType::SimpleEntity | QType::SimpleTime | QType::TimeJoin => &[],
            QType::BeforeAfter => &[Constraint::Before, Constraint::After],
            QType::FirstLast => &[Constraint::First, Constraint::Last],
            QType::BeforeAndAfter => &[Constraint::AfterAndBefore, Constraint::BeforeAndAfter],
            QType::BeforeAfterFirstLast => &[Constraint::AfterFirst, Constraint::BeforeLast],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Annotation {
    /// Token range `[lo, hi)`.
    pub span: [usize; 2],
    pub kind: AnnKind,
    pub id: u32,
    #[serde(default)]
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub tokens: Vec<String>,
    pub annotations: Vec<Annotation>,
    pub qtype: QType,
    pub answer_kind: AnswerKind,
    pub answers: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<Constraint>,
}

impl Question {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| TqrError::Format { what: "question", msg };
        if self.tokens.is_empty() {
            return Err(bad("no tokens".into()));
        }
        if self.answers.is_empty() {
            return Err(bad("empty answer set".into()));
        }
        if !self.qtype.allows(self.answer_kind) {
            return Err(bad(format!("{} questions cannot have {} answers", self.qtype, self.answer_kind.name())));
        }
        if let Some(c) = self.constraint {
            if !Constraint::for_qtype(self.qtype).contains(&c) {
                return Err(bad(format!("constraint {} does not apply to {}", c.name(), self.qtype)));
            }
        }
        let mut covered = vec![false; self.tokens.len()];
        for a in &self.annotations {
            let [lo, hi] = a.span;
            if lo >= hi || hi > self.tokens.len() {
                return Err(bad(format!("span [{lo}, {hi}) outside {} tokens", self.tokens.len())));
            }
            for c in &mut covered[lo..hi] {
                if *c {
                    return Err(bad(format!("overlapping annotation at [{lo}, {hi})")));
                }
                *c = true;
            }
            if a.kind == AnnKind::Timestamp && a.role != Role::Other {
                return Err(bad("timestamp annotations cannot take an entity role".into()));
            }
        }
        Ok(())
    }

    pub fn entities(&self) -> impl Iterator<Item = &Annotation> {
        self.annotations.iter().filter(|a| a.kind == AnnKind::Entity)
    }

    pub fn entity_ids(&self) -> Vec<EntityId> {
        let mut seen = HashSet::new();
        self.entities().map(|a| EntityId(a.id)).filter(|e| seen.insert(*e)).collect()
    }

    /// First annotated timestamp.
    pub fn time(&self) -> Option<TimeId> {
        self.annotations.iter().find(|a| a.kind == AnnKind::Timestamp).map(|a| TimeId(a.id))
    }

    /// Annotated subject and object. Explicit roles win; without them the
    /// first two entity mentions fill the slots in order.
    pub fn roles(&self) -> (Option<EntityId>, Option<EntityId>) {
        let find = |r: Role| self.entities().find(|a| a.role == r).map(|a| EntityId(a.id));
        let (s, o) = (find(Role::Subject), find(Role::Object));
        if s.is_some() || o.is_some() {
            return (s, o);
        }
        let mut it = self.entities().map(|a| EntityId(a.id));
        (it.next(), it.next())
    }

    /// Second object (the far boundary of `before_and_after` questions).
    pub fn second_object(&self) -> Option<EntityId> {
        self.entities()
            .filter(|a| a.role == Role::Other)
            .map(|a| EntityId(a.id))
            .next()
    }

    /// `(qtype, annotation ids)`; questions sharing one never straddle splits.
    pub fn signature(&self) -> (QType, Vec<(AnnKind, u32)>) {
        (self.qtype, self.annotations.iter().map(|a| (a.kind, a.id)).collect())
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

pub fn parse_jsonl(src: &str) -> Result<Vec<Question>> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(line).map_err(|e| TqrError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        q.validate().map_err(|e| TqrError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

pub fn to_jsonl(questions: &[Question]) -> String {
    let mut s = String::new();
    for q in questions {
        s.push_str(&serde_json::to_string(q).expect("question serializes"));
        s.push('\n');
    }
    s
}

pub fn load_questions(path: impl AsRef<Path>) -> Result<Vec<Question>> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|e| TqrError::io(path, e))?;
    parse_jsonl(&src)
}

pub fn save_questions(path: impl AsRef<Path>, questions: &[Question]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_jsonl(questions)).map_err(|e| TqrError::io(path, e))
}
