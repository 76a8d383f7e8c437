use std::collections::{BTreeSet, HashMap};

use super::{AnswerKind, Constraint, QType};
use crate::{Result, TqrError};

/// Paraphrase with `{head}` (subject), `{tail}` (object), `{tail2}` (second
/// object), `{time}` and `{rel}` placeholders. Tokens are space separated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub qtype: QType,
    pub constraint: Option<Constraint>,
    pub answer_kind: AnswerKind,
    pub text: String,
}

impl Template {
    pub fn required(qtype: QType) -> &'static [&'static str] {
        match qtype {
            QType::SimpleEntity => &["{head}", "{time}", "{rel}"],
            QType::SimpleTime | QType::BeforeAfter | QType::TimeJoin | QType::BeforeAfterFirstLast => {
                &["{head}", "{tail}", "{rel}"]
            }
            QType::FirstLast => &["{head}", "{rel}"],
            QType::BeforeAndAfter => &["{head}", "{tail}", "{tail2}", "{rel}"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateBank {
    templates: Vec<Template>,
    /// Relation name to the words used for it in question text.
    phrases: HashMap<String, Vec<String>>,
}

impl Default for TemplateBank {
    fn default() -> Self {
        use AnswerKind::{Entity as E, Time as T};
        use Constraint::*;
        use QType::*;
        let raw: &[(QType, Option<Constraint>, AnswerKind, &[&str])] = &[
            (SimpleEntity, None, E, &[
                "what {rel} {head} in {time} ?",
                "in {time} , what {rel} {head} ?",
                "which one {rel} {head} during {time} ?",
                "name the one that {rel} {head} in {time}",
            ]),
            (SimpleTime, None, T, &[
                "when did {head} {rel} {tail} ?",
                "in which year did {head} {rel} {tail} ?",
                "what year was it when {head} {rel} {tail} ?",
                "when was it that {head} {rel} {tail} ?",
            ]),
            (BeforeAfter, Some(After), E, &[
                "what {rel} {head} after {tail} ?",
                "after {tail} , what {rel} {head} ?",
                "which one {rel} {head} later than {tail} ?",
                "name the one that {rel} {head} after {tail}",
            ]),
            (BeforeAfter, Some(Before), E, &[
                "what {rel} {head} before {tail} ?",
                "before {tail} , what {rel} {head} ?",
                "which one {rel} {head} earlier than {tail} ?",
                "name the one that {rel} {head} before {tail}",
            ]),
            (FirstLast, Some(First), E, &[
                "what {rel} {head} first ?",
                "which was the first one that {rel} {head} ?",
                "name the earliest one that {rel} {head}",
                "who or what first {rel} {head} ?",
            ]),
            (FirstLast, Some(Last), E, &[
                "what {rel} {head} last ?",
                "which was the last one that {rel} {head} ?",
                "name the latest one that {rel} {head}",
                "who or what last {rel} {head} ?",
            ]),
            (FirstLast, Some(First), T, &[
                "when did {head} first {rel} ?",
                "in which year did {head} {rel} for the first time ?",
                "what year was the first time {head} {rel} ?",
                "when was the earliest time {head} {rel} ?",
            ]),
            (FirstLast, Some(Last), T, &[
                "when did {head} last {rel} ?",
                "in which year did {head} {rel} for the last time ?",
                "what year was the last time {head} {rel} ?",
                "when was the latest time {head} {rel} ?",
            ]),
            (TimeJoin, None, E, &[
                "who {rel} {tail} at the same time as {head} ?",
                "who else {rel} {tail} while {head} did ?",
                "with {head} , who also {rel} {tail} ?",
                "name the one that {rel} {tail} together with {head}",
            ]),
            (QType::BeforeAndAfter, Some(AfterAndBefore), E, &[
                "what {rel} {head} after {tail} and before {tail2} ?",
                "after {tail} , what {rel} {head} before {tail2} ?",
            ]),
            (QType::BeforeAndAfter, Some(Constraint::BeforeAndAfter), E, &[
                "what {rel} {head} before {tail} and after {tail2} ?",
                "before {tail} , what {rel} {head} after {tail2} ?",
            ]),
            (BeforeAfterFirstLast, Some(AfterFirst), E, &[
                "what first {rel} {head} after {tail} ?",
                "which was the first one that {rel} {head} after {tail} ?",
            ]),
            (BeforeAfterFirstLast, Some(BeforeLast), E, &[
                "what last {rel} {head} before {tail} ?",
                "which was the last one that {rel} {head} before {tail} ?",
            ]),
        ];
        let templates = raw
            .iter()
            .flat_map(|(q, c, k, texts)| {
                texts.iter().map(move |t| Template {
                    qtype: *q,
                    constraint: *c,
                    answer_kind: *k,
                    text: t.to_string(),
                })
            })
            .collect();
        let phrases = [
            ("held_by", "was held by"),
            ("won_by", "was won by"),
            ("member_of", "played for"),
            ("employed_by", "worked for"),
            ("chaired_by", "was chaired by"),
        ]
        .into_iter()
        .map(|(r, p)| (r.to_string(), p.split(' ').map(String::from).collect()))
        .collect();
        TemplateBank { templates, phrases }
    }
}

impl TemplateBank {
    pub fn new(templates: Vec<Template>, phrases: HashMap<String, Vec<String>>) -> Result<Self> {
        let bank = TemplateBank { templates, phrases };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.templates {
            for p in Template::required(t.qtype) {
                if !t.text.split_whitespace().any(|w| w == *p) {
                    return Err(TqrError::invalid(format!("template {:?} for {} lacks {p}", t.text, t.qtype)));
                }
            }
            if !t.qtype.allows(t.answer_kind) {
                return Err(TqrError::invalid(format!("template {:?} has the wrong answer kind", t.text)));
            }
        }
        Ok(())
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn matching(&self, qtype: QType, constraint: Option<Constraint>, kind: AnswerKind) -> Vec<&Template> {
        self.templates
            .iter()
            .filter(|t| t.qtype == qtype && t.constraint == constraint && t.answer_kind == kind)
            .collect()
    }

    /// Words for a relation; unknown relations are spelled from their name.
    pub fn phrase(&self, relation: &str) -> Vec<String> {
        self.phrases
            .get(relation)
            .cloned()
            .unwrap_or_else(|| relation.split(['_', ' ']).filter(|w| !w.is_empty()).map(String::from).collect())
    }

    /// Every literal word the bank can emit, sorted.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut v: BTreeSet<String> = BTreeSet::new();
        for t in &self.templates {
            for w in t.text.split_whitespace() {
                if !(w.starts_with('{') && w.ends_with('}')) {
                    v.insert(w.to_string());
                }
            }
        }
        for words in self.phrases.values() {
            v.extend(words.iter().cloned());
        }
        v.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bank_is_valid() {
        let b = TemplateBank::default();
        b.validate().unwrap();
        for q in QType::ALL {
            assert!(b.templates().iter().any(|t| t.qtype == q), "{q}");
        }
        assert!(b.vocabulary().contains(&"after".to_string()));
    }

    #[test]
    fn missing_placeholder_rejected() {
        let t = Template {
            qtype: QType::TimeJoin,
            constraint: None,
            answer_kind: AnswerKind::Entity,
            text: "who {rel} {tail} ?".into(),
        };
        assert!(TemplateBank::new(vec![t], HashMap::new()).is_err());
    }

    #[test]
    fn unknown_relation_phrase() {
        assert_eq!(TemplateBank::default().phrase("part_of"), vec!["part", "of"]);
    }
}
