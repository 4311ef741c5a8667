// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prompt rendering for fitting, evaluation, and reflective confidence.
//!
//! Fit stimuli carry no concept mention. Evaluation prompts wrap the same body
//! in the concept template and stop right after `is ` so that the hidden state
//! is read before any generated token.
//!
//! Templates use `{task}`, `{code}`, `{concept}` and `{language}` placeholders,
//! substituted in a single pass: placeholder-looking text inside the task or
//! the code is never expanded.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::TaskSpec;
use crate::error::{Error, Result};

/// Verbalized confidence levels, lowest first.
pub const CONFIDENCE_LEVELS: [&str; 7] = [
    "Very low",
    "Low",
    "Somewhat low",
    "Neutral",
    "Somewhat high",
    "High",
    "Very high",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusTemplate {
    pub concept: String,
    pub language_tag: String,
}

impl Default for StimulusTemplate {
    fn default() -> Self {
        Self {
            concept: "correctness".into(),
            language_tag: "python".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConfidenceVariant {
    Regular,
    TrueFalse,
}

const FIT: &str = "Task: {task}\nCode:\n```{language}\n{code}\n```\n";
const CONCEPT_HEAD: &str = "Consider the amount of {concept} in the following:\n";
const CONCEPT_TAIL: &str = "The amount of {concept} is ";
const REGULAR_TAIL: &str = "How confident are you that the code above correctly implements the task?\n\
Answer (Very low/Low/Somewhat low/Neutral/Somewhat high/High/Very high):";
const TF_TAIL: &str = "Is the code above a correct implementation of the task?\nAnswer (True/False):";

/// Full set of prompt templates; loadable from a JSON override file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateSet {
    pub fit: String,
    pub eval: String,
    pub confidence_regular: String,
    pub confidence_tf: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            fit: FIT.into(),
            eval: format!("{CONCEPT_HEAD}{FIT}{CONCEPT_TAIL}"),
            confidence_regular: format!("{FIT}{REGULAR_TAIL}"),
            confidence_tf: format!("{FIT}{TF_TAIL}"),
        }
    }
}

impl TemplateSet {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: TemplateSet = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("fit", &self.fit),
            ("eval", &self.eval),
            ("confidence_regular", &self.confidence_regular),
            ("confidence_tf", &self.confidence_tf),
        ] {
            if !t.contains("{code}") {
                return Err(Error::InvalidTemplate(format!("{name} template lacks {{code}}")));
            }
        }
        Ok(())
    }

    pub fn fit_prompt(&self, task: &TaskSpec, code: &str) -> Result<String> {
        check(task, code)?;
        Ok(render(&self.fit, &task.description, code, "", "python"))
    }

    pub fn eval_prompt(&self, task: &TaskSpec, code: &str, template: &StimulusTemplate) -> Result<String> {
        check(task, code)?;
        if template.concept.is_empty() {
            return Err(Error::EmptyField("concept"));
        }
        Ok(render(
            &self.eval,
            &task.description,
            code,
            &template.concept,
            &template.language_tag,
        ))
    }

    pub fn confidence_prompt(&self, task: &TaskSpec, code: &str, variant: ConfidenceVariant) -> Result<String> {
        check(task, code)?;
        let t = match variant {
            ConfidenceVariant::Regular => &self.confidence_regular,
            ConfidenceVariant::TrueFalse => &self.confidence_tf,
        };
        Ok(render(t, &task.description, code, "", "python"))
    }
}

fn check(task: &TaskSpec, code: &str) -> Result<()> {
    if task.description.is_empty() {
        return Err(Error::EmptyField("task description"));
    }
    if code.is_empty() {
        return Err(Error::EmptyField("code"));
    }
    Ok(())
}

fn render(template: &str, task: &str, code: &str, concept: &str, language: &str) -> String {
    let mut out = String::with_capacity(template.len() + task.len() + code.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let value = [
            ("{task}", task),
            ("{code}", code),
            ("{concept}", concept),
            ("{language}", language),
        ]
        .into_iter()
        .find(|(key, _)| tail.starts_with(key));
        match value {
            Some((key, v)) => {
                out.push_str(v);
                rest = &tail[key.len()..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Unlabeled fit stimulus: task description and fenced code.
pub fn render_fit_prompt(task: &TaskSpec, code: &str) -> Result<String> {
    TemplateSet::default().fit_prompt(task, code)
}

/// Concept-eliciting evaluation prompt for one candidate.
pub fn render_eval_prompt(task: &TaskSpec, code: &str, template: &StimulusTemplate) -> Result<String> {
    TemplateSet::default().eval_prompt(task, code, template)
}

pub fn render_confidence_prompt(task: &TaskSpec, code: &str, variant: ConfidenceVariant) -> Result<String> {
    TemplateSet::default().confidence_prompt(task, code, variant)
}

/// The bare concept template around an arbitrary stimulus (one or more lines).
pub fn render_concept_prompt(concept: &str, stimulus: &str) -> Result<String> {
    if concept.is_empty() {
        return Err(Error::EmptyField("concept"));
    }
    if stimulus.is_empty() {
        return Err(Error::EmptyField("stimulus"));
    }
    Ok(format!(
        "Consider the amount of {concept} in the following:\n{stimulus}\nThe amount of {concept} is "
    ))
}
