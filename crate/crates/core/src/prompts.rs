//! Prompt templates with `{question}` / `{plan}` placeholders.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Built-in template sets. The full-length set is the general-purpose pair;
/// the desk set is a terse variant that keeps character-level sequences short.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TemplateSet {
    Full,
    #[default]
    Desk,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: String,
    text: String,
}

impl Template {
    /// Checks that every placeholder in `required` occurs in `text` and that
    /// no other placeholder does.
    pub fn new(id: impl Into<String>, text: impl Into<String>, required: &[&str]) -> Result<Self> {
        let (id, text) = (id.into(), text.into());
        let found = placeholders(&text);
        for r in required {
            if !found.iter().any(|f| f == r) {
                return Err(Error::Template(format!("template `{id}` lacks {{{r}}}")));
            }
        }
        if let Some(extra) = found.iter().find(|f| !required.contains(&f.as_str())) {
            return Err(Error::Template(format!("template `{id}` has unknown {{{extra}}}")));
        }
        Ok(Self { id, text })
    }

    pub fn load(path: &Path, required: &[&str]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("template");
        Self::new(id, text, required)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Single left-to-right pass, so values containing braces are inserted
    /// verbatim and never re-expanded.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String> {
        let mut out = String::with_capacity(self.text.len() + 64);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_name(&after[..close]) => {
                    let name = &after[..close];
                    let value = values
                        .iter()
                        .find(|(k, _)| *k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| Error::Template(format!("no value for {{{name}}} in `{}`", self.id)))?;
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

fn placeholders(text: &str) -> Vec<String> {
    let mut found = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_name(&after[..close]) => {
                found.push(after[..close].to_string());
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    found
}

/// Planner and executor templates used together by a pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub planner: Template,
    pub executor: Template,
}

impl Prompts {
    pub fn builtin(set: TemplateSet) -> Self {
        let (p, e) = match set {
            TemplateSet::Full => (
                ("planner", include_str!("../templates/planner.txt")),
                ("executor", include_str!("../templates/executor.txt")),
            ),
            TemplateSet::Desk => (
                ("planner_desk", include_str!("../templates/planner_desk.txt")),
                ("executor_desk", include_str!("../templates/executor_desk.txt")),
            ),
        };
        Self {
            planner: Template::new(p.0, p.1, &["question"]).expect("built-in planner template"),
            executor: Template::new(e.0, e.1, &["plan", "question"]).expect("built-in executor template"),
        }
    }

    pub fn load(planner: &Path, executor: &Path) -> Result<Self> {
        Ok(Self {
            planner: Template::load(planner, &["question"])?,
            executor: Template::load(executor, &["plan", "question"])?,
        })
    }

    pub fn planner_prompt(&self, question: &str) -> Result<String> {
        self.planner.render(&[("question", question)])
    }

    pub fn executor_prompt(&self, plan: &str, question: &str) -> Result<String> {
        self.executor.render(&[("plan", plan), ("question", question)])
    }

    /// Both prompts for one question.
    pub fn render_prompts(&self, question: &str, plan: Option<&str>) -> Result<(String, String)> {
        Ok((
            self.planner_prompt(question)?,
            self.executor_prompt(plan.unwrap_or(""), question)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_planner_forbids_answers() {
        let p = Prompts::builtin(TemplateSet::Full);
        assert!(p.planner.text().contains("Do NOT state or imply the final answer."));
        assert!(p.executor.text().contains("Given the following plan or reasoning"));
    }

    #[test]
    fn empty_plan_keeps_question() {
        for set in [TemplateSet::Full, TemplateSet::Desk] {
            let p = Prompts::builtin(set);
            let (_, e) = p.render_prompts("A=9;B=A; B?", None).unwrap();
            assert!(e.contains("A=9;B=A; B?"));
        }
    }

    #[test]
    fn rendering_is_pure_and_literal() {
        let p = Prompts::builtin(TemplateSet::Desk);
        let a = p.executor_prompt("{question}", "x").unwrap();
        assert_eq!(a, p.executor_prompt("{question}", "x").unwrap());
        assert_eq!(a, "P:{question}\nQ:x\nA:");
    }

    #[test]
    fn missing_placeholder_is_a_template_error() {
        assert!(matches!(Template::new("t", "no slots", &["question"]), Err(Error::Template(_))));
        assert!(matches!(Template::new("t", "{question} {other}", &["question"]), Err(Error::Template(_))));
        let t = Template::new("t", "{question}", &["question"]).unwrap();
        assert!(matches!(t.render(&[]), Err(Error::Template(_))));
    }
}
