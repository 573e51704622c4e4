//! Binary and multi-option prompt templates.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

pub const OBJECT_PLACEHOLDER: &str = "{object}";
pub const CANDIDATES_PLACEHOLDER: &str = "{candidates}";

pub const DEFAULT_BINARY_PATTERN: &str = "Is there a {object} in the image?";
pub const DEFAULT_MULTI_PATTERN: &str =
    "What objects are present in the image? The candidate set is: {candidates}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Binary,
    MultiOption,
}

impl TemplateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::Binary => "binary",
            TemplateKind::MultiOption => "multi_option",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    #[serde(default)]
    pub name: String,
    pub kind: TemplateKind,
    pub pattern: String,
    #[serde(default = "default_separator", alias = "separator")]
    pub option_separator: String,
    #[serde(default = "default_shuffle", alias = "shuffle")]
    pub shuffle_options: bool,
    /// Mixed into the run seed when shuffling, so two templates over the same
    /// candidates can use different orders.
    #[serde(default)]
    pub seed: u64,
}

fn default_separator() -> String {
    ", ".into()
}

fn default_shuffle() -> bool {
    true
}

impl PromptTemplate {
    pub fn binary() -> Self {
        PromptTemplate {
            name: "binary".into(),
            kind: TemplateKind::Binary,
            pattern: DEFAULT_BINARY_PATTERN.into(),
            option_separator: default_separator(),
            shuffle_options: false,
            seed: 0,
        }
    }

    pub fn multi_option() -> Self {
        PromptTemplate {
            name: "multi_option".into(),
            kind: TemplateKind::MultiOption,
            pattern: DEFAULT_MULTI_PATTERN.into(),
            option_separator: default_separator(),
            shuffle_options: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let placeholder = match self.kind {
            TemplateKind::Binary => OBJECT_PLACEHOLDER,
            TemplateKind::MultiOption => CANDIDATES_PLACEHOLDER,
        };
        let count = self.pattern.matches(placeholder).count();
        if count != 1 {
            return Err(Error::Config(format!(
                "template '{}': {} pattern must contain {placeholder} exactly once (found {count})",
                self.name, self.kind
            )));
        }
        if self.kind == TemplateKind::MultiOption && self.option_separator.is_empty() {
            return Err(Error::Config(format!(
                "template '{}': empty option separator",
                self.name
            )));
        }
        Ok(())
    }
}

pub fn render_binary(template: &PromptTemplate, object_name: &str) -> Result<String> {
    if template.kind != TemplateKind::Binary {
        return Err(Error::Config(format!(
            "template '{}' is not binary",
            template.name
        )));
    }
    template.validate()?;
    let name = object_name.trim();
    if name.is_empty() {
        return Err(Error::EmptyInput("object name"));
    }
    Ok(template.pattern.replacen(OBJECT_PLACEHOLDER, name, 1))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedOptions {
    pub prompt: String,
    /// Candidates in the order they appear in `prompt`.
    pub order: Vec<String>,
}

pub fn render_multi_option(
    template: &PromptTemplate,
    candidates: &[String],
    seed: u64,
) -> Result<RenderedOptions> {
    if template.kind != TemplateKind::MultiOption {
        return Err(Error::Config(format!(
            "template '{}' is not multi-option",
            template.name
        )));
    }
    template.validate()?;
    if candidates.len() < 2 {
        return Err(Error::Validation(format!(
            "multi-option prompt needs at least 2 candidates, got {}",
            candidates.len()
        )));
    }
    if candidates.iter().any(|c| c.trim().is_empty()) {
        return Err(Error::EmptyInput("candidate"));
    }
    let mut order = candidates.to_vec();
    if template.shuffle_options {
        let mut rng = seeding::rng_for(seed, &["options", &template.seed.to_string()]);
        order.shuffle(&mut rng);
    }
    let list = order.join(&template.option_separator);
    Ok(RenderedOptions {
        prompt: template.pattern.replacen(CANDIDATES_PLACEHOLDER, &list, 1),
        order,
    })
}

/// Named templates. Always contains `binary` and `multi_option` unless the
/// registry file overrides them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

#[derive(Deserialize)]
struct RegistryWire {
    #[serde(default)]
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        let mut templates = BTreeMap::new();
        for t in [PromptTemplate::binary(), PromptTemplate::multi_option()] {
            templates.insert(t.name.clone(), t);
        }
        TemplateRegistry { templates }
    }
}

impl TemplateRegistry {
    /// TOML with one `[templates.<name>]` table per template.
    pub fn parse(toml_text: &str) -> Result<Self> {
        let wire: RegistryWire = toml::from_str(toml_text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_col(toml_text, s.start))
                .unwrap_or((0, 0));
            Error::Parse {
                what: "template registry".into(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        let mut reg = TemplateRegistry::default();
        for (name, mut t) in wire.templates {
            t.name = name.clone();
            t.validate()?;
            reg.templates.insert(name, t);
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate> {
        self.templates.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown template '{name}' (known: {})",
                self.templates
                    .keys()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = text.get(..offset).unwrap_or(text);
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_examples() {
        let t = PromptTemplate::binary();
        assert_eq!(
            render_binary(&t, "car").unwrap(),
            "Is there a car in the image?"
        );
        assert_eq!(
            render_binary(&t, "red car").unwrap(),
            "Is there a red car in the image?"
        );
        assert!(render_binary(&t, "").is_err());
        assert!(render_binary(&t, "   ").is_err());
    }

    #[test]
    fn multi_unshuffled() {
        let t = PromptTemplate {
            shuffle_options: false,
            ..PromptTemplate::multi_option()
        };
        let r = render_multi_option(&t, &["dog".into(), "ladder".into()], 1).unwrap();
        assert_eq!(
            r.prompt,
            "What objects are present in the image? The candidate set is: dog, ladder"
        );
        assert_eq!(r.order, ["dog", "ladder"]);
        assert!(render_multi_option(&t, &["dog".into()], 1).is_err());
    }

    #[test]
    fn multi_shuffle_is_deterministic_and_recorded() {
        let t = PromptTemplate::multi_option();
        let c: Vec<String> = (0..12).map(|i| format!("obj{i}")).collect();
        let a = render_multi_option(&t, &c, 9).unwrap();
        let b = render_multi_option(&t, &c, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.prompt.ends_with(&a.order.join(", ")));
    }

    #[test]
    fn pattern_placeholder_count() {
        let mut t = PromptTemplate::binary();
        t.pattern = "{object} or {object}?".into();
        assert!(t.validate().is_err());
        t.pattern = "no placeholder".into();
        assert!(render_binary(&t, "car").is_err());
        let mut m = PromptTemplate::multi_option();
        m.pattern = "pick one".into();
        assert!(m.validate().is_err());
    }

    #[test]
    fn registry_parse() {
        let reg = TemplateRegistry::parse(
            r#"
[templates.terse]
kind = "binary"
pattern = "{object}? yes or no."

[templates.listed]
kind = "multi_option"
pattern = "Which are present: {candidates}"
separator = " | "
shuffle = false
"#,
        )
        .unwrap();
        assert_eq!(reg.get("terse").unwrap().kind, TemplateKind::Binary);
        let l = reg.get("listed").unwrap();
        assert_eq!(l.option_separator, " | ");
        assert!(!l.shuffle_options);
        assert!(reg.get("binary").is_ok());
        assert!(reg.get("missing").is_err());
    }

    #[test]
    fn registry_errors_have_position() {
        let err = TemplateRegistry::parse("[templates.x]\nkind = 3\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        let bad =
            TemplateRegistry::parse("[templates.x]\nkind = \"binary\"\npattern = \"nothing\"\n");
        assert!(bad.is_err());
    }
}
