use std::collections::BTreeMap;
use std::path::Path;

use super::AtcotError;

const BUILTIN_TEMPLATE: &str = include_str!("../../templates/atcot_v1.txt");

pub const REQUIRED_PLACEHOLDERS: [&str; 5] = ["examples", "instruction", "readback", "plugin_label", "schema"];

/// Versioned prompt template with `@system`, `@user` and task sections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub version: String,
    pub system: String,
    pub user: String,
    pub task: String,
    pub task_with_semantics: String,
}

impl PromptTemplate {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TEMPLATE).expect("bundled template is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AtcotError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, AtcotError> {
        let mut version = None;
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("@version ") {
                version = Some(rest.trim().to_string());
                current = None;
            } else if let Some(name) = line.strip_prefix('@').filter(|n| !n.is_empty() && !n.contains(' ')) {
                if sections.contains_key(name) {
                    return Err(AtcotError::Template(format!("duplicate section @{name}")));
                }
                sections.insert(name.to_string(), Vec::new());
                current = Some(name.to_string());
            } else if let Some(name) = &current {
                sections.get_mut(name).expect("section opened").push(line);
            } else if !line.trim().is_empty() {
                return Err(AtcotError::Template(format!("text outside any section: {line:?}")));
            }
        }
        let version = version.ok_or_else(|| AtcotError::Template("missing @version".into()))?;
        let mut take = |name: &str| -> Result<String, AtcotError> {
            sections
                .remove(name)
                .map(|lines| lines.join("\n").trim_end().to_string())
                .ok_or_else(|| AtcotError::Template(format!("missing @{name} section")))
        };
        let template = Self {
            version,
            system: take("system")?,
            user: take("user")?,
            task: take("task")?,
            task_with_semantics: take("task_with_semantics")?,
        };
        for p in REQUIRED_PLACEHOLDERS {
            let tag = format!("{{{{{p}}}}}");
            if !template.system.contains(&tag) && !template.user.contains(&tag) {
                return Err(AtcotError::Placeholder(p.to_string()));
            }
        }
        Ok(template)
    }
}

/// Substitutes `{{name}}` placeholders. A line holding a placeholder whose
/// value is `None` is dropped entirely.
pub fn fill(text: &str, values: &BTreeMap<&str, Option<String>>) -> String {
    let mut out: Vec<String> = Vec::new();
    'lines: for line in text.lines() {
        let mut line = line.to_string();
        for (name, value) in values {
            let tag = format!("{{{{{name}}}}}");
            if line.contains(&tag) {
                match value {
                    Some(v) => line = line.replace(&tag, v),
                    None => continue 'lines,
                }
            }
        }
        out.push(line);
    }
    let joined = out.join("\n");
    joined.trim_start_matches('\n').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_parses() {
        let t = PromptTemplate::builtin();
        assert_eq!(t.version, "atcot-v1");
        assert!(t.user.contains("{{instruction}}"));
        assert!(!t.system.is_empty());
    }

    #[test]
    fn missing_placeholder_is_rejected() {
        let text = "@version x\n@system\ns\n@task\nt\n@task_with_semantics\nt\n@user\n{{examples}} {{instruction}} {{readback}} {{schema}}\n";
        match PromptTemplate::parse(text) {
            Err(AtcotError::Placeholder(p)) => assert_eq!(p, "plugin_label"),
            other => panic!("expected placeholder error, got {other:?}"),
        }
        assert!(PromptTemplate::parse("@system\nx\n").is_err());
    }

    #[test]
    fn none_values_drop_lines() {
        let mut v = BTreeMap::new();
        v.insert("a", Some("1".to_string()));
        v.insert("b", None);
        assert_eq!(fill("x {{a}}\ny {{b}}\nz", &v), "x 1\nz");
    }
}
