//! `{name}` placeholder templates.
//!
//! A placeholder is `{` + `[a-z_][a-z0-9_]*` + `}`; any other brace is
//! literal text. Substituted values are inserted verbatim and never
//! rescanned, so a value containing `{x}` stays as is.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(source: &str) -> Self {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = source;
        while let Some(open) = rest.find('{') {
            literal.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match placeholder_name(after) {
                Some(name) => {
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Placeholder(name.to_owned()));
                    rest = &after[name.len() + 1..];
                }
                None => {
                    literal.push('{');
                    rest = after;
                }
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Template { segments }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let source = fs::read_to_string(path)
            .map_err(|e| Error::Template(format!("{}: {e}", path.display())))?;
        Ok(Template::parse(&source))
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Placeholder(name) => Some(name.as_str()),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    /// Fails if the template names a placeholder that `vars` does not bind.
    /// Extra bindings are ignored.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<String> {
        let mut out = String::new();
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Placeholder(name) => match vars.get(name.as_str()) {
                    Some(value) => out.push_str(value),
                    None => {
                        return Err(Error::Template(format!("unbound placeholder {{{name}}}")))
                    }
                },
            }
        }
        Ok(out)
    }
}

/// Name of a well-formed placeholder starting right after a `{`.
fn placeholder_name(s: &str) -> Option<&str> {
    let close = s.find('}')?;
    let name = &s[..close];
    let mut chars = name.chars();
    let first_ok = matches!(chars.next(), Some('a'..='z' | '_'));
    let rest_ok = chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
    (first_ok && rest_ok).then_some(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vars(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn substitutes_placeholders() {
        let t = Template::parse("Hello {name}, shop {shop_id}.");
        let out = t.render(&vars(&[("name", "Ann"), ("shop_id", "42")])).unwrap();
        assert_eq!(out, "Hello Ann, shop 42.");
        assert_eq!(t.placeholders().into_iter().collect::<Vec<_>>(), ["name", "shop_id"]);
    }

    #[test]
    fn unbound_placeholder_is_an_error() {
        let t = Template::parse("{a} and {b}");
        assert!(matches!(t.render(&vars(&[("a", "x")])), Err(Error::Template(_))));
    }

    #[test]
    fn non_identifier_braces_are_literal() {
        let t = Template::parse(r#"{"k": 1} {Upper} { spaced } {"#);
        assert!(t.placeholders().is_empty());
        assert_eq!(t.render(&BTreeMap::new()).unwrap(), r#"{"k": 1} {Upper} { spaced } {"#);
    }

    #[test]
    fn values_are_not_rescanned() {
        let t = Template::parse("{a}");
        assert_eq!(t.render(&vars(&[("a", "{b}")])).unwrap(), "{b}");
    }

    proptest! {
        #[test]
        fn placeholder_free_text_renders_verbatim(s in "[^{]*") {
            prop_assert_eq!(Template::parse(&s).render(&BTreeMap::new()).unwrap(), s);
        }

        #[test]
        fn render_is_plain_substitution(prefix in "[^{]*", value in ".*", suffix in "[^{]*") {
            let t = Template::parse(&format!("{prefix}{{slot}}{suffix}"));
            let out = t.render(&vars(&[("slot", &value)])).unwrap();
            prop_assert_eq!(out, format!("{prefix}{value}{suffix}"));
        }
    }
}
