//! Flat key-value configuration format shared by model specs and scenario
//! manifests.
//!
//! ```text
//! document := { line }
//! line     := [ entry ] [ comment ] NEWLINE
//! comment  := '#' { any character }
//! entry    := key '=' value
//! key      := ident { '.' ident }
//! ident    := ( ALPHA | DIGIT | '_' | '-' )+
//! value    := scalar | '[' [ scalar { ',' scalar } [ ',' ] ] ']'
//! scalar   := quoted | bare
//! quoted   := '"' { CHAR - ( '"' | '\' ) | '\' ( '"' | '\' | 'n' | 't' ) } '"'
//! bare     := { CHAR - ( ',' | '[' | ']' | '#' | '"' | '=' ) }   (trimmed, non-empty)
//! ```
//!
//! Whitespace around tokens is ignored, keys are case-sensitive and may
//! appear at most once. Arrays must fit on one line.

use std::collections::BTreeSet;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(String),
    List(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: Value,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigDoc {
    entries: Vec<Entry>,
}

fn valid_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
}

impl Cursor<'_> {
    fn skip_ws(&mut self) {
        while matches!(self.chars.peek(), Some(c) if c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn quoted(&mut self) -> Result<String> {
        // opening quote already consumed
        let mut out = String::new();
        loop {
            match self.chars.next() {
                None => return Err(Error::parse(self.line, "unterminated string")),
                Some('"') => return Ok(out),
                Some('\\') => match self.chars.next() {
                    Some('"') => out.push('"'),
                    Some('\\') => out.push('\\'),
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some(c) => {
                        return Err(Error::parse(self.line, format!("unknown escape '\\{c}'")))
                    }
                    None => return Err(Error::parse(self.line, "unterminated escape")),
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn bare(&mut self) -> Result<String> {
        let mut out = String::new();
        while let Some(&c) = self.chars.peek() {
            if matches!(c, ',' | '[' | ']' | '#' | '"' | '=') {
                break;
            }
            out.push(c);
            self.chars.next();
        }
        let trimmed = out.trim();
        if trimmed.is_empty() {
            return Err(Error::parse(self.line, "expected a value"));
        }
        Ok(trimmed.to_string())
    }

    fn scalar(&mut self) -> Result<String> {
        self.skip_ws();
        if self.chars.peek() == Some(&'"') {
            self.chars.next();
            self.quoted()
        } else {
            self.bare()
        }
    }

    fn value(&mut self) -> Result<Value> {
        self.skip_ws();
        if self.chars.peek() != Some(&'[') {
            return self.scalar().map(Value::Scalar);
        }
        self.chars.next();
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.chars.peek() {
                Some(']') => {
                    self.chars.next();
                    return Ok(Value::List(items));
                }
                None => return Err(Error::parse(self.line, "unterminated array")),
                _ => {}
            }
            items.push(self.scalar()?);
            self.skip_ws();
            match self.chars.next() {
                Some(',') => continue,
                Some(']') => return Ok(Value::List(items)),
                Some(c) => {
                    return Err(Error::parse(
                        self.line,
                        format!("unexpected '{c}' in array"),
                    ))
                }
                None => return Err(Error::parse(self.line, "unterminated array")),
            }
        }
    }

    fn rest_is_blank(&mut self) -> Result<()> {
        self.skip_ws();
        match self.chars.peek() {
            None | Some('#') => Ok(()),
            Some(&c) => Err(Error::parse(
                self.line,
                format!("unexpected '{c}' after value"),
            )),
        }
    }
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<ConfigDoc> {
        let mut doc = ConfigDoc::default();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim_start();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, rest) = trimmed
                .split_once('=')
                .ok_or_else(|| Error::parse(line, "expected 'key = value'"))?;
            let key = key.trim();
            if !key.split('.').all(valid_ident) {
                return Err(Error::parse(line, format!("invalid key '{key}'")));
            }
            let mut cursor = Cursor {
                chars: rest.chars().peekable(),
                line,
            };
            let value = cursor.value()?;
            cursor.rest_is_blank()?;
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(line, format!("duplicate key '{key}'")));
            }
            doc.entries.push(Entry {
                key: key.to_string(),
                value,
                line,
            });
        }
        Ok(doc)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn scalar(&self, key: &str) -> Result<Option<(&str, usize)>> {
        match self.get(key) {
            None => Ok(None),
            Some(Entry {
                value: Value::Scalar(s),
                line,
                ..
            }) => Ok(Some((s.as_str(), *line))),
            Some(e) => Err(Error::parse(
                e.line,
                format!("'{key}' expects a single value"),
            )),
        }
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.scalar(key)? {
            None => Ok(None),
            Some((s, line)) => s
                .parse()
                .map(Some)
                .map_err(|_| Error::parse(line, format!("invalid value '{s}' for '{key}'"))),
        }
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.scalar(key)? {
            None => Ok(None),
            Some(("true" | "yes" | "1", _)) => Ok(Some(true)),
            Some(("false" | "no" | "0", _)) => Ok(Some(false)),
            Some((s, line)) => Err(Error::parse(
                line,
                format!("invalid boolean '{s}' for '{key}'"),
            )),
        }
    }

    /// A list value; a scalar is accepted as a one-element list.
    pub fn list(&self, key: &str) -> Option<(Vec<&str>, usize)> {
        self.get(key).map(|e| match &e.value {
            Value::Scalar(s) => (vec![s.as_str()], e.line),
            Value::List(v) => (v.iter().map(String::as_str).collect(), e.line),
        })
    }

    pub fn parsed_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.list(key) {
            None => Ok(None),
            Some((items, line)) => items
                .into_iter()
                .map(|s| {
                    s.parse().map_err(|_| {
                        Error::parse(line, format!("invalid element '{s}' in '{key}'"))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Distinct second components of keys shaped `prefix.<name>.<field>`,
    /// in order of first appearance.
    pub fn sections(&self, prefix: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            let mut parts = e.key.splitn(3, '.');
            if parts.next() == Some(prefix) {
                if let (Some(name), Some(_)) = (parts.next(), parts.next()) {
                    if !out.iter().any(|n| n == name) {
                        out.push(name.to_string());
                    }
                }
            }
        }
        out
    }

    /// Fails on the first key that `known` rejects.
    pub fn reject_unknown(&self, known: impl Fn(&str) -> bool) -> Result<()> {
        match self.entries.iter().find(|e| !known(&e.key)) {
            Some(e) => Err(Error::parse(e.line, format!("unknown key '{}'", e.key))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scalars_lists_and_comments() {
        let doc = ConfigDoc::parse(
            "# model\nfamily = cumulative  # trailing\n\nitems.q9.categories = 4\ntimes = [0, 1, 2.5 ,]\nname = \"a # b, [c]\"\nempty = []\n",
        )
        .unwrap();
        assert_eq!(doc.scalar("family").unwrap().unwrap().0, "cumulative");
        assert_eq!(doc.parsed::<usize>("items.q9.categories").unwrap(), Some(4));
        assert_eq!(
            doc.parsed_list::<f64>("times").unwrap().unwrap(),
            vec![0.0, 1.0, 2.5]
        );
        assert_eq!(doc.scalar("name").unwrap().unwrap().0, "a # b, [c]");
        assert_eq!(doc.list("empty").unwrap().0.len(), 0);
        assert_eq!(doc.sections("items"), vec!["q9"]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = ConfigDoc::parse("a = 1\nb 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = ConfigDoc::parse("a = 1\na = 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(ConfigDoc::parse("a = [1, 2\n").is_err());
        assert!(ConfigDoc::parse("a = \"open\n").is_err());
        assert!(ConfigDoc::parse("a b = 1\n").is_err());
        assert!(ConfigDoc::parse("a = 1 ]\n").is_err());
        assert!(ConfigDoc::parse("a =\n").is_err());
    }

    #[test]
    fn typed_accessors_validate() {
        let doc = ConfigDoc::parse("flag = maybe\nn = x\nl = [1, a]\n").unwrap();
        assert!(doc.bool("flag").is_err());
        assert!(doc.parsed::<f64>("n").is_err());
        assert!(doc.parsed_list::<f64>("l").is_err());
        assert!(doc.reject_unknown(|k| k == "flag").is_err());
    }
}
