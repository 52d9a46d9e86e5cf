use std::fmt;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

/// A scenario that cannot be run as written. Carries a dotted location
/// such as `task[2].t_max` and, once the source is known, a line number.
#[derive(Debug, Error)]
pub struct ConfigError {
    location: Option<String>,
    span: Option<Range<usize>>,
    message: String,
    file: Option<String>,
    line: Option<(usize, usize)>,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        ConfigError { location: None, span: None, message: message.into(), file: None, line: None }
    }

    pub fn at(location: &str, message: impl Into<String>) -> Self {
        ConfigError { location: Some(location.to_string()), ..ConfigError::new(message) }
    }

    pub fn from_toml(e: toml::de::Error) -> Self {
        ConfigError { span: e.span(), ..ConfigError::new(e.message().trim().to_string()) }
    }

    /// Attaches the file name and resolves the location to a line.
    pub fn in_file(mut self, path: &Path, text: &str) -> Self {
        self.file = Some(path.display().to_string());
        self.line = match (&self.span, &self.location) {
            (Some(span), _) => Some(line_col(text, span.start)),
            (None, Some(loc)) => locate(text, loc).map(|l| (l, 1)),
            _ => None,
        };
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.file, self.line) {
            (Some(file), Some((l, c))) => write!(f, "{file}:{l}:{c}: ")?,
            (Some(file), None) => write!(f, "{file}: ")?,
            _ => {}
        }
        if let Some(loc) = &self.location {
            write!(f, "{loc}: ")?;
        }
        f.write_str(&self.message)
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

fn header(line: &str) -> Option<&str> {
    let t = line.trim();
    t.strip_prefix("[[").and_then(|r| r.strip_suffix("]]")).or_else(|| t.strip_prefix('[').and_then(|r| r.strip_suffix(']'))).map(str::trim)
}

/// Best-effort line of a dotted location: the section header, refined to
/// the first line assigning the key inside it.
fn locate(text: &str, location: &str) -> Option<usize> {
    let (section, index, rest) = match location.split_once('.') {
        Some((head, rest)) => (head, None, Some(rest)),
        None => (location, None, None),
    };
    let (section, index) = match section.split_once('[') {
        Some((name, idx)) => (name, idx.trim_end_matches(']').parse::<usize>().ok()),
        None => (section, index),
    };
    let lines: Vec<&str> = text.lines().collect();
    let mut seen = 0;
    let start = lines.iter().position(|l| {
        if header(l) != Some(section) {
            return false;
        }
        let hit = index.is_none_or(|i| i == seen);
        seen += 1;
        hit
    })?;
    let key = rest.map(|r| r.split(['.', '[']).next().unwrap_or(r));
    if let Some(key) = key {
        for (k, l) in lines.iter().enumerate().skip(start + 1) {
            if header(l).is_some() {
                break;
            }
            let t = l.trim_start();
            if t.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('=')) {
                return Some(k + 1);
            }
        }
    }
    Some(start + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locates_task_keys() {
        let text = "[model]\ncatalog = \"shen(1)\"\n\n[[task]]\nkind = \"geodesic\"\n\n[[task]]\nkind = \"conjugate\"\nt_max = -1\n";
        assert_eq!(locate(text, "task[1].t_max"), Some(9));
        assert_eq!(locate(text, "task[0]"), Some(4));
        assert_eq!(locate(text, "model.catalog"), Some(2));
        assert_eq!(locate(text, "initial.x"), None);
    }

    #[test]
    fn line_and_column() {
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
