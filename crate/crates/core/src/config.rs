//! `key = value` configuration text shared by config files and checkpoints.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A configuration section whose fields are addressed by name.
pub trait KeyValue {
    /// Every field as `(key, value)` in a fixed order.
    fn entries(&self) -> Vec<(&'static str, String)>;

    /// Assign one field. Returns `Ok(false)` when the key does not belong to
    /// this section.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;

    fn keys(&self) -> Vec<&'static str> {
        self.entries().into_iter().map(|(k, _)| k).collect()
    }
}

pub fn parse_value<V>(key: &str, value: &str) -> Result<V>
where
    V: FromStr,
    V::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

/// Parse `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if out.iter().any(|(existing, _): &(String, String)| existing == key) {
            return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Assign parsed pairs to the first section that owns each key; unknown keys
/// are an error.
pub fn apply(pairs: &[(String, String)], sections: &mut [&mut dyn KeyValue]) -> Result<()> {
    'pairs: for (k, v) in pairs {
        for section in sections.iter_mut() {
            if section.set(k, v)? {
                continue 'pairs;
            }
        }
        return Err(Error::Config(format!("unknown key {k:?}")));
    }
    Ok(())
}

pub fn render(sections: &[&dyn KeyValue]) -> String {
    let mut out = String::new();
    for section in sections {
        for (k, v) in section.entries() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
    }
    out
}

/// Implements [`KeyValue`] for a struct whose listed fields all implement
/// `Display + FromStr`.
macro_rules! key_value_struct {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::config::KeyValue for $ty {
            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), self.$field.to_string())),*]
            }

            fn set(&mut self, key: &str, value: &str) -> $crate::error::Result<bool> {
                match key {
                    $(stringify!($field) => {
                        self.$field = $crate::config::parse_value(key, value)?;
                        Ok(true)
                    })*
                    _ => Ok(false),
                }
            }
        }
    };
}
pub(crate) use key_value_struct;

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Default, Debug, PartialEq)]
    struct Demo {
        a: u32,
        b: f64,
    }
    key_value_struct!(Demo { a, b });

    #[test]
    fn parse_and_apply_round_trip() {
        let mut d = Demo::default();
        let pairs = parse_lines("# comment\na = 3\n\nb = 0.25\n").unwrap();
        apply(&pairs, &mut [&mut d]).unwrap();
        assert_eq!(d, Demo { a: 3, b: 0.25 });
        assert_eq!(render(&[&d]), "a = 3\nb = 0.25\n");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut d = Demo::default();
        let pairs = parse_lines("c = 1").unwrap();
        assert!(matches!(apply(&pairs, &mut [&mut d]), Err(Error::Config(_))));
    }

    #[test]
    fn malformed_line_and_bad_value_are_rejected() {
        assert!(parse_lines("just words").is_err());
        let mut d = Demo::default();
        let pairs = parse_lines("a = -1").unwrap();
        assert!(apply(&pairs, &mut [&mut d]).is_err());
    }
}
