//! Line-oriented JSON helpers with per-line error reporting.

use std::io::BufRead;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// serde_json reports positions inside the single-line document; drop them so
/// the message carries only the file line number.
fn strip_position(msg: &str) -> &str {
    match msg.rfind(" at line ") {
        Some(i) => &msg[..i],
        None => msg,
    }
}

/// Parses every non-blank line. Line numbers are 1-based.
pub fn parse_lines<T: DeserializeOwned>(r: impl BufRead) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: i + 1,
            message: strip_position(&e.to_string()).to_owned(),
        })?;
        out.push((i + 1, v));
    }
    Ok(out)
}

pub fn write_lines<T: Serialize>(mut w: impl std::io::Write, items: impl IntoIterator<Item = T>) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(serde::Deserialize, Debug)]
    #[allow(dead_code)]
    struct Row {
        id: String,
        n: i64,
    }

    #[test]
    fn reports_field_and_line() {
        let text = "{\"id\":\"a\",\"n\":1}\n\n{\"n\":2}\n";
        let err = parse_lines::<Row>(text.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("missing field `id`"), "{msg}");
        assert!(!msg.contains("column"), "{msg}");
    }
}
