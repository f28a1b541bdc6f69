//! Flat text serialization of policies.
//!
//! ```text
//! toylm-policy v1
//! order 3
//! vocab <bos> <eos> w00 w01 ...
//! <bos> <bos> w07<TAB>0.25 -1.5 0 ...
//! ```
//!
//! One line per stored context, sorted by context key. Logits are written in
//! Rust's shortest round-trip decimal form, so reading back is exact.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use super::{Policy, Vocab};
use crate::error::{Error, Result};

const MAGIC: &str = "toylm-policy v1";

impl Policy {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "order {}", self.order);
        let _ = writeln!(out, "vocab {}", self.vocab.symbols().join(" "));
        for key in self.stored_contexts() {
            let ctx: Vec<&str> = self
                .decode_context(key)
                .into_iter()
                .map(|t| self.vocab.symbol(t))
                .collect();
            out.push_str(&ctx.join(" "));
            out.push('\t');
            let z = self.logits(key).expect("stored context");
            for (i, x) in z.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Policy> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::PolicyFormat(format!("missing {what} line")))
        };
        let (_, magic) = next("header")?;
        if magic.trim() != MAGIC {
            return Err(Error::PolicyFormat(format!("unknown header {magic:?}")));
        }
        let (_, order_line) = next("order")?;
        let order: usize = order_line
            .strip_prefix("order ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::PolicyFormat(format!("bad order line {order_line:?}")))?;
        let (_, vocab_line) = next("vocab")?;
        let symbols: Vec<String> = vocab_line
            .strip_prefix("vocab ")
            .ok_or_else(|| Error::PolicyFormat("bad vocab line".into()))?
            .split_whitespace()
            .map(str::to_owned)
            .collect();
        let vocab = Arc::new(Vocab::from_symbols(symbols)?);
        let mut policy = Policy::uniform(vocab.clone(), order)?;
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: String| Error::PolicyFormat(format!("line {}: {m}", lineno + 1));
            let (ctx, vals) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected <context>\\t<logits>".into()))?;
            let ids = ctx
                .split_whitespace()
                .map(|s| vocab.id(s))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| bad(e.to_string()))?;
            if ids.len() != order {
                return Err(bad(format!("context has {} tokens, expected {order}", ids.len())));
            }
            let z = vals
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let key = policy.context_key(&ids);
            if policy.logits(key).is_some() {
                return Err(bad("duplicate context".into()));
            }
            policy.set_logits(key, &z).map_err(|e| bad(e.to_string()))?;
        }
        Ok(policy)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Policy> {
        Policy::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_exact(entries in prop::collection::vec(
            (prop::collection::vec(0u32..7, 2), prop::collection::vec(-1e6f64..1e6, 7)), 0..20)) {
            let mut p = Policy::uniform(Arc::new(Vocab::synthetic(7).unwrap()), 2).unwrap();
            for (ctx, z) in &entries {
                let k = p.context_key(ctx);
                p.set_logits(k, z).unwrap();
            }
            let back = Policy::from_text(&p.to_text()).unwrap();
            prop_assert_eq!(back.to_text(), p.to_text());
            prop_assert!(back == p);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Policy::from_text("nope").is_err());
        let p = Policy::uniform(Arc::new(Vocab::synthetic(3).unwrap()), 1).unwrap();
        let mut t = p.to_text();
        t.push_str("w00\t1 2\n");
        assert!(Policy::from_text(&t).is_err());
        let mut t = p.to_text();
        t.push_str("w00\t1 2 x\n");
        assert!(Policy::from_text(&t).is_err());
    }
}
