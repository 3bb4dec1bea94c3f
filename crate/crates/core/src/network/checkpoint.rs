//! Text checkpoint format.
//!
//! ```text
//! gradflow-params v1 d=2 m=30 mu=0.03 W1=30x2 b1=30 W2=30x30 ... W5=1x30 b5=1
//! W1 <row-major values>
//! b1 <values>
//! ...
//! b5 <value>
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Layout, NetworkParams, DEPTH};
use crate::error::{Error, Result};

const MAGIC: &str = "gradflow-params";
const VERSION: &str = "v1";

fn header(layout: &Layout, mu: f64) -> String {
    let mut h = format!(
        "{MAGIC} {VERSION} d={} m={} mu={mu:e}",
        layout.input_dim, layout.width
    );
    for l in 1..=DEPTH {
        let (r, c) = layout.weight_shape(l);
        let _ = write!(h, " W{l}={r}x{c} b{l}={}", layout.bias_len(l));
    }
    h
}

pub(super) fn to_text(params: &NetworkParams) -> String {
    let layout = params.layout();
    let mut out = header(&layout, params.mu());
    out.push('\n');
    for l in 1..=DEPTH {
        for (name, view) in [
            (format!("W{l}"), params.layout().weight_slice(l, params.as_slice()).to_vec()),
            (format!("b{l}"), params.bias(l).to_vec()),
        ] {
            out.push_str(&name);
            for v in view {
                let _ = write!(out, " {v:e}");
            }
            out.push('\n');
        }
    }
    out
}

pub(super) fn from_text(text: &str, path: &Path) -> Result<NetworkParams> {
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let mut fields = head.split_whitespace();
    if fields.next() != Some(MAGIC) || fields.next() != Some(VERSION) {
        return Err(bad(format!("unrecognised header '{head}'")));
    }
    let (mut d, mut m, mut mu) = (None, None, None);
    for f in fields {
        if let Some(v) = f.strip_prefix("d=") {
            d = v.parse::<usize>().ok();
        } else if let Some(v) = f.strip_prefix("m=") {
            m = v.parse::<usize>().ok();
        } else if let Some(v) = f.strip_prefix("mu=") {
            mu = v.parse::<f64>().ok();
        }
    }
    let (d, m, mu) = match (d, m, mu) {
        (Some(d), Some(m), Some(mu)) => (d, m, mu),
        _ => return Err(bad("header is missing d, m or mu".into())),
    };
    let layout = Layout::new(d, m)?;
    if head != header(&layout, mu) {
        return Err(bad("shape list in header does not match d and m".into()));
    }
    let mut values = Vec::with_capacity(layout.num_params());
    for l in 1..=DEPTH {
        let (r, c) = layout.weight_shape(l);
        for (name, len) in [(format!("W{l}"), r * c), (format!("b{l}"), layout.bias_len(l))] {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            let mut toks = line.split_whitespace();
            if toks.next() != Some(name.as_str()) {
                return Err(bad(format!("expected tensor {name}, found '{line:.20}'")));
            }
            let before = values.len();
            for t in toks {
                values.push(
                    t.parse::<f64>()
                        .map_err(|_| bad(format!("bad number '{t}' in {name}")))?,
                );
            }
            if values.len() - before != len {
                return Err(bad(format!(
                    "{name} has {} entries, expected {len}",
                    values.len() - before
                )));
            }
        }
    }
    if lines.next().is_some() {
        return Err(bad("trailing data after b5".into()));
    }
    NetworkParams::from_flat(layout, mu, values)
}

pub fn save_params(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_text(params))?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    from_text(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn text_round_trip_is_exact(d in 1usize..4, m in 1usize..6, seed in any::<u64>(), mu in 0.0f64..1.0) {
            let mut p = init_params(d, m, mu, seed).unwrap();
            // non-trivial biases too
            for (i, v) in p.as_mut_slice().iter_mut().enumerate() {
                *v += (i as f64).sin() * 1e-3;
            }
            let text = to_text(&p);
            let q = from_text(&text, Path::new("mem")).unwrap();
            prop_assert_eq!(p.as_slice().len(), q.as_slice().len());
            for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(p.mu().to_bits(), q.mu().to_bits());
        }
    }

    #[test]
    fn rejects_truncated_and_wrong_shapes() {
        let p = init_params(2, 3, 0.03, 1).unwrap();
        let text = to_text(&p);
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(from_text(&truncated, Path::new("t")).is_err());
        let wrong = text.replacen("m=3", "m=4", 1);
        assert!(from_text(&wrong, Path::new("t")).is_err());
        assert!(from_text("nonsense", Path::new("t")).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("gf-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("u_step_0.params");
        let p = init_params(3, 4, 0.03, 99).unwrap();
        save_params(&p, &path).unwrap();
        assert_eq!(load_params(&path).unwrap(), p);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
