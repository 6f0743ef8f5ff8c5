//! Plain-text model format:
//!
//! ```text
//! gtfs2vec-autoencoder v1
//! seed 42
//! layer enc1 48 34
//! w <34 values>      (48 lines, row-major)
//! b <48 values>
//! layer enc2 64 48
//! ...
//! ```

use std::fmt::Write as _;

use super::{AutoencoderError, AutoencoderModel, DenseLayer};
use crate::matrix::Matrix;

const MAGIC: &str = "gtfs2vec-autoencoder v1";
const NAMES: [&str; 4] = ["enc1", "enc2", "dec1", "dec2"];

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v:?}");
    }
    s
}

impl AutoencoderModel {
    pub fn to_text(&self) -> String {
        let mut s = format!("{MAGIC}\nseed {}\n", self.seed);
        for (name, layer) in NAMES.iter().zip(self.layers()) {
            let _ = writeln!(s, "layer {name} {} {}", layer.output_dim(), layer.input_dim());
            for row in layer.weights.iter_rows() {
                let _ = writeln!(s, "w {}", join(row));
            }
            let _ = writeln!(s, "b {}", join(&layer.bias));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, AutoencoderError> {
        let err = |m: String| AutoencoderError::Parse(m);
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some(MAGIC) {
            return Err(err("missing header".into()));
        }
        let seed = lines
            .next()
            .and_then(|l| l.strip_prefix("seed "))
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| err("missing seed".into()))?;
        let numbers = |line: Option<&str>, tag: &str, len: usize| -> Result<Vec<f64>, AutoencoderError> {
            let line = line.ok_or_else(|| err(format!("truncated before `{tag}` line")))?;
            let rest = line
                .strip_prefix(tag)
                .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some(r) } else { None }))
                .ok_or_else(|| err(format!("expected `{tag}` line, got `{line}`")))?;
            let vals: Vec<f64> = rest
                .split_ascii_whitespace()
                .map(|t| t.parse().map_err(|_| err(format!("bad number `{t}`"))))
                .collect::<Result<_, _>>()?;
            if vals.len() != len {
                return Err(err(format!("`{tag}` line has {} values, expected {len}", vals.len())));
            }
            Ok(vals)
        };
        let mut layers = Vec::with_capacity(4);
        for name in NAMES {
            let header = lines.next().ok_or_else(|| err(format!("missing layer {name}")))?;
            let parts: Vec<&str> = header.split_ascii_whitespace().collect();
            let (out, inp) = match parts.as_slice() {
                ["layer", n, o, i] if *n == name => (
                    o.parse::<usize>().map_err(|_| err("bad layer shape".into()))?,
                    i.parse::<usize>().map_err(|_| err("bad layer shape".into()))?,
                ),
                _ => return Err(err(format!("expected `layer {name} <out> <in>`, got `{header}`"))),
            };
            let mut weights = Matrix::zeros(out, inp);
            for r in 0..out {
                weights.row_mut(r).copy_from_slice(&numbers(lines.next(), "w", inp)?);
            }
            let bias = numbers(lines.next(), "b", out)?;
            layers.push(DenseLayer { weights, bias });
        }
        let [enc1, enc2, dec1, dec2]: [DenseLayer; 4] = layers.try_into().expect("four layers");
        if enc1.output_dim() != enc2.input_dim()
            || enc2.output_dim() != dec1.input_dim()
            || dec1.output_dim() != dec2.input_dim()
            || dec2.output_dim() != enc1.input_dim()
        {
            return Err(err("layer shapes do not chain".into()));
        }
        Ok(AutoencoderModel {
            enc1,
            enc2,
            dec1,
            dec2,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let m = AutoencoderModel::new(11);
        let back = AutoencoderModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_garbage() {
        assert!(AutoencoderModel::from_text("").is_err());
        let text = AutoencoderModel::with_dims(2, 3, 2, 1).to_text();
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(AutoencoderModel::from_text(&truncated).is_err());
        let wrong = text.replacen("layer enc2", "layer dec9", 1);
        assert!(AutoencoderModel::from_text(&wrong).is_err());
    }
}
