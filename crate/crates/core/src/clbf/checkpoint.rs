//! Plain-text certificate checkpoints.
//!
//! ```text
//! s2diff-certificate 1
//! layer_sizes 2 64 64 64 1
//! activation relu
//! c 1
//! lambda 1
//! eps 0.01
//! alpha1 1
//! alpha2 1
//! dt 0.1
//! seed 7
//! input_offset 0 0
//! input_scale 0.5 2
//! weights 0 64 2
//! <64 rows of 2 values>
//! bias 0 64
//! <one row of 64 values>
//! ...
//! ```
//!
//! Weights are written row-major (one output unit per line). Reals use the
//! shortest representation that parses back to the same bits.

use std::fmt::Write as _;
use std::path::Path;

use super::{CertificateConfig, MlpCertificate};
use crate::error::{Error, Result};

const MAGIC: &str = "s2diff-certificate 1";

/// A certificate together with the loss configuration and seed it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub cert: MlpCertificate,
    pub config: CertificateConfig,
    pub seed: u64,
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    let parts: Vec<String> = values.into_iter().map(|v| format!("{v:?}")).collect();
    parts.join(" ")
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let cert = &self.cert;
        let cfg = &self.config;
        let mut out = String::new();
        let sizes: Vec<String> = cert.layer_sizes().iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "layer_sizes {}", sizes.join(" "));
        let _ = writeln!(out, "activation relu");
        let _ = writeln!(out, "c {:?}", cfg.c);
        let _ = writeln!(out, "lambda {:?}", cfg.lambda);
        let _ = writeln!(out, "eps {:?}", cfg.eps);
        let _ = writeln!(out, "alpha1 {:?}", cfg.alpha1);
        let _ = writeln!(out, "alpha2 {:?}", cfg.alpha2);
        let _ = writeln!(out, "dt {:?}", cfg.dt);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "input_offset {}", join(cert.input_offset.iter().copied()));
        let _ = writeln!(out, "input_scale {}", join(cert.input_scale.iter().copied()));
        for (l, lay) in cert.layout.iter().enumerate() {
            let _ = writeln!(out, "weights {l} {} {}", lay.outputs, lay.inputs);
            for j in 0..lay.outputs {
                let _ = writeln!(out, "{}", join((0..lay.inputs).map(|k| cert.weight(l, j, k))));
            }
            let _ = writeln!(out, "bias {l} {}", lay.outputs);
            let _ = writeln!(out, "{}", join((0..lay.outputs).map(|j| cert.bias(l, j))));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l.trim()))
                .ok_or_else(|| Error::Parse(format!("checkpoint ended before {what}")))
        };
        let (_, magic) = next("header")?;
        if magic != MAGIC {
            return Err(Error::Parse(format!("not a certificate checkpoint: `{magic}`")));
        }

        fn field<'a>(line: (usize, &'a str), key: &str) -> Result<&'a str> {
            let (no, text) = line;
            match text.split_once(' ') {
                Some((k, rest)) if k == key => Ok(rest.trim()),
                _ => Err(Error::Parse(format!("line {no}: expected `{key}`"))),
            }
        }
        fn real(s: &str, no: usize) -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {no}: bad number `{s}`")))
        }
        fn reals(line: (usize, &str), expected: usize) -> Result<Vec<f64>> {
            let (no, text) = line;
            let values = text.split_whitespace().map(|s| real(s, no)).collect::<Result<Vec<_>>>()?;
            if values.len() != expected {
                return Err(Error::Parse(format!(
                    "line {no}: expected {expected} values, found {}",
                    values.len()
                )));
            }
            Ok(values)
        }
        fn ints(s: &str, no: usize) -> Result<Vec<usize>> {
            s.split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Parse(format!("line {no}: bad integer `{t}`"))))
                .collect()
        }

        let line = next("layer_sizes")?;
        let sizes = ints(field(line, "layer_sizes")?, line.0)?;
        let mut cert = MlpCertificate::zeros(&sizes).map_err(|e| Error::Parse(e.to_string()))?;
        let line = next("activation")?;
        if field(line, "activation")? != "relu" {
            return Err(Error::Parse(format!("line {}: only relu activations are supported", line.0)));
        }
        let mut scalar = |key: &str| -> Result<f64> {
            let line = next(key)?;
            real(field(line, key)?, line.0)
        };
        let config = CertificateConfig {
            c: scalar("c")?,
            lambda: scalar("lambda")?,
            eps: scalar("eps")?,
            alpha1: scalar("alpha1")?,
            alpha2: scalar("alpha2")?,
            dt: scalar("dt")?,
        };
        let line = next("seed")?;
        let seed = field(line, "seed")?
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad seed", line.0)))?;
        let n = sizes[0];
        let line = next("input_offset")?;
        cert.input_offset = reals((line.0, field(line, "input_offset")?), n)?;
        let line = next("input_scale")?;
        cert.input_scale = reals((line.0, field(line, "input_scale")?), n)?;

        for l in 0..cert.num_layers() {
            let (outputs, inputs) = (sizes[l + 1], sizes[l]);
            let line = next("weights")?;
            if ints(field(line, "weights")?, line.0)? != vec![l, outputs, inputs] {
                return Err(Error::Parse(format!("line {}: weight block header mismatch", line.0)));
            }
            for j in 0..outputs {
                let row = reals(next("weight row")?, inputs)?;
                for (k, w) in row.into_iter().enumerate() {
                    cert.set_weight(l, j, k, w);
                }
            }
            let line = next("bias")?;
            if ints(field(line, "bias")?, line.0)? != vec![l, outputs] {
                return Err(Error::Parse(format!("line {}: bias block header mismatch", line.0)));
            }
            for (j, b) in reals(next("bias row")?, outputs)?.into_iter().enumerate() {
                cert.set_bias(l, j, b);
            }
        }
        if let Ok((no, _)) = next("end") {
            return Err(Error::Parse(format!("line {no}: trailing content")));
        }
        if !cert.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(Checkpoint { cert, config, seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut cert = MlpCertificate::init(&[3, 5, 4, 1], 8).unwrap();
        cert.input_offset = vec![0.1, -0.2, 1.0 / 3.0];
        cert.input_scale = vec![1.0, 2.5, 1e-3];
        cert.set_bias(1, 2, -std::f64::consts::PI);
        Checkpoint {
            cert,
            config: CertificateConfig::default(),
            seed: 42,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let text = ck.to_text();
        let back = Checkpoint::from_text(&text).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.cert.params().iter().zip(ck.cert.params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn rejects_damaged_files() {
        let text = sample().to_text();
        assert!(Checkpoint::from_text("garbage").is_err());
        let truncated: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::from_text(&truncated).is_err());
        let bad = text.replacen("activation relu", "activation tanh", 1);
        assert!(Checkpoint::from_text(&bad).is_err());
        let extra = format!("{text}1 2 3\n");
        assert!(Checkpoint::from_text(&extra).is_err());
    }
}
