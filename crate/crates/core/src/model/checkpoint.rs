//! Plain-text checkpoint format.
//!
//! ```text
//! stlstm-checkpoint v1
//! kind=st_stacked locations=5 vars=3 n1=20 n2=32 activation=tanh seq_len=10 horizon=1
//! layer1.loc0.w_xi 4 3
//! <12 values, one per line>
//! ...
//! dense.b 1 1
//! <1 value>
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a
//! save/load/save cycle is byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};

use super::{ModelParams, ModelSpec};

pub const CHECKPOINT_MAGIC: &str = "stlstm-checkpoint";
const VERSION: &str = "v1";

pub fn write_checkpoint(spec: &ModelSpec, params: &ModelParams) -> Result<String> {
    spec.validate()?;
    params.check_spec(spec)?;
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC} {VERSION}");
    let _ = writeln!(out, "{}", spec.to_kv_line());
    for t in params.tensors() {
        let _ = writeln!(out, "{} {} {}", t.name, t.rows, t.cols);
        for v in t.data {
            let _ = writeln!(out, "{v:?}");
        }
    }
    Ok(out)
}

pub fn save_checkpoint(spec: &ModelSpec, params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = write_checkpoint(spec, params)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelSpec, ModelParams)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}

/// Parses a checkpoint. Nothing is returned unless every tensor is complete.
pub fn read_checkpoint<R: Read>(reader: R) -> Result<(ModelSpec, ModelParams)> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(Error::CheckpointParse {
                line: i + 1,
                detail: e.to_string(),
            }),
            None => Err(Error::CheckpointParse {
                line: 0,
                detail: format!("unexpected end of file, expected {what}"),
            }),
        }
    };

    let (_, header) = next("header")?;
    let mut parts = header.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(CHECKPOINT_MAGIC), Some(VERSION), None) => {}
        (Some(CHECKPOINT_MAGIC), Some(found), _) => {
            return Err(Error::CheckpointVersion {
                expected: VERSION.into(),
                found: found.into(),
            })
        }
        _ => {
            return Err(Error::CheckpointParse {
                line: 1,
                detail: format!("not a checkpoint header: `{header}`"),
            })
        }
    }

    let (line_no, spec_line) = next("model spec")?;
    let spec = ModelSpec::from_kv_line(&spec_line).map_err(|e| Error::CheckpointParse {
        line: line_no,
        detail: e.to_string(),
    })?;

    let mut params = ModelParams::zeros(&spec);
    for t in params.tensors_mut() {
        let (line_no, head) = next(&format!("tensor `{}`", t.name))?;
        let fields: Vec<&str> = head.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::CheckpointParse {
                line: line_no,
                detail: format!("expected `name rows cols`, got `{head}`"),
            });
        }
        let dims: Vec<usize> = fields[1..]
            .iter()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::CheckpointParse {
                line: line_no,
                detail: format!("bad dimension in `{head}`: {e}"),
            })?;
        if fields[0] != t.name {
            return Err(Error::CheckpointShape {
                tensor: t.name.clone(),
                detail: format!("found tensor `{}` at line {line_no}", fields[0]),
            });
        }
        if (dims[0], dims[1]) != (t.rows, t.cols) {
            return Err(Error::CheckpointShape {
                tensor: t.name.clone(),
                detail: format!("expected {}x{}, found {}x{}", t.rows, t.cols, dims[0], dims[1]),
            });
        }
        for slot in t.data.iter_mut() {
            let (line_no, raw) = next(&format!("value of `{}`", t.name))?;
            let v: f64 = raw.trim().parse().map_err(|_| Error::CheckpointParse {
                line: line_no,
                detail: format!("not a number: `{raw}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::CheckpointParse {
                    line: line_no,
                    detail: format!("non-finite value `{raw}`"),
                });
            }
            *slot = v;
        }
    }
    if let Ok((line_no, extra)) = next("end of file") {
        if !extra.trim().is_empty() {
            return Err(Error::CheckpointParse {
                line: line_no,
                detail: format!("trailing content `{extra}`"),
            });
        }
    }
    Ok((spec, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::InnerActivation;
    use crate::model::{predict, ModelKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            locations: 2,
            vars: 3,
            n1: 4,
            n2: 3,
            activation: InnerActivation::Sigmoid,
            seq_len: 4,
            horizon: 2,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [ModelKind::Stacked, ModelKind::StStacked] {
            let s = spec(kind);
            let mut p = ModelParams::random_full(&s, 1.0, &mut rng);
            // awkward magnitudes must survive too
            p.b_dense = 1.0e-300;
            p.w_dense[0] = -123456789.123456789;
            let first = write_checkpoint(&s, &p).unwrap();
            let (s2, p2) = read_checkpoint(first.as_bytes()).unwrap();
            assert_eq!(s, s2);
            assert_eq!(p, p2);
            assert_eq!(first, write_checkpoint(&s2, &p2).unwrap());

            let window: Vec<Vec<f64>> = (0..4).map(|t| vec![0.1 * t as f64; 6]).collect();
            assert_eq!(
                predict(&s, &p, &window).unwrap().to_bits(),
                predict(&s2, &p2, &window).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn location_cells_are_named_by_index() {
        let s = spec(ModelKind::StStacked);
        let text = write_checkpoint(&s, &ModelParams::zeros(&s)).unwrap();
        assert!(text.starts_with("stlstm-checkpoint v1\nkind=st_stacked "));
        assert!(text.contains("\nlayer1.loc1.w_hc 2 2\n"));
        assert!(text.contains("\ndense.b 1 1\n"));
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let s = spec(ModelKind::Stacked);
        let text = write_checkpoint(&s, &ModelParams::zeros(&s)).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(read_checkpoint(cut.as_bytes()), Err(Error::CheckpointParse { .. })));
        assert!(matches!(read_checkpoint("".as_bytes()), Err(Error::CheckpointParse { .. })));
    }

    #[test]
    fn distinct_errors_for_version_and_shape() {
        let s = spec(ModelKind::Stacked);
        let text = write_checkpoint(&s, &ModelParams::zeros(&s)).unwrap();
        let v2 = text.replacen("v1", "v2", 1);
        assert!(matches!(read_checkpoint(v2.as_bytes()), Err(Error::CheckpointVersion { .. })));

        let bad_shape = text.replacen("layer1.w_xi 4 6", "layer1.w_xi 6 4", 1);
        assert!(matches!(read_checkpoint(bad_shape.as_bytes()), Err(Error::CheckpointShape { .. })));

        let renamed = text.replacen("layer1.w_xf", "layer1.w_zz", 1);
        assert!(matches!(read_checkpoint(renamed.as_bytes()), Err(Error::CheckpointShape { .. })));

        let garbage = text.replacen("\n0.0\n", "\nabc\n", 1);
        assert!(matches!(read_checkpoint(garbage.as_bytes()), Err(Error::CheckpointParse { .. })));

        let trailing = format!("{text}extra\n");
        assert!(matches!(read_checkpoint(trailing.as_bytes()), Err(Error::CheckpointParse { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let s = spec(ModelKind::StStacked);
        let p = ModelParams::random_full(&s, 0.5, &mut ChaCha8Rng::seed_from_u64(2));
        save_checkpoint(&s, &p, &path).unwrap();
        let (s2, p2) = load_checkpoint(&path).unwrap();
        assert_eq!((s, p), (s2, p2));
        assert!(matches!(load_checkpoint(dir.path().join("nope")), Err(Error::Io { .. })));
    }
}
