//! Plain-text checkpoints. Every float is stored as the hex of its bit
//! pattern so a save/load round trip is exact.
//!
//! ```text
//! opfeat-checkpoint 1
//! hp op_dim 32
//! hp learning_rate 3f847ae147ae147b
//! curve forward <hex> <hex> ...
//! block encoder.add.0.w 64 32 1
//! <hex> <hex> ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::model::{HyperParams, Model};
use crate::params::{Block, ParamStore};
use crate::tensor::Mat;
use crate::train::TrainReport;

const MAGIC: &str = "opfeat-checkpoint 1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str) -> Option<f64> {
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

macro_rules! hp_fields {
    (usize: $($u:ident),*; f64: $($f:ident),*) => {
        fn write_hp(hp: &HyperParams, out: &mut String) {
            $( let _ = writeln!(out, "hp {} {}", stringify!($u), hp.$u); )*
            $( let _ = writeln!(out, "hp {} {}", stringify!($f), hex(hp.$f)); )*
            let _ = writeln!(out, "hp seed {}", hp.seed);
        }

        fn set_hp(hp: &mut HyperParams, key: &str, val: &str) -> Option<()> {
            match key {
                $( stringify!($u) => hp.$u = val.parse().ok()?, )*
                $( stringify!($f) => hp.$f = unhex(val)?, )*
                "seed" => hp.seed = val.parse().ok()?,
                _ => return None,
            }
            Some(())
        }
    };
}

hp_fields!(
    usize: op_dim, num_dim, branch_samples, trunk_samples, hidden, depth, decoder_maps,
        attention_layers, forward_steps, batch, trunk_batch, inverse_steps, judgment_epochs,
        corpus_size, corpus_points, corpus_depth;
    f64: learning_rate, inverse_learning_rate, momentum, clip, judgment_learning_rate, threshold);

pub fn to_text(model: &Model, report: &TrainReport) -> String {
    let mut out = format!("{MAGIC}\n");
    write_hp(&model.hp, &mut out);
    for (stage, points) in &report.curves {
        let vals: Vec<String> = points.iter().map(|&v| hex(v)).collect();
        let _ = writeln!(out, "curve {stage} {}", vals.join(" "));
    }
    if let Some(a) = report.judgment_accuracy {
        let _ = writeln!(out, "accuracy {}", hex(a));
    }
    for b in model.store.blocks() {
        let _ = writeln!(out, "block {} {} {} {}", b.name, b.value.rows, b.value.cols, u8::from(b.trainable));
        let vals: Vec<String> = b.value.data.iter().map(|&v| hex(v)).collect();
        let _ = writeln!(out, "{}", vals.join(" "));
    }
    out
}

pub fn from_text(text: &str) -> Result<(Model, TrainReport), CheckpointError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let bad = |line: usize, message: &str| CheckpointError::Format {
        line,
        message: message.to_string(),
    };
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(bad(1, "missing checkpoint header")),
    }
    let mut hp = HyperParams::default();
    let mut report = TrainReport::default();
    let mut store = ParamStore::new();
    while let Some((n, line)) = lines.next() {
        let mut parts = line.split(' ');
        match parts.next() {
            Some("hp") => {
                let (Some(k), Some(v)) = (parts.next(), parts.next()) else {
                    return Err(bad(n, "hp needs a key and a value"));
                };
                set_hp(&mut hp, k, v).ok_or_else(|| bad(n, &format!("bad hyperparameter `{k}`")))?;
            }
            Some("curve") => {
                let stage = parts.next().ok_or_else(|| bad(n, "curve needs a stage"))?;
                let points = parts
                    .filter(|s| !s.is_empty())
                    .map(|s| unhex(s).ok_or_else(|| bad(n, "bad curve value")))
                    .collect::<Result<_, _>>()?;
                report.curves.push((stage.to_string(), points));
            }
            Some("accuracy") => {
                report.judgment_accuracy = Some(parts.next().and_then(unhex).ok_or_else(|| bad(n, "bad accuracy"))?);
            }
            Some("block") => {
                let f: Vec<&str> = parts.collect();
                let [name, rows, cols, trainable] = f[..] else {
                    return Err(bad(n, "block needs name, rows, cols and a trainable flag"));
                };
                let rows: usize = rows.parse().map_err(|_| bad(n, "bad row count"))?;
                let cols: usize = cols.parse().map_err(|_| bad(n, "bad column count"))?;
                let (vn, vals) = lines.next().ok_or_else(|| bad(n, "block values missing"))?;
                let data: Vec<f64> = vals
                    .split(' ')
                    .filter(|s| !s.is_empty())
                    .map(|s| unhex(s).ok_or_else(|| bad(vn, "bad parameter value")))
                    .collect::<Result<_, _>>()?;
                if data.len() != rows * cols {
                    return Err(bad(vn, "value count does not match the block shape"));
                }
                store.push(Block {
                    name: name.to_string(),
                    value: Mat::from_vec(rows, cols, data),
                    trainable: trainable == "1",
                });
            }
            Some("") | None => {}
            Some(other) => return Err(bad(n, &format!("unknown record `{other}`"))),
        }
    }
    Ok((Model::from_parts(hp, store)?, report))
}

pub fn save(path: &Path, model: &Model, report: &TrainReport) -> Result<(), CheckpointError> {
    std::fs::write(path, to_text(model, report))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model, TrainReport), CheckpointError> {
    from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_hyperparams;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = Model::new(check_hyperparams(3)).unwrap();
        let report = TrainReport {
            curves: vec![("forward".into(), vec![0.1, f64::MIN_POSITIVE, -0.0])],
            judgment_accuracy: Some(0.82),
        };
        let text = to_text(&model, &report);
        let (back, rep) = from_text(&text).unwrap();
        assert_eq!(rep, report);
        assert_eq!(back.hp, model.hp);
        for (a, b) in back.store.blocks().iter().zip(model.store.blocks()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.trainable, b.trainable);
            let bits = |m: &Mat| m.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        assert_eq!(to_text(&back, &rep), text);
    }

    #[test]
    fn rejects_damaged_files() {
        assert!(from_text("hello").is_err());
        let model = Model::new(check_hyperparams(3)).unwrap();
        let text = to_text(&model, &TrainReport::default());
        let cut: String = text.lines().take(40).map(|l| format!("{l}\n")).collect();
        assert!(from_text(&cut).is_err());
        let wrong = text.replacen("hp op_dim 8", "hp op_dim 9", 1);
        assert!(from_text(&wrong).is_err());
    }
}
