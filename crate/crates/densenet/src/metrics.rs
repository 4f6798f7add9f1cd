//! Per-epoch training log: a header line, then one tab-separated record per
//! epoch. Absent validation values are written as `-`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use densenet_core::Metrics;

use crate::error::{Error, Result};

pub const HEADER: &str = "epoch\tlr\ttrain_loss\ttrain_acc\tval_loss\tval_acc\tseconds";

pub fn format_record(m: &Metrics) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        m.epoch,
        m.lr,
        m.train_loss,
        m.train_acc,
        opt(m.val_loss),
        opt(m.val_acc),
        m.seconds
    )
}

pub fn parse_record(line: &str) -> std::result::Result<Metrics, String> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 7 {
        return Err(format!("expected 7 fields, found {}", f.len()));
    }
    let num = |i: usize| f[i].parse::<f64>().map_err(|_| format!("field {} `{}` is not a number", i + 1, f[i]));
    let opt = |i: usize| if f[i] == "-" { Ok(None) } else { num(i).map(Some) };
    Ok(Metrics {
        epoch: f[0].parse().map_err(|_| format!("bad epoch `{}`", f[0]))?,
        lr: num(1)?,
        train_loss: num(2)?,
        train_acc: num(3)?,
        val_loss: opt(4)?,
        val_acc: opt(5)?,
        seconds: num(6)?,
    })
}

pub fn parse_log(text: &str) -> std::result::Result<Vec<Metrics>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err("missing metrics header".into());
    }
    lines
        .enumerate()
        .map(|(i, l)| parse_record(l).map_err(|m| format!("line {}: {m}", i + 2)))
        .collect()
}

/// Appends records as epochs finish, flushing each one.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = MetricsWriter { path: path.to_path_buf(), out: BufWriter::new(file) };
        w.line(HEADER)?;
        Ok(w)
    }

    pub fn write(&mut self, m: &Metrics) -> Result<()> {
        self.line(&format_record(m))
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(epoch: usize, val: bool) -> Metrics {
        Metrics {
            epoch,
            lr: 0.01 / epoch as f64,
            train_loss: 1.0 / 3.0,
            train_acc: 0.5,
            val_loss: val.then_some(0.25),
            val_acc: val.then_some(0.875),
            seconds: 0.0,
        }
    }

    #[test]
    fn records_round_trip() {
        for r in [m(1, true), m(3, false)] {
            assert_eq!(parse_record(&format_record(&r)).unwrap(), r);
        }
        assert!(parse_record("1\t2").is_err());
        assert!(parse_record("1\tx\t0\t0\t-\t-\t0").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        let mut w = MetricsWriter::create(&p).unwrap();
        w.write(&m(1, true)).unwrap();
        w.write(&m(2, true)).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(parse_log(&text).unwrap(), vec![m(1, true), m(2, true)]);
        assert!(parse_log("1\t0\t0\t0\t-\t-\t0\n").is_err());
    }
}
