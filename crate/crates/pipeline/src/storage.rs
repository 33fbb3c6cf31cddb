//! Training-set dump and restore.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use eduction_core::codec::{Decoder, Encoder};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::PipelineError;
use crate::training::{ClassStats, TrainingSet};

pub const BINARY_VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpMode {
    Binary,
    GzipBinary,
    CsvText,
    Xml,
    Html,
    Sql,
}

impl DumpMode {
    pub const ALL: [DumpMode; 6] = [
        DumpMode::Binary,
        DumpMode::GzipBinary,
        DumpMode::CsvText,
        DumpMode::Xml,
        DumpMode::Html,
        DumpMode::Sql,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DumpMode::Binary => "BINARY",
            DumpMode::GzipBinary => "GZIP_BINARY",
            DumpMode::CsvText => "CSV_TEXT",
            DumpMode::Xml => "XML",
            DumpMode::Html => "HTML",
            DumpMode::Sql => "SQL",
        }
    }
}

impl fmt::Display for DumpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DumpMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DumpMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| PipelineError::UnsupportedDumpMode(s.to_owned()))
    }
}

pub fn encode_binary(ts: &TrainingSet) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.u8(BINARY_VERSION)
        .u32(ts.dimension.unwrap_or(0) as u32)
        .u32(ts.classes.len() as u32);
    for (id, stats) in &ts.classes {
        enc.i64(*id).u64(stats.count);
        for v in &stats.mean {
            enc.f64(*v);
        }
    }
    enc.finish()
}

pub fn decode_binary(buf: &[u8]) -> Result<TrainingSet, PipelineError> {
    let mut dec = Decoder::new(buf);
    dec.expect_version(BINARY_VERSION)?;
    let dim = dec.u32()? as usize;
    let n = dec.u32()?;
    let mut ts = TrainingSet {
        dimension: (dim > 0).then_some(dim),
        ..TrainingSet::default()
    };
    for _ in 0..n {
        let id = dec.i64()?;
        let count = dec.u64()?;
        let mean = (0..dim).map(|_| dec.f64()).collect::<Result<Vec<_>, _>>()?;
        if ts.classes.insert(id, ClassStats { mean, count }).is_some() {
            return Err(PipelineError::CorruptDump(format!("class {id} appears twice")));
        }
    }
    dec.finish()?;
    if dim == 0 && n > 0 {
        return Err(PipelineError::CorruptDump("classes without a dimension".into()));
    }
    Ok(ts)
}

fn encode_csv(ts: &TrainingSet) -> String {
    let dim = ts.dimension.unwrap_or(0);
    let mut out = String::from("class_id,count");
    for i in 0..dim {
        out.push_str(&format!(",c{i}"));
    }
    out.push('\n');
    for (id, stats) in &ts.classes {
        out.push_str(&format!("{id},{}", stats.count));
        for v in &stats.mean {
            // 17 significant digits round-trip every f64
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

fn decode_csv(text: &str) -> Result<TrainingSet, PipelineError> {
    let corrupt = |m: String| PipelineError::CorruptDump(m);
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| corrupt("missing header".into()))?
        .split(',')
        .collect();
    if header.len() < 2 || header[0] != "class_id" || header[1] != "count" {
        return Err(corrupt("header must start with class_id,count".into()));
    }
    let dim = header.len() - 2;
    for (i, h) in header[2..].iter().enumerate() {
        if *h != format!("c{i}") {
            return Err(corrupt(format!("unexpected column `{h}`")));
        }
    }
    let mut ts = TrainingSet {
        dimension: (dim > 0).then_some(dim),
        ..TrainingSet::default()
    };
    for (row, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(corrupt(format!("row {} has {} fields", row + 1, fields.len())));
        }
        let bad = |f: &str| corrupt(format!("row {}: cannot parse `{f}`", row + 1));
        let id: i64 = fields[0].parse().map_err(|_| bad(fields[0]))?;
        let count: u64 = fields[1].parse().map_err(|_| bad(fields[1]))?;
        let mean = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad(f)))
            .collect::<Result<Vec<_>, _>>()?;
        if ts.classes.insert(id, ClassStats { mean, count }).is_some() {
            return Err(corrupt(format!("class {id} appears twice")));
        }
    }
    if dim == 0 && !ts.classes.is_empty() {
        return Err(corrupt("classes without a dimension".into()));
    }
    Ok(ts)
}

pub fn dump<W: Write>(ts: &TrainingSet, mode: DumpMode, sink: &mut W) -> Result<(), PipelineError> {
    match mode {
        DumpMode::Binary => sink.write_all(&encode_binary(ts))?,
        DumpMode::GzipBinary => {
            let mut gz = GzEncoder::new(sink, Compression::default());
            gz.write_all(&encode_binary(ts))?;
            gz.finish()?;
        }
        DumpMode::CsvText => sink.write_all(encode_csv(ts).as_bytes())?,
        other => return Err(PipelineError::UnsupportedDumpMode(other.name().to_owned())),
    }
    Ok(())
}

pub fn restore<R: Read>(mode: DumpMode, source: &mut R) -> Result<TrainingSet, PipelineError> {
    let mut buf = Vec::new();
    match mode {
        DumpMode::Binary => {
            source.read_to_end(&mut buf)?;
            decode_binary(&buf)
        }
        DumpMode::GzipBinary => {
            GzDecoder::new(source)
                .read_to_end(&mut buf)
                .map_err(|e| PipelineError::CorruptDump(e.to_string()))?;
            decode_binary(&buf)
        }
        DumpMode::CsvText => {
            source.read_to_end(&mut buf)?;
            let text = String::from_utf8(buf).map_err(|e| PipelineError::CorruptDump(e.to_string()))?;
            decode_csv(&text)
        }
        other => Err(PipelineError::UnsupportedDumpMode(other.name().to_owned())),
    }
}
