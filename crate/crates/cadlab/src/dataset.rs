//! JSON-lines dataset files, one sample per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use cadlab_core::scm::{Latents, MultimodalSample};
use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: u64,
    x: Vec<Vec<f64>>,
    mask: Vec<u8>,
    y: usize,
    age: f64,
    severity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<Vec<f64>>,
}

impl From<&MultimodalSample> for Record {
    fn from(s: &MultimodalSample) -> Self {
        let (z, c, b) = match &s.latents {
            Some(l) => (Some(l.z.clone()), Some(l.c.clone()), Some(l.b.clone())),
            None => (None, None, None),
        };
        Record {
            id: s.id,
            x: s.features.clone(),
            mask: s.mask.iter().map(|&m| u8::from(m)).collect(),
            y: s.label,
            age: s.age,
            severity: s.severity,
            z,
            c,
            b,
        }
    }
}

fn to_sample(r: Record, line: usize, modalities: usize) -> Result<MultimodalSample, Error> {
    let bad = |msg: String| Err(Error::Record { line, msg });
    if r.mask.len() != modalities {
        return bad(format!("mask has {} entries, expected {modalities}", r.mask.len()));
    }
    if r.x.len() != modalities {
        return bad(format!("x has {} modalities, expected {modalities}", r.x.len()));
    }
    if let Some(&v) = r.mask.iter().find(|&&v| v > 1) {
        return bad(format!("mask entry {v} is not 0 or 1"));
    }
    let mask: Vec<bool> = r.mask.iter().map(|&v| v == 1).collect();
    if mask.iter().zip(&r.x).any(|(&m, x)| m && x.is_empty()) {
        return bad("observed modality has no features".into());
    }
    let latents = match (r.z, r.c, r.b) {
        (Some(z), Some(c), Some(b)) => Some(Latents { z, c, b }),
        (None, None, None) => None,
        _ => return bad("latents z, c and b must appear together".into()),
    };
    Ok(MultimodalSample {
        id: r.id,
        features: r.x,
        mask,
        label: r.y,
        age: r.age,
        severity: r.severity,
        latents,
    })
}

pub fn write_dataset<W: Write>(samples: &[MultimodalSample], mut out: W) -> Result<(), Error> {
    for s in samples {
        serde_json::to_writer(&mut out, &Record::from(s))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset(samples: &[MultimodalSample], path: &Path) -> Result<(), Error> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(samples, BufWriter::new(f))
}

/// Parses a dataset. The modality count is taken from `modalities` or,
/// failing that, from the first record; every line must agree with it.
pub fn read_dataset<R: BufRead>(input: R, modalities: Option<usize>) -> Result<Vec<MultimodalSample>, Error> {
    let mut out = Vec::new();
    let mut m = modalities;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let expected = *m.get_or_insert(rec.mask.len());
        out.push(to_sample(rec, i + 1, expected)?);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, modalities: Option<usize>) -> Result<Vec<MultimodalSample>, Error> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(f), modalities).map_err(|e| e.in_file(path))
}
