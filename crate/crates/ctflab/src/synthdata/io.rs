//! Dataset export/import: a directory of binary image tensors plus a
//! `manifest.txt`.
//!
//! Manifest grammar (one line per record, space-separated):
//!
//! ```text
//! dataset v1
//! sample <id> <role> <num_boxes> [<x1> <y1> <x2> <y2> <class>]...
//! ```
//!
//! Roles are `labeled | unlabeled | validation`. Coordinates are printed
//! with Rust's shortest-roundtrip float formatting, so parsing them back
//! reproduces the exact f64 bits. Each sample's image lives in
//! `img_<id>.bin` as a tensor block (see the binfmt module).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::binfmt::{read_tensor, write_tensor};
use crate::error::{Error, Result};
use crate::synthdata::generate::SplitSet;
use crate::synthdata::types::{AccessGuard, Annotation, BBox, Role, Sample};

pub fn export_dataset(dir: &Path, ds: &SplitSet) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = BufWriter::new(File::create(dir.join("manifest.txt"))?);
    writeln!(manifest, "dataset v1")?;
    for s in ds.labeled.iter().chain(&ds.unlabeled).chain(&ds.validation) {
        write!(manifest, "sample {} {}", s.id(), s.role().as_str())?;
        let anns = s.annotations_for_harness();
        write!(manifest, " {}", anns.len())?;
        for a in anns {
            write!(
                manifest,
                " {} {} {} {} {}",
                a.bbox.x1, a.bbox.y1, a.bbox.x2, a.bbox.y2, a.class_id
            )?;
        }
        writeln!(manifest)?;
        let mut img = BufWriter::new(File::create(dir.join(format!("img_{}.bin", s.id())))?);
        write_tensor(&mut img, s.image())?;
    }
    Ok(())
}

pub fn import_dataset(dir: &Path) -> Result<SplitSet> {
    let manifest = BufReader::new(File::open(dir.join("manifest.txt"))?);
    let guard = AccessGuard::new();
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut validation = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        let line = line?;
        let parse_err = |detail: String| Error::ConfigParse { line: lineno + 1, detail };
        if lineno == 0 {
            if line.trim() != "dataset v1" {
                return Err(parse_err(format!("expected header 'dataset v1', got {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let kw = tok.next().ok_or_else(|| parse_err("empty record".to_string()))?;
        if kw != "sample" {
            return Err(parse_err(format!("expected 'sample', got {kw:?}")));
        }
        let id: u64 = tok
            .next()
            .ok_or_else(|| parse_err("missing id".to_string()))?
            .parse()
            .map_err(|e| parse_err(format!("bad id: {e}")))?;
        let role = Role::parse(tok.next().ok_or_else(|| parse_err("missing role".to_string()))?)
            .map_err(|e| parse_err(e.to_string()))?;
        let count: usize = tok
            .next()
            .ok_or_else(|| parse_err("missing box count".to_string()))?
            .parse()
            .map_err(|e| parse_err(format!("bad box count: {e}")))?;
        let mut annotations = Vec::with_capacity(count);
        for _ in 0..count {
            let mut field = |name: &str| -> Result<f64> {
                tok.next()
                    .ok_or_else(|| parse_err(format!("missing {name}")))?
                    .parse()
                    .map_err(|e| parse_err(format!("bad {name}: {e}")))
            };
            let x1 = field("x1")?;
            let y1 = field("y1")?;
            let x2 = field("x2")?;
            let y2 = field("y2")?;
            let class_id: usize = tok
                .next()
                .ok_or_else(|| parse_err("missing class".to_string()))?
                .parse()
                .map_err(|e| parse_err(format!("bad class: {e}")))?;
            let bbox =
                BBox::new(x1, y1, x2, y2).map_err(|e| parse_err(format!("bad box: {e}")))?;
            annotations.push(Annotation { bbox, class_id });
        }
        if tok.next().is_some() {
            return Err(parse_err("trailing tokens after declared boxes".to_string()));
        }
        let mut img = BufReader::new(File::open(dir.join(format!("img_{id}.bin")))?);
        let image = read_tensor(&mut img)?;
        let sample = Sample::with_guard(id, image, annotations, role, guard.clone())?;
        match role {
            Role::Labeled => labeled.push(sample),
            Role::Unlabeled => unlabeled.push(sample),
            Role::Validation => validation.push(sample),
        }
    }
    Ok(SplitSet::from_parts(labeled, unlabeled, validation, guard))
}
