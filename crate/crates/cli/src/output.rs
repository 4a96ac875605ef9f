//! Run directory writers: diagnostics CSV, raw field snapshots and the manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use geoflow_core::flow::DiagnosticsRecord;
use geoflow_core::State;
use serde_json::Value;

use crate::error::CliError;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"GEOF";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const SNAPSHOT_HEADER_BYTES: usize = 32;
pub const DIAGNOSTICS_HEADER: &str = "t,energy,nk,tube_defect_pre,step_rejections";
pub const MANIFEST_NAME: &str = "manifest.json";

/// 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct OutputDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn write_file(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_diagnostics(&mut self, rows: &[DiagnosticsRecord<f64>]) -> Result<(), CliError> {
        let mut s = String::from(DIAGNOSTICS_HEADER);
        s.push('\n');
        for r in rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_float(r.t),
                fmt_float(r.energy),
                fmt_float(r.nk),
                fmt_float(r.tube_defect_pre),
                r.step_rejections
            ));
        }
        self.write_file("diagnostics.csv", s.as_bytes())
    }

    pub fn write_table(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
        let mut s = header.join(",");
        s.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|&x| fmt_float(x)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        self.write_file(name, s.as_bytes())
    }

    pub fn write_snapshot(&mut self, index: usize, state: &State) -> Result<(), CliError> {
        let name = format!("state_{index}.f64");
        let path = self.dir.join(&name);
        write_snapshot(&path, state)?;
        self.files.push(name);
        Ok(())
    }

    /// Writes `manifest.json` through a temporary file and a rename, with the
    /// final file list filled in.
    pub fn finish(self, mut manifest: Value) -> Result<PathBuf, CliError> {
        manifest["files"] = Value::from(self.files.clone());
        let text = serde_json::to_string_pretty(&manifest).expect("manifest is plain JSON") + "\n";
        let tmp = self.dir.join(".manifest.json.tmp");
        let dst = self.dir.join(MANIFEST_NAME);
        fs::write(&tmp, text).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, &dst).map_err(|e| CliError::io(&dst, e))?;
        Ok(dst)
    }
}

pub fn write_snapshot(path: &Path, state: &State) -> Result<(), CliError> {
    let sizes = state.metric().sizes();
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(SNAPSHOT_HEADER_BYTES);
    header.extend_from_slice(SNAPSHOT_MAGIC);
    header.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    header.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    header.extend_from_slice(&(sizes[0] as u32).to_le_bytes());
    header.extend_from_slice(&(sizes.get(1).copied().unwrap_or(0) as u32).to_le_bytes());
    header.extend_from_slice(&(state.ambient_dim() as u32).to_le_bytes());
    header.resize(SNAPSHOT_HEADER_BYTES, 0);
    let io = |e| CliError::io(path, e);
    w.write_all(&header).map_err(io)?;
    for x in state.points() {
        w.write_all(&x.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub sizes: Vec<usize>,
    pub ambient_dim: usize,
    /// Row-major over grid axes, then ambient components.
    pub data: Vec<f64>,
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, CliError> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| CliError::io(path, e))?;
    let bad = |what: &str| CliError::Usage(format!("{}: {what}", path.display()));
    if bytes.len() < SNAPSHOT_HEADER_BYTES || &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(bad("not a snapshot file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    if word(1) != SNAPSHOT_VERSION as usize {
        return Err(bad("unsupported snapshot version"));
    }
    let m = word(2);
    if !(1..=2).contains(&m) {
        return Err(bad("bad source dimension"));
    }
    let sizes: Vec<usize> = (0..m).map(|i| word(3 + i)).collect();
    let d = word(5);
    let count = sizes.iter().product::<usize>() * d;
    let body = &bytes[SNAPSHOT_HEADER_BYTES..];
    if body.len() != 8 * count {
        return Err(bad("payload length does not match header"));
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Snapshot { sizes, ambient_dim: d, data })
}
