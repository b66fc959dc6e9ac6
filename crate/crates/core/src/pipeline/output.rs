//! Output files: provenance headers, CSV/JSON writers and the directory
//! lock.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::PipelineError;

pub const LOCK_FILE: &str = ".vpoll.lock";

/// Identifies the run that produced a file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub run_id: String,
    pub seed: u64,
    pub model: String,
    /// Weight(s) applied, e.g. `0.8` or `US:0.23,CN:0.31`.
    pub h: String,
}

impl Provenance {
    pub fn header_line(&self) -> String {
        format!(
            "# run_id={} seed={} model={} h={}\n",
            self.run_id, self.seed, self.model, self.h
        )
    }
}

/// Formats a float for output; NaN and infinities become `NA`, `inf`,
/// `-inf`.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        x.to_string()
    }
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Writes a CSV preceded by the provenance comment line.
pub fn write_csv(
    path: &Path,
    prov: &Provenance,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), PipelineError> {
    let mut f = File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(prov.header_line().as_bytes())
        .map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    let csv_err = |e: csv::Error| PipelineError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Writes pretty JSON. Objects get a leading `_meta` member with the
/// provenance; other values are wrapped as `{"_meta": .., "data": ..}`.
pub fn write_json(path: &Path, prov: &Provenance, value: &impl Serialize) -> Result<(), PipelineError> {
    let meta = serde_json::to_value(prov).expect("provenance serializes");
    let v = serde_json::to_value(value).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    let mut out = serde_json::Map::new();
    out.insert("_meta".into(), meta);
    match v {
        serde_json::Value::Object(m) => out.extend(m),
        other => {
            out.insert("data".into(), other);
        }
    }
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(out)).expect("json value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(dir.to_path_buf())),
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            run_id: "abc".into(),
            seed: 7,
            model: "m".into(),
            h: "0.5".into(),
        }
    }

    #[test]
    fn csv_has_header_comment() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_csv(&p, &prov(), &["a", "b"], vec![vec!["1".into(), "2".into()]]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "# run_id=abc seed=7 model=m h=0.5\na,b\n1,2\n");
    }

    #[test]
    fn json_carries_meta() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_json(&p, &prov(), &serde_json::json!({"k": 1})).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["_meta"]["seed"], 7);
        assert_eq!(v["k"], 1);
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutputLock::acquire(dir.path()), Err(PipelineError::Locked(_))));
        drop(lock);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }
}
