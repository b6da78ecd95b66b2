use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config",
            Failure::Data(_) => "data",
            Failure::Runtime(_) => "runtime",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Runtime(m) => m,
        }
    }

    /// One JSON object on one line.
    pub fn line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "exit_code": self.exit_code(), "message": self.message() }).to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub fn config(e: impl fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

pub fn data(e: impl fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

pub fn runtime(e: impl fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Parameter validation errors are config errors; anything else raised while
/// an algorithm runs is a runtime failure.
pub fn algorithm(e: dcbplan_core::Error) -> Failure {
    match e {
        dcbplan_core::Error::Validation(_) => config(e),
        _ => runtime(e),
    }
}

pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(OutDir { dir: dir.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        let p = self.path(name);
        std::fs::write(&p, contents).map_err(|e| runtime(format!("cannot write {}: {e}", p.display())))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        self.write(name, dcbplan_core::io::to_json(value).map_err(runtime)?)
    }
}

pub fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(runtime)?;
    for r in rows {
        w.write_record(&r).map_err(runtime)?;
    }
    let bytes = w.into_inner().map_err(runtime)?;
    String::from_utf8(bytes).map_err(runtime)
}
