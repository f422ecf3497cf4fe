//! Run directory layout: `manifest.txt`, `log.tsv`, `checkpoints/`, `outputs/`.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nmt_core::config::RunConfig;

pub const MANIFEST: &str = "manifest.txt";
pub const LOG: &str = "log.tsv";
pub const CHECKPOINTS: &str = "checkpoints";
pub const OUTPUTS: &str = "outputs";

pub struct RunDir {
    root: PathBuf,
}

fn build_id() -> String {
    format!("nmt {}", env!("CARGO_PKG_VERSION"))
}

impl RunDir {
    fn open(root: &Path) -> Result<Self> {
        for sub in [CHECKPOINTS, OUTPUTS] {
            let d = root.join(sub);
            fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    fn write_manifest(&self, subcommand: &str, body: &str) -> Result<()> {
        let text = format!("# subcommand {subcommand}\n# build {}\n{body}", build_id());
        let p = self.root.join(MANIFEST);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    /// Creates the layout and writes the manifest of a non-training command.
    pub fn create(root: &Path, subcommand: &str, fields: &[(&str, String)]) -> Result<Self> {
        let run = Self::open(root)?;
        let body: String = fields.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        run.write_manifest(subcommand, &body)?;
        Ok(run)
    }

    /// The manifest is a loadable config: `--config run/manifest.txt` repeats
    /// the run.
    pub fn create_with_config(root: &Path, subcommand: &str, cfg: &RunConfig) -> Result<Self> {
        let run = Self::open(root)?;
        run.write_manifest(subcommand, &cfg.to_text())?;
        Ok(run)
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.root.join(OUTPUTS).join(name)
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join(CHECKPOINTS).join(format!("{name}.ckpt"))
    }

    pub fn write_output(&self, name: &str, text: &str) -> Result<()> {
        let p = self.output(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    pub fn log(&self, header: &str) -> Result<EpochLog> {
        let path = self.root.join(LOG);
        let mut file =
            File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        writeln!(file, "{header}")?;
        Ok(EpochLog { file, path })
    }
}

/// Appends and flushes one TSV row per epoch.
pub struct EpochLog {
    file: File,
    path: PathBuf,
}

impl EpochLog {
    pub fn row(&mut self, line: &str) -> nmt_core::Result<()> {
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .map_err(|e| nmt_core::Error::Io {
                path: self.path.clone(),
                source: e,
            })
    }
}
