use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use delayspace::report::{ConfigEcho, RunManifest};

use crate::failure::Failure;

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Output directory plus the manifest being assembled for one command.
pub struct Run {
    out_dir: PathBuf,
    pub manifest: RunManifest,
}

impl Run {
    pub fn start(command: &str, config: ConfigEcho, out_dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(out_dir)
            .map_err(|e| Failure::input(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest::new(command, config, now()),
        })
    }

    pub fn warn(&mut self, message: String) {
        eprintln!("warning: {message}");
        self.manifest.warnings.push(message);
    }

    /// Creates `name` in the output directory and records it in the manifest.
    pub fn write(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> Result<(), Failure>,
    ) -> Result<(), Failure> {
        let path = self.out_dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        self.manifest.outputs.push(path);
        Ok(())
    }

    /// Writes `manifest.json` last so that every listed output exists.
    pub fn finish(mut self) -> Result<(), Failure> {
        self.manifest.finished_at = now();
        let path = self.out_dir.join("manifest.json");
        self.manifest.outputs.push(path.clone());
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &self.manifest)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}
