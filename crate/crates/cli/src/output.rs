//! Output files. Every text artifact starts with
//! `# mfid-toolkit v<version> config=<hash> seed=<seed>`.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use sha2::{Digest, Sha256};

pub struct Run {
    pub out: PathBuf,
    pub seed: u64,
    pub hash: String,
}

impl Run {
    /// `settings` is a canonical rendering of everything that affects the
    /// results; paths and the output directory are kept out of it so runs
    /// into different directories stay byte-identical.
    pub fn new(out: PathBuf, seed: u64, settings: &str) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let digest = Sha256::digest(settings.as_bytes());
        Ok(Self {
            out,
            seed,
            hash: hex::encode(&digest[..8]),
        })
    }

    pub fn header(&self) -> String {
        format!("mfid-toolkit v{} config={} seed={}", env!("CARGO_PKG_VERSION"), self.hash, self.seed)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// A CSV writer positioned after the header comment.
    pub fn csv(&self, name: &str, columns: &[&str]) -> anyhow::Result<csv::Writer<File>> {
        let path = self.path(name);
        let mut file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        writeln!(file, "# {}", self.header())?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(columns)?;
        Ok(w)
    }

    pub fn text(&self, name: &str, body: &str) -> anyhow::Result<()> {
        write_text(&self.path(name), &format!("# {}\n{body}", self.header()))
    }
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Shortest round-trip rendering; infinities as `inf`/`-inf`.
pub fn num(v: f64) -> String {
    format!("{v}")
}
