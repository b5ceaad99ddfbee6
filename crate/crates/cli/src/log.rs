use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

/// Console output mirrored into `run.log`. Lines printed before the output
/// directory is known are held back and written once it is attached.
#[derive(Default)]
pub struct RunLog {
    file: Option<File>,
    pending: Vec<String>,
}

impl RunLog {
    pub fn info(&mut self, line: impl Into<String>) {
        let line = line.into();
        println!("{line}");
        self.record(line);
    }

    pub fn error(&mut self, line: impl Into<String>) {
        let line = line.into();
        eprintln!("{line}");
        self.record(line);
    }

    fn record(&mut self, line: String) {
        match &mut self.file {
            Some(f) => {
                let _ = writeln!(f, "{line}");
            }
            None => self.pending.push(line),
        }
    }

    /// Starts appending to `<dir>/run.log`, creating `dir` if needed.
    pub fn attach(&mut self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut file = OpenOptions::new().create(true).append(true).open(dir.join("run.log"))?;
        for line in self.pending.drain(..) {
            writeln!(file, "{line}")?;
        }
        self.file = Some(file);
        Ok(())
    }

    pub fn is_attached(&self) -> bool {
        self.file.is_some()
    }
}
