//! Atomic file output: every artifact is written to a temporary file in the
//! destination directory and renamed into place, so a crash or error mid-write
//! never leaves a truncated CSV behind.

use std::io::Write;
use std::path::Path;

use crate::CliError;

/// Write `path` atomically. `fill` receives the open temporary file; any
/// error from it aborts the write and discards the temporary.
pub fn atomic_write<E, F>(path: &Path, fill: F) -> Result<(), CliError>
where
    E: std::fmt::Display,
    F: FnOnce(&mut dyn Write) -> Result<(), E>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io_err = |e: &dyn std::fmt::Display| CliError::Io(format!("write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(&e))?;
    fill(tmp.as_file_mut()).map_err(|e| io_err(&e))?;
    tmp.as_file_mut().flush().map_err(|e| io_err(&e))?;
    tmp.persist(path).map_err(|e| io_err(&e))?;
    Ok(())
}

/// Create the output directory (and parents) if absent.
pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Io(format!("create {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_creates_file_with_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        atomic_write(&path, |w| writeln!(w, "a,b")).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n");
    }

    #[test]
    fn failed_fill_leaves_no_file_behind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let result = atomic_write(&path, |w| {
            writeln!(w, "partial")?;
            Err::<(), std::io::Error>(std::io::Error::other("boom"))
        });
        assert!(matches!(result, Err(CliError::Io(_))));
        assert!(!path.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn atomic_write_replaces_existing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        atomic_write(&path, |w| writeln!(w, "old")).unwrap();
        atomic_write(&path, |w| writeln!(w, "new")).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "new\n");
    }
}
