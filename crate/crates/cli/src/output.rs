//! Atomic file and directory writes (temporary sibling, then rename).

use std::fs;
use std::io::Write;
use std::path::Path;

use depfusion_core::Result;
use serde::Serialize;

fn parent(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = parent(path);
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_atomic(path, &text)
}

/// Fills a fresh temporary directory with `fill`, then moves it to `path`,
/// replacing any previous directory there.
pub fn write_dir_atomic(path: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let dir = parent(path);
    fs::create_dir_all(dir)?;
    let tmp = tempfile::Builder::new().prefix(".partial-").tempdir_in(dir)?;
    fill(tmp.path())?;
    if path.exists() {
        fs::remove_dir_all(path)?;
    }
    fs::rename(tmp.keep(), path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replaces_files_and_dirs() {
        let root = tempfile::tempdir().unwrap();
        let f = root.path().join("a/b.txt");
        write_atomic(&f, b"one").unwrap();
        write_atomic(&f, b"two").unwrap();
        assert_eq!(fs::read(&f).unwrap(), b"two");

        let d = root.path().join("bundle");
        write_dir_atomic(&d, |p| Ok(fs::write(p.join("x"), b"1")?)).unwrap();
        write_dir_atomic(&d, |p| Ok(fs::write(p.join("y"), b"2")?)).unwrap();
        assert!(!d.join("x").exists());
        assert_eq!(fs::read(d.join("y")).unwrap(), b"2");
        let leftovers = fs::read_dir(root.path()).unwrap().filter(|e| {
            e.as_ref().unwrap().file_name().to_string_lossy().starts_with(".partial-")
        });
        assert_eq!(leftovers.count(), 0);
    }
}
