use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use stilltrack::events::decode_event_file;
use stilltrack::labels::read_labels;
use stilltrack::{EventStream, FrameTensor, LabelTable};

/// Writes through a temp file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    // temp files are created owner-only; outputs get the usual mode
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_event_file(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn read_label_file(path: &Path, dt_us: u64) -> Result<LabelTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    read_labels(&text, Some(dt_us)).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_tensor(path: &Path) -> Result<FrameTensor> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    FrameTensor::from_tns1(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// `.tns1` files in `dir` keyed by frame number and name suffix:
/// `000012.tns1` → `(12, "")`, `000012_P.tns1` → `(12, "P")`.
pub fn list_tensors(dir: &Path) -> Result<BTreeMap<(usize, String), PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("tns1") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let (num, suffix) = stem.split_once('_').unwrap_or((stem, ""));
        let frame: usize = match num.parse() {
            Ok(f) if f >= 1 => f,
            _ => bail!("unexpected tensor file name {}", path.display()),
        };
        out.insert((frame, suffix.to_string()), path);
    }
    Ok(out)
}

pub fn frame_file(dir: &Path, frame: usize, suffix: &str, ext: &str) -> PathBuf {
    if suffix.is_empty() {
        dir.join(format!("{frame:06}.{ext}"))
    } else {
        dir.join(format!("{frame:06}_{suffix}.{ext}"))
    }
}

/// Builds a pool with `jobs` threads (0 = rayon default).
pub fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}
