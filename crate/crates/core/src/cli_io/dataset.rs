//! Directory-based datasets: an HR folder of PNGs and an optional LR
//! folder whose files pair with HR files by stem.

use super::png::load_png;
use crate::error::{Error, Result};
use crate::train::Sample;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    pub stem: String,
    pub hr: PathBuf,
    pub lr: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetLayout {
    /// Parent of `hr_dir`.
    pub root: PathBuf,
    pub hr_dir: PathBuf,
    pub lr_dir: Option<PathBuf>,
    /// Sorted by stem.
    pub entries: Vec<DatasetEntry>,
}

fn list_pngs(dir: &Path, what: &str) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("{what} {} is not a directory", dir.display())));
    }
    let mut out = BTreeMap::new();
    for ent in std::fs::read_dir(dir)? {
        let path = ent?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png || !path.is_file() {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        out.insert(stem, path);
    }
    Ok(out)
}

impl DatasetLayout {
    /// Scans the folders. With an LR folder, every HR stem needs an LR file
    /// and vice versa.
    pub fn open(hr_dir: &Path, lr_dir: Option<&Path>) -> Result<Self> {
        let hr = list_pngs(hr_dir, "hr_dir")?;
        if hr.is_empty() {
            return Err(Error::Dataset(format!("hr_dir {} holds no PNG files", hr_dir.display())));
        }
        let mut lr = match lr_dir {
            Some(d) => Some(list_pngs(d, "lr_dir")?),
            None => None,
        };
        let mut entries = Vec::with_capacity(hr.len());
        for (stem, path) in hr {
            let lr_path = match lr.as_mut() {
                Some(m) => Some(
                    m.remove(&stem)
                        .ok_or_else(|| Error::Dataset(format!("HR image {stem:?} has no LR counterpart")))?,
                ),
                None => None,
            };
            entries.push(DatasetEntry { stem, hr: path, lr: lr_path });
        }
        if let Some(orphans) = lr.filter(|m| !m.is_empty()) {
            let names: Vec<&str> = orphans.keys().map(String::as_str).collect();
            return Err(Error::Dataset(format!("LR files without an HR stem: {}", names.join(", "))));
        }
        Ok(Self {
            root: hr_dir.parent().map(Path::to_path_buf).unwrap_or_default(),
            hr_dir: hr_dir.to_path_buf(),
            lr_dir: lr_dir.map(Path::to_path_buf),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(&self) -> Result<Vec<(String, Sample)>> {
        self.entries
            .iter()
            .map(|e| {
                let lq = e.lr.as_deref().map(load_png).transpose()?;
                Ok((e.stem.clone(), Sample { hr: load_png(&e.hr)?, lq }))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli_io::png::save_png;
    use crate::tensor::Tensor;

    fn touch(dir: &Path, name: &str) {
        save_png(&Tensor::full(&[3, 2, 2], 0.5), &dir.join(name)).unwrap();
    }

    #[test]
    fn pairs_by_stem_in_sorted_order() {
        let t = tempfile::tempdir().unwrap();
        let (hr, lr) = (t.path().join("hr"), t.path().join("lr"));
        std::fs::create_dir_all(&hr).unwrap();
        std::fs::create_dir_all(&lr).unwrap();
        for n in ["b.png", "a.png", "c.png"] {
            touch(&hr, n);
            touch(&lr, n);
        }
        std::fs::write(hr.join("notes.txt"), "x").unwrap();
        let d = DatasetLayout::open(&hr, Some(&lr)).unwrap();
        let stems: Vec<&str> = d.entries.iter().map(|e| e.stem.as_str()).collect();
        assert_eq!(stems, ["a", "b", "c"]);
        assert_eq!(d.entries[1].lr.as_deref(), Some(lr.join("b.png").as_path()));
        assert_eq!(d.root, t.path());
        let loaded = d.load().unwrap();
        assert!(loaded.iter().all(|(_, s)| s.lq.is_some()));
    }

    #[test]
    fn orphans_are_rejected() {
        let t = tempfile::tempdir().unwrap();
        let (hr, lr) = (t.path().join("hr"), t.path().join("lr"));
        std::fs::create_dir_all(&hr).unwrap();
        std::fs::create_dir_all(&lr).unwrap();
        touch(&hr, "a.png");
        touch(&lr, "a.png");
        touch(&lr, "z.png");
        let e = DatasetLayout::open(&hr, Some(&lr)).unwrap_err().to_string();
        assert!(e.contains("\"z\"") || e.contains("z"), "{e}");
        touch(&hr, "y.png");
        touch(&hr, "z.png");
        let e = DatasetLayout::open(&hr, Some(&lr)).unwrap_err().to_string();
        assert!(e.contains("\"y\""), "{e}");
    }

    #[test]
    fn missing_dir_is_a_dataset_error() {
        let e = DatasetLayout::open(Path::new("/nonexistent/hr"), None).unwrap_err();
        assert!(matches!(e, Error::Dataset(_)));
        assert!(e.to_string().contains("dataset"));
    }
}
