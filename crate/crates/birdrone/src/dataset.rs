//! On-disk dataset layout: `images/{id}.ppm`, `labels/{id}.txt` and
//! `splits/{train,val,test}.txt` listing ids.

use std::fs;
use std::path::{Path, PathBuf};

use birdrone_core::data::Sample;

use crate::error::{Error, Result};
use crate::{labels, ppm};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Creates `dir`, refusing a non-empty one unless `force`, in which case the
/// dataset subdirectories are cleared first.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if let Ok(mut entries) = fs::read_dir(dir) {
        if entries.next().is_some() {
            if !force {
                return Err(Error::Usage(format!("{} exists and is not empty (use --force)", dir.display())));
            }
            for sub in ["images", "labels", "splits"] {
                let p = dir.join(sub);
                if p.exists() {
                    fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
        }
    }
    mkdir(dir)
}

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("images").join(format!("{id}.ppm"))
}

pub fn label_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("labels").join(format!("{id}.txt"))
}

pub fn write_sample(dir: &Path, s: &Sample) -> Result<()> {
    ppm::write(&image_path(dir, &s.id), &s.image)?;
    labels::write(&label_path(dir, &s.id), &s.labels)
}

pub fn write_splits(dir: &Path, splits: &Splits) -> Result<()> {
    let d = dir.join("splits");
    mkdir(&d)?;
    for name in SPLITS {
        let p = d.join(format!("{name}.txt"));
        let mut text = String::new();
        for id in splits.get(name).unwrap_or_default() {
            text.push_str(id);
            text.push('\n');
        }
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

pub fn write_dataset(dir: &Path, samples: &[Sample], splits: &Splits) -> Result<()> {
    mkdir(&dir.join("images"))?;
    mkdir(&dir.join("labels"))?;
    for s in samples {
        write_sample(dir, s)?;
    }
    write_splits(dir, splits)
}

pub fn read_split_ids(dir: &Path, name: &str) -> Result<Vec<String>> {
    if !SPLITS.contains(&name) {
        return Err(Error::Usage(format!("unknown split '{name}', expected one of {}", SPLITS.join(", "))));
    }
    let p = dir.join("splits").join(format!("{name}.txt"));
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn read_sample(dir: &Path, id: &str, num_classes: usize) -> Result<Sample> {
    Ok(Sample {
        id: id.to_string(),
        image: ppm::read(&image_path(dir, id))?,
        labels: labels::read(&label_path(dir, id), num_classes)?,
    })
}

pub fn read_split(dir: &Path, name: &str, num_classes: usize) -> Result<Vec<Sample>> {
    read_split_ids(dir, name)?.iter().map(|id| read_sample(dir, id, num_classes)).collect()
}

/// Square side shared by every image of `samples`.
pub fn image_size(samples: &[Sample], what: &Path) -> Result<usize> {
    let first = samples.first().ok_or_else(|| Error::format(what, "split is empty"))?.image.shape();
    if first.h != first.w {
        return Err(Error::format(what, format!("images must be square, got {}x{}", first.w, first.h)));
    }
    for s in samples {
        let sh = s.image.shape();
        if (sh.h, sh.w, sh.c) != (first.h, first.w, first.c) {
            return Err(Error::format(what, format!("image {} is {}x{}x{}, expected {}x{}x{}", s.id, sh.c, sh.h, sh.w, first.c, first.h, first.w)));
        }
    }
    Ok(first.h)
}
