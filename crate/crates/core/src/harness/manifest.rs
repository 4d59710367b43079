//! Dataset manifests: `path,label,subject,split` CSV files.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// One fold per subject; that subject's videos form the test set.
    LeavePersonOut,
    /// One fold per split id; videos carrying that id form the test set.
    FixedSplits,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::LeavePersonOut => "leave-person-out",
            Protocol::FixedSplits => "fixed-splits",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "leave-person-out" | "lpo" => Ok(Protocol::LeavePersonOut),
            "fixed-splits" | "splits" => Ok(Protocol::FixedSplits),
            other => Err(Error::Config(format!(
                "unknown protocol {other:?} (expected leave-person-out or fixed-splits)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub subject: String,
    pub split: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    pub protocol: Protocol,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, class_names: Vec<String>, protocol: Protocol) -> Result<Self> {
        let m = Self {
            entries,
            class_names,
            protocol,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Manifest(m));
        if self.entries.is_empty() {
            return bad("manifest has no entries".into());
        }
        let n = self.class_names.len();
        let mut seen = vec![false; n];
        for (row, e) in self.entries.iter().enumerate() {
            if e.label >= n {
                return bad(format!("row {}: label {} outside [0, {n})", row + 1, e.label));
            }
            seen[e.label] = true;
            if self.protocol == Protocol::LeavePersonOut && e.subject.trim().is_empty() {
                return bad(format!("row {}: empty subject id under leave-person-out", row + 1));
            }
            if self.protocol == Protocol::FixedSplits && e.split.is_none() {
                return bad(format!("row {}: missing split id under fixed-splits", row + 1));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return bad(format!("class {:?} has no videos; labels must be dense", self.class_names[missing]));
        }
        Ok(())
    }

    /// Reads a manifest file; relative video paths resolve against its directory.
    pub fn load(path: &Path, protocol: Protocol) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_reader(file, base, protocol)
    }

    /// Parses CSV with header `path,label,subject[,split]`.
    ///
    /// Labels that are all integers are used as class ids; otherwise the
    /// distinct names are sorted and numbered.
    pub fn from_reader(reader: impl Read, base: &Path, protocol: Protocol) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let need = |name: &str| col(name).ok_or_else(|| Error::Manifest(format!("missing column {name:?}")));
        let (pi, li, si) = (need("path")?, need("label")?, need("subject")?);
        let spi = col("split");

        let mut raw = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("").to_string();
            let split = match spi.map(field) {
                Some(s) if !s.is_empty() => Some(
                    s.parse::<u32>()
                        .map_err(|_| Error::Manifest(format!("row {}: split {s:?} is not an integer", row + 1)))?,
                ),
                _ => None,
            };
            let path = PathBuf::from(field(pi));
            if path.as_os_str().is_empty() {
                return Err(Error::Manifest(format!("row {}: empty path", row + 1)));
            }
            let path = if path.is_absolute() { path } else { base.join(path) };
            raw.push((path, field(li), field(si), split));
        }

        let numeric: Option<Vec<usize>> = raw.iter().map(|r| r.1.parse::<usize>().ok()).collect();
        let (labels, class_names) = match numeric {
            Some(ids) => {
                let n = ids.iter().max().map_or(0, |m| m + 1);
                (ids, (0..n).map(|i| i.to_string()).collect())
            }
            None => {
                let names: Vec<String> = raw.iter().map(|r| r.1.clone()).collect::<BTreeSet<_>>().into_iter().collect();
                let ids = raw.iter().map(|r| names.binary_search(&r.1).expect("collected")).collect();
                (ids, names)
            }
        };
        let entries = raw
            .into_iter()
            .zip(labels)
            .map(|((path, _, subject, split), label)| ManifestEntry {
                path,
                label,
                subject,
                split,
            })
            .collect();
        Self::new(entries, class_names, protocol)
    }
}
