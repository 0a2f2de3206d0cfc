//! Class taxonomies and label remapping onto the shared land-cover scheme.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::LabelMap;

/// Shared 5-class land-cover scheme, in index order.
pub const LAND_COVER_CLASSES: [&str; 5] = ["unknown", "urban", "open_area", "water", "forest"];

/// Ordered class names with a designated ignore class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTaxonomy", into = "RawTaxonomy")]
pub struct ClassTaxonomy {
    names: Vec<String>,
    unknown_index: u8,
}

#[derive(Serialize, Deserialize)]
struct RawTaxonomy {
    names: Vec<String>,
    unknown_index: u8,
}

impl TryFrom<RawTaxonomy> for ClassTaxonomy {
    type Error = Error;

    fn try_from(raw: RawTaxonomy) -> Result<Self> {
        ClassTaxonomy::new(raw.names, raw.unknown_index)
    }
}

impl From<ClassTaxonomy> for RawTaxonomy {
    fn from(t: ClassTaxonomy) -> Self {
        RawTaxonomy {
            names: t.names,
            unknown_index: t.unknown_index,
        }
    }
}

impl ClassTaxonomy {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>, unknown_index: u8) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Taxonomy("taxonomy has no classes".into()));
        }
        // Class indices are stored in 8-bit label rasters.
        if names.len() > 256 {
            return Err(Error::Taxonomy(format!(
                "{} classes exceed the 256-class limit of 8-bit labels",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(Error::Taxonomy("empty class name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Taxonomy(format!("duplicate class name `{name}`")));
            }
        }
        if unknown_index as usize >= names.len() {
            return Err(Error::Taxonomy(format!(
                "unknown_index {unknown_index} out of range for {} classes",
                names.len()
            )));
        }
        Ok(Self { names, unknown_index })
    }

    /// The canonical `unknown, urban, open_area, water, forest` taxonomy.
    pub fn land_cover() -> Self {
        Self::new(LAND_COVER_CLASSES, 0).expect("canonical taxonomy is valid")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn unknown_index(&self) -> u8 {
        self.unknown_index
    }

    pub fn index_of(&self, name: &str) -> Option<u8> {
        self.names.iter().position(|n| n == name).map(|i| i as u8)
    }

    pub fn name(&self, index: u8) -> Option<&str> {
        self.names.get(index as usize).map(String::as_str)
    }

    /// Checks every pixel is a valid index, reporting the first offender in row-major order.
    pub fn check_labels(&self, labels: ArrayView2<u8>) -> Result<()> {
        for ((row, col), &value) in labels.indexed_iter() {
            if value as usize >= self.names.len() {
                return Err(Error::LabelOutOfRange {
                    value,
                    row,
                    col,
                    num_classes: self.names.len(),
                });
            }
        }
        Ok(())
    }
}

/// A source class named either by index or by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Index(u8),
    Name(String),
}

impl ClassRef {
    fn resolve(&self, taxonomy: &ClassTaxonomy) -> Result<u8> {
        match self {
            ClassRef::Index(i) if (*i as usize) < taxonomy.len() => Ok(*i),
            ClassRef::Index(i) => Err(Error::Remap(format!("source index {i} out of range"))),
            ClassRef::Name(n) => taxonomy
                .index_of(n)
                .ok_or_else(|| Error::Remap(format!("unknown source class `{n}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemapEntry {
    pub from: ClassRef,
    pub to: String,
}

/// Declarative remap configuration as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemapConfig {
    pub source: ClassTaxonomy,
    #[serde(default = "ClassTaxonomy::land_cover")]
    pub target: ClassTaxonomy,
    pub entries: Vec<RemapEntry>,
}

impl RemapConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn build(&self) -> Result<RemapTable> {
        RemapTable::from_entries(self.source.clone(), self.target.clone(), &self.entries)
    }
}

/// Total mapping from source class indices to target class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemapTable {
    source: ClassTaxonomy,
    target: ClassTaxonomy,
    mapping: Vec<u8>,
}

impl RemapTable {
    pub fn new(source: ClassTaxonomy, target: ClassTaxonomy, mapping: Vec<u8>) -> Result<Self> {
        if mapping.len() != source.len() {
            return Err(Error::Remap(format!(
                "mapping has {} entries for {} source classes",
                mapping.len(),
                source.len()
            )));
        }
        if let Some((s, &t)) = mapping.iter().enumerate().find(|(_, &t)| t as usize >= target.len()) {
            return Err(Error::Remap(format!("source {s} maps to invalid target index {t}")));
        }
        if mapping[source.unknown_index() as usize] != target.unknown_index() {
            return Err(Error::Remap("source unknown class must map to target unknown".into()));
        }
        Ok(Self {
            source,
            target,
            mapping,
        })
    }

    pub fn identity(taxonomy: ClassTaxonomy) -> Self {
        let mapping = (0..taxonomy.len()).map(|i| i as u8).collect();
        Self {
            source: taxonomy.clone(),
            target: taxonomy,
            mapping,
        }
    }

    /// Builds a table from `(source → target name)` pairs; unlisted sources map to unknown.
    pub fn from_entries(source: ClassTaxonomy, target: ClassTaxonomy, entries: &[RemapEntry]) -> Result<Self> {
        let mut mapping = vec![target.unknown_index(); source.len()];
        let mut assigned = vec![false; source.len()];
        for entry in entries {
            let s = entry.from.resolve(&source)?;
            let t = target
                .index_of(&entry.to)
                .ok_or_else(|| Error::Remap(format!("unknown target class `{}`", entry.to)))?;
            if assigned[s as usize] && mapping[s as usize] != t {
                return Err(Error::Remap(format!(
                    "source class `{}` mapped twice",
                    source.name(s).unwrap_or_default()
                )));
            }
            assigned[s as usize] = true;
            mapping[s as usize] = t;
        }
        Self::new(source, target, mapping)
    }

    pub fn source(&self) -> &ClassTaxonomy {
        &self.source
    }

    pub fn target(&self) -> &ClassTaxonomy {
        &self.target
    }

    pub fn mapping(&self) -> &[u8] {
        &self.mapping
    }

    pub fn map(&self, source_index: u8) -> Option<u8> {
        self.mapping.get(source_index as usize).copied()
    }

    /// `self` followed by `next`.
    pub fn compose(&self, next: &RemapTable) -> Result<RemapTable> {
        if self.target != next.source {
            return Err(Error::Remap("composed tables disagree on the intermediate taxonomy".into()));
        }
        let mapping = self.mapping.iter().map(|&m| next.mapping[m as usize]).collect();
        RemapTable::new(self.source.clone(), next.target.clone(), mapping)
    }
}

/// Rewrites every pixel through `table`.
pub fn remap_labels(labels: ArrayView2<u8>, table: &RemapTable) -> Result<LabelMap> {
    table.source.check_labels(labels)?;
    Ok(labels.mapv(|v| table.mapping[v as usize]))
}

/// Non-fatal observations about a remap table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    /// Source classes (other than the source unknown class) that collapse into unknown.
    pub to_unknown: Vec<u8>,
    /// Target classes (other than unknown) that no source class reaches.
    pub unreachable: Vec<u8>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.to_unknown.is_empty() && self.unreachable.is_empty()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.to_unknown
            .iter()
            .map(|s| format!("source class {s} maps to unknown"))
            .chain(self.unreachable.iter().map(|t| format!("target class {t} unreachable")))
            .collect()
    }
}

pub fn validate_remap(table: &RemapTable) -> ValidationReport {
    let src_unknown = table.source.unknown_index();
    let dst_unknown = table.target.unknown_index();
    let to_unknown = table
        .mapping
        .iter()
        .enumerate()
        .filter(|&(s, &t)| s as u8 != src_unknown && t == dst_unknown)
        .map(|(s, _)| s as u8)
        .collect();
    let mut hits: BTreeMap<u8, usize> = BTreeMap::new();
    for &t in &table.mapping {
        *hits.entry(t).or_default() += 1;
    }
    let unreachable = (0..table.target.len() as u16)
        .map(|t| t as u8)
        .filter(|&t| t != dst_unknown && !hits.contains_key(&t))
        .collect();
    ValidationReport {
        to_unknown,
        unreachable,
    }
}

/// Editable default remap tables for public datasets.
pub mod presets {
    use super::*;

    const GEONRW: &str = include_str!("../configs/remap/geonrw.json");
    const DEEPGLOBE: &str = include_str!("../configs/remap/deepglobe.json");

    pub fn geonrw() -> RemapConfig {
        serde_json::from_str(GEONRW).expect("bundled geonrw remap parses")
    }

    pub fn deepglobe() -> RemapConfig {
        serde_json::from_str(DEEPGLOBE).expect("bundled deepglobe remap parses")
    }

    pub fn by_name(name: &str) -> Option<RemapConfig> {
        match name {
            "geonrw" => Some(geonrw()),
            "deepglobe" => Some(deepglobe()),
            _ => None,
        }
    }
}
