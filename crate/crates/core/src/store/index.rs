use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::shard::{shard_file_name, shard_for_case, ShardFile};
use super::PatchFeatureBag;
use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.json";

/// Minimum number of slides per class accepted for training.
pub const MIN_SAMPLES_PER_CLASS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub shard_file: String,
    pub slide_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

/// JSON routing index mapping each case to its shard and slides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingIndex {
    pub feature_dim: usize,
    pub shard_count: usize,
    pub entries: BTreeMap<String, CaseEntry>,
}

impl RoutingIndex {
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let index: RoutingIndex = serde_json::from_slice(bytes)?;
        if index.feature_dim == 0 || index.shard_count == 0 {
            return Err(Error::Format("feature_dim and shard_count must be positive".into()));
        }
        Ok(index)
    }

    pub fn load(store_dir: &Path) -> Result<Self> {
        let path = store_dir.join(INDEX_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json_bytes(&bytes)
    }

    pub fn contains(&self, case_id: &str, slide_id: &str) -> bool {
        self.entries.get(case_id).is_some_and(|e| e.slide_ids.iter().any(|s| s == slide_id))
    }

    pub fn slide_count(&self) -> usize {
        self.entries.values().map(|e| e.slide_ids.len()).sum()
    }
}

/// Write `bags` into `shard_count` shard files plus `index.json` under `out_dir`.
///
/// Every shard file is written, including empty ones. A case's label is
/// recorded in the index when all of its slides agree on it.
pub fn write_store(bags: &[PatchFeatureBag], shard_count: usize, out_dir: &Path) -> Result<RoutingIndex> {
    if shard_count == 0 {
        return Err(Error::Config("shard_count must be >= 1".into()));
    }
    let feature_dim = bags.first().map_or(super::DEFAULT_FEATURE_DIM, |b| b.feature_dim());
    for bag in bags {
        bag.validate(feature_dim)?;
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut by_case: BTreeMap<&str, Vec<&PatchFeatureBag>> = BTreeMap::new();
    for bag in bags {
        by_case.entry(&bag.case_id).or_default().push(bag);
    }
    let mut per_shard: Vec<Vec<&PatchFeatureBag>> = vec![Vec::new(); shard_count];
    let mut entries = BTreeMap::new();
    for (case_id, slides) in &by_case {
        let shard = shard_for_case(case_id, shard_count);
        let labels: BTreeSet<Option<usize>> = slides.iter().map(|b| b.label).collect();
        let label = if labels.len() == 1 { labels.into_iter().next().flatten() } else { None };
        entries.insert(
            case_id.to_string(),
            CaseEntry {
                shard_file: shard_file_name(shard),
                slide_ids: slides.iter().map(|b| b.slide_id.clone()).collect(),
                label,
            },
        );
        per_shard[shard].extend(slides.iter().copied());
    }
    for (shard, slides) in per_shard.iter().enumerate() {
        let bytes = ShardFile::encode(
            feature_dim,
            slides.iter().map(|b| (b.case_id.as_str(), b.slide_id.as_str(), &b.features)),
        )?;
        let path = out_dir.join(shard_file_name(shard));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let index = RoutingIndex { feature_dim, shard_count, entries };
    let path = out_dir.join(INDEX_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&index)?).map_err(|e| Error::io(&path, e))?;
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlideRef {
    pub case_id: String,
    pub slide_id: String,
}

impl std::fmt::Display for SlideRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.case_id, self.slide_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortMember {
    pub case_id: String,
    pub slide_id: String,
    pub label: usize,
}

/// The labeled set of slides used for one training task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub class_names: Vec<String>,
    pub members: Vec<CohortMember>,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for m in &self.members {
            if m.label >= self.class_names.len() {
                return Err(Error::Config(format!(
                    "member {}/{} has label {} but only {} classes",
                    m.case_id,
                    m.slide_id,
                    m.label,
                    self.class_names.len()
                )));
            }
            if !seen.insert((&m.case_id, &m.slide_id)) {
                return Err(Error::Config(format!("duplicate member {}/{}", m.case_id, m.slide_id)));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.label).collect()
    }

    /// Cohort covering every labeled bag, in bag order.
    pub fn from_bags(class_names: Vec<String>, bags: &[PatchFeatureBag]) -> Self {
        let members = bags
            .iter()
            .filter_map(|b| {
                b.label.map(|label| CohortMember { case_id: b.case_id.clone(), slide_id: b.slide_id.clone(), label })
            })
            .collect();
        Self { class_names, members }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub missing: Vec<SlideRef>,
    pub per_class_counts: BTreeMap<String, usize>,
    /// Classes whose present-slide count is below [`MIN_SAMPLES_PER_CLASS`].
    pub below_minimum: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.missing.is_empty() && self.below_minimum.is_empty()
    }
}

/// Check cohort members against the index. Reads no shard files.
pub fn validate_features(index: &RoutingIndex, cohort: &CohortSpec) -> ValidationReport {
    let mut per_class_counts: BTreeMap<String, usize> =
        cohort.class_names.iter().map(|c| (c.clone(), 0)).collect();
    let mut missing = Vec::new();
    for m in &cohort.members {
        if index.contains(&m.case_id, &m.slide_id) {
            let name = cohort.class_names.get(m.label).cloned().unwrap_or_else(|| format!("#{}", m.label));
            *per_class_counts.entry(name).or_default() += 1;
        } else {
            missing.push(SlideRef { case_id: m.case_id.clone(), slide_id: m.slide_id.clone() });
        }
    }
    let below_minimum = cohort
        .class_names
        .iter()
        .filter(|c| per_class_counts.get(*c).copied().unwrap_or(0) < MIN_SAMPLES_PER_CLASS)
        .cloned()
        .collect();
    ValidationReport { missing, per_class_counts, below_minimum }
}

/// Read handle on a store directory. Shards are opened lazily, at most once each.
#[derive(Debug)]
pub struct FeatureStore {
    dir: PathBuf,
    index: RoutingIndex,
    shards: Mutex<HashMap<String, Arc<ShardFile>>>,
    opened: Mutex<usize>,
}

impl FeatureStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let index = RoutingIndex::load(&dir)?;
        Ok(Self::with_index(dir, index))
    }

    pub fn with_index(dir: impl Into<PathBuf>, index: RoutingIndex) -> Self {
        Self { dir: dir.into(), index, shards: Mutex::new(HashMap::new()), opened: Mutex::new(0) }
    }

    pub fn index(&self) -> &RoutingIndex {
        &self.index
    }

    /// Number of shard files read from disk so far.
    pub fn shards_opened(&self) -> usize {
        *self.opened.lock().expect("lock")
    }

    fn shard(&self, name: &str) -> Result<Arc<ShardFile>> {
        let mut shards = self.shards.lock().expect("lock");
        if let Some(s) = shards.get(name) {
            return Ok(Arc::clone(s));
        }
        let path = self.dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let shard = Arc::new(ShardFile::parse(&bytes)?);
        if shard.feature_dim() != self.index.feature_dim {
            return Err(Error::DimensionMismatch { expected: self.index.feature_dim, found: shard.feature_dim() });
        }
        *self.opened.lock().expect("lock") += 1;
        shards.insert(name.to_owned(), Arc::clone(&shard));
        Ok(shard)
    }

    pub fn read_slide(&self, case_id: &str, slide_id: &str) -> Result<PatchFeatureBag> {
        let missing = || Error::MissingFeatures { case_id: case_id.to_owned(), slide_id: slide_id.to_owned() };
        let entry = self.index.entries.get(case_id).ok_or_else(missing)?;
        if !entry.slide_ids.iter().any(|s| s == slide_id) {
            return Err(missing());
        }
        let shard = self.shard(&entry.shard_file)?;
        let features = shard.read_slide(case_id, slide_id)?;
        Ok(PatchFeatureBag { case_id: case_id.to_owned(), slide_id: slide_id.to_owned(), features, label: entry.label })
    }

    /// Load every cohort member in cohort order, labels taken from the cohort.
    pub fn load_cohort(&self, cohort: &CohortSpec) -> Result<Vec<PatchFeatureBag>> {
        cohort
            .members
            .iter()
            .map(|m| self.read_slide(&m.case_id, &m.slide_id).map(|b| b.with_label(m.label)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index_with(entries: &[(&str, &[&str])]) -> RoutingIndex {
        RoutingIndex {
            feature_dim: 4,
            shard_count: 1,
            entries: entries
                .iter()
                .map(|(c, s)| {
                    (
                        c.to_string(),
                        CaseEntry {
                            shard_file: "shard_00.fsb".into(),
                            slide_ids: s.iter().map(|x| x.to_string()).collect(),
                            label: None,
                        },
                    )
                })
                .collect(),
        }
    }

    fn cohort(members: &[(&str, &str, usize)]) -> CohortSpec {
        CohortSpec {
            class_names: vec!["a".into(), "b".into()],
            members: members
                .iter()
                .map(|(c, s, l)| CohortMember { case_id: c.to_string(), slide_id: s.to_string(), label: *l })
                .collect(),
        }
    }

    #[test]
    fn validation_lists_exactly_the_missing_slide() {
        let index = index_with(&[("c1", &["s1"]), ("c2", &["s1"]), ("c3", &["s1", "s2"])]);
        let c = cohort(&[("c1", "s1", 0), ("c2", "s1", 1), ("c3", "s1", 0), ("c3", "s2", 1), ("c4", "s1", 1)]);
        let report = validate_features(&index, &c);
        assert_eq!(report.missing, vec![SlideRef { case_id: "c4".into(), slide_id: "s1".into() }]);
        assert_eq!(report.per_class_counts["a"], 2);
        assert_eq!(report.per_class_counts["b"], 2);
    }

    #[test]
    fn nineteen_slides_is_below_minimum() {
        let names: Vec<String> = (0..39).map(|i| format!("c{i}")).collect();
        let entries: Vec<(&str, &[&str])> = names.iter().map(|n| (n.as_str(), &["s"][..])).collect();
        let index = index_with(&entries);
        let members: Vec<(&str, &str, usize)> =
            names.iter().enumerate().map(|(i, n)| (n.as_str(), "s", usize::from(i >= 20))).collect();
        let report = validate_features(&index, &cohort(&members));
        assert!(report.missing.is_empty());
        assert_eq!(report.per_class_counts["a"], 20);
        assert_eq!(report.per_class_counts["b"], 19);
        assert_eq!(report.below_minimum, vec!["b".to_string()]);
        assert!(!report.is_ok());
    }

    #[test]
    fn cohort_rejects_duplicates_and_bad_labels() {
        assert!(cohort(&[("c", "s", 0), ("c", "s", 1)]).validate().is_err());
        assert!(cohort(&[("c", "s", 2)]).validate().is_err());
        assert!(cohort(&[("c", "s", 1)]).validate().is_ok());
    }
}
