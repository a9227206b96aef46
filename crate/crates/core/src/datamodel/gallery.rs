//! Query/gallery construction for the before/after retrieval protocol.

use std::collections::{BTreeMap, BTreeSet};

use super::labels::{Domain, Phase};
use super::record::SampleRecord;

/// Query and gallery records for one evaluation split.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGallery {
    /// Every after-image whose identity has a gallery entry, ordered by (id, render index).
    pub queries: Vec<SampleRecord>,
    /// Exactly one before-image per identity, ordered by id.
    pub gallery: Vec<SampleRecord>,
    /// Identities that had after-images but no before-image; their queries were dropped.
    pub excluded_ids: Vec<i64>,
}

impl QueryGallery {
    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Build the retrieval protocol from the synthetic records of one split.
///
/// The gallery holds the lowest-render-index before-image of each identity.
/// Real records are ignored since they carry no identity.
pub fn build_query_gallery(records: &[SampleRecord]) -> QueryGallery {
    let mut gallery: BTreeMap<i64, &SampleRecord> = BTreeMap::new();
    let mut after: BTreeMap<i64, Vec<&SampleRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.domain == Domain::Synthetic) {
        match r.phase {
            Phase::Before => {
                gallery
                    .entry(r.instance_id)
                    .and_modify(|g| {
                        if (r.render_index, &r.key) < (g.render_index, &g.key) {
                            *g = r;
                        }
                    })
                    .or_insert(r);
            }
            Phase::After => after.entry(r.instance_id).or_default().push(r),
            Phase::NotApplicable => {}
        }
    }
    let mut queries = Vec::new();
    let mut excluded = BTreeSet::new();
    for (id, mut rs) in after {
        if !gallery.contains_key(&id) {
            excluded.insert(id);
            continue;
        }
        rs.sort_by(|a, b| (a.render_index, &a.key).cmp(&(b.render_index, &b.key)));
        queries.extend(rs.into_iter().cloned());
    }
    if !excluded.is_empty() {
        log::warn!("{} identities lack a before-image and were excluded from retrieval", excluded.len());
    }
    QueryGallery {
        queries,
        gallery: gallery.into_values().cloned().collect(),
        excluded_ids: excluded.into_iter().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::labels::{DamageLabels, Split};
    use crate::datamodel::record::ImageRef;
    use crate::synthgen::damage::Dirt;
    use std::path::PathBuf;

    fn rec(id: i64, phase: Phase, render: usize) -> SampleRecord {
        let key = format!("{id}_{}_{render}.png", phase.as_str());
        SampleRecord {
            image: ImageRef::Path(PathBuf::from(&key)),
            key,
            instance_id: id,
            model: Some("m".into()),
            phase,
            labels: DamageLabels::default(),
            dirt: Dirt::None,
            view_index: 0,
            background_index: 0,
            render_index: render,
            domain: Domain::Synthetic,
            split: Split::Val,
        }
    }

    #[test]
    fn one_pair_per_id() {
        let rs: Vec<_> = (0..3).flat_map(|i| [rec(i, Phase::Before, 0), rec(i, Phase::After, 1)]).collect();
        let qg = build_query_gallery(&rs);
        assert_eq!(qg.queries.len(), 3);
        assert_eq!(qg.gallery.len(), 3);
        assert!(qg.excluded_ids.is_empty());
    }

    #[test]
    fn lowest_render_index_wins() {
        let rs = vec![rec(0, Phase::Before, 3), rec(0, Phase::After, 2), rec(0, Phase::Before, 1)];
        let a = build_query_gallery(&rs);
        let mut rev = rs.clone();
        rev.reverse();
        let b = build_query_gallery(&rev);
        assert_eq!(a, b);
        assert_eq!(a.gallery.len(), 1);
        assert_eq!(a.gallery[0].render_index, 1);
    }

    #[test]
    fn id_without_before_is_excluded() {
        let rs = vec![rec(0, Phase::Before, 0), rec(0, Phase::After, 1), rec(1, Phase::After, 1)];
        let qg = build_query_gallery(&rs);
        assert_eq!(qg.queries.len(), 1);
        assert_eq!(qg.excluded_ids, vec![1]);
    }
}
