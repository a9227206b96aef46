//! Generate a tiny dataset on disk and read it back the way the trainer does.

use bbb_core::datamodel::labels::{Phase, Split};
use bbb_core::datamodel::{build_query_gallery, compute_normalization, read_metadata, read_splits};
use bbb_core::synthgen::{generate_dataset, BackgroundMode, DatasetManifest, GenConfig, RenderConfig};

fn tiny() -> GenConfig {
    GenConfig {
        models: vec!["ridge".into(), "oval".into()],
        ids_per_model: 3,
        renders_per_id: 4,
        render: RenderConfig {
            image_size: 32,
            background_mode: BackgroundMode::Uniform,
            ..RenderConfig::default()
        },
        ..GenConfig::default()
    }
}

#[test]
fn generated_dataset_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(&tiny(), 42, dir.path()).unwrap();
    assert_eq!(manifest.counts.images, 24);
    assert_eq!(manifest.counts.ids, 6);
    assert_eq!((manifest.counts.before, manifest.counts.after), (12, 12));
    assert_eq!(DatasetManifest::read(dir.path()).unwrap(), manifest);

    let mut records = read_metadata(dir.path()).unwrap();
    assert_eq!(records.len(), 24);
    read_splits(&dir.path().join("splits.json")).unwrap().apply(&mut records);
    assert!(records.iter().all(|r| r.split == Split::Train));
    for r in &records {
        let img = r.image.load(None).unwrap();
        assert_eq!((img.width, img.height), (32, 32));
        if r.phase == Phase::Before {
            assert!(!r.labels.frame_damaged());
        }
        assert!(dir.path().join("seg/train").join(r.key.rsplit('/').next().unwrap()).exists());
    }

    let norm = compute_normalization(&records, None).unwrap();
    assert_eq!(Some(norm), manifest.normalization);

    let qg = build_query_gallery(&records);
    assert_eq!(qg.queries.len(), 12);
    assert_eq!(qg.gallery.len(), 6);
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_dataset(&tiny(), 7, a.path()).unwrap();
    generate_dataset(&tiny(), 7, b.path()).unwrap();
    for name in ["metadata.jsonl", "splits.json", "manifest.json"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let c = tempfile::tempdir().unwrap();
    generate_dataset(&tiny(), 8, c.path()).unwrap();
    assert_ne!(std::fs::read(a.path().join("metadata.jsonl")).unwrap(), std::fs::read(c.path().join("metadata.jsonl")).unwrap());
}
