//! The checked-in fuzz seeds are real inputs: each must be accepted by its parser.

use std::path::{Path, PathBuf};

use bbb_core::config::{parse_override, RunConfig};
use bbb_core::datamodel::metadata::parse_metadata_line;
use bbb_core::datamodel::{decode_missing_parts, parse_real_labels, SplitsFile};
use bbb_core::model::checkpoint::from_bytes;
use bbb_core::synthgen::ModelLibrary;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).expect("seed is UTF-8")
}

#[test]
fn text_seeds_parse() {
    for (p, b) in seeds("metadata_line") {
        parse_metadata_line(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("real_labels") {
        assert!(!parse_real_labels(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display())).is_empty());
    }
    for (p, b) in seeds("missing_parts") {
        decode_missing_parts(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("config_override") {
        parse_override(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        RunConfig::load(None, &[text(&b).to_string()], "train").unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("library_toml") {
        ModelLibrary::from_toml_str(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("run_config") {
        let cfg = RunConfig::parse(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
    for (p, b) in seeds("splits_file") {
        SplitsFile::parse(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn checkpoint_seeds_decode_their_header() {
    for (p, b) in seeds("checkpoint") {
        let (header, tensors) = from_bytes(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(header.model.image_size, 64);
        assert!(tensors.len() <= 3);
    }
}
