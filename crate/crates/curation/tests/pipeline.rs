use std::path::PathBuf;

use vidgen_curation::fixtures::fixture_corpus;
use vidgen_curation::{
    curate, detect_scene_cuts, load_corpus, read_manifest, write_corpus, write_manifest, CurationConfig, DropReason,
    StubAesthetic,
};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_manifest.jsonl")
}

#[test]
fn fixture_structure_is_detected() {
    let corpus = fixture_corpus();
    let cuts = corpus.iter().find(|s| s.id == "cuts-c").unwrap();
    assert_eq!(detect_scene_cuts(&cuts.video, 0.3), vec![40]);
    let fade = corpus.iter().find(|s| s.id == "fade-e").unwrap();
    assert!(detect_scene_cuts(&fade.video, 0.3).is_empty());

    let recs = curate(&corpus, &CurationConfig::default(), &StubAesthetic).unwrap();
    let pan = recs.iter().find(|r| r.source_id == "pan-a").unwrap();
    assert!(pan.motion_bg > 1.5 && pan.motion_fg < 0.2 * pan.motion_bg, "{pan:?}");
    let square = recs.iter().find(|r| r.source_id == "square-b").unwrap();
    assert!(square.motion_fg > 0.5 && square.motion_bg < 0.1, "{square:?}");
    assert!(square.motion_post > square.motion_pretrain);
    let blurry = recs.iter().find(|r| r.source_id == "blurry-d").unwrap();
    assert_eq!(blurry.drop_reason, Some(DropReason::Blurry));
    assert!(recs.iter().filter(|r| r.source_id == "fade-e").all(|r| r.drop_reason == Some(DropReason::Static)));
    let copy = recs.iter().find(|r| r.source_id == "square-copy-f").unwrap();
    assert_eq!(copy.drop_reason, Some(DropReason::DuplicateInCluster));
    for r in &recs {
        let d = r.duration_s();
        assert!((2.0..=8.0).contains(&d), "{} lasts {d}s", r.id);
        assert!(r.motion_pretrain.is_finite() && r.blur.is_finite());
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let corpus = fixture_corpus();
    let one = curate(&corpus, &CurationConfig::default(), &StubAesthetic).unwrap();
    let three = curate(&corpus, &CurationConfig { threads: 3, ..Default::default() }, &StubAesthetic).unwrap();
    assert_eq!(one, three);
}

#[test]
fn corpus_round_trip_matches_golden_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &fixture_corpus()).unwrap();
    let loaded = load_corpus(dir.path()).unwrap();
    assert_eq!(loaded.len(), 6);
    let recs = curate(&loaded, &CurationConfig::default(), &StubAesthetic).unwrap();
    let mut buf = Vec::new();
    write_manifest(&recs, &mut buf).unwrap();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(golden_path(), &buf).unwrap();
    }
    let golden = std::fs::read(golden_path()).expect("golden manifest present");
    assert_eq!(read_manifest(&golden[..]).unwrap(), recs);
    assert_eq!(String::from_utf8(buf).unwrap(), String::from_utf8(golden).unwrap());
}

#[test]
fn missing_sidecar_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &fixture_corpus()[..1]).unwrap();
    std::fs::remove_file(dir.path().join("pan-a.json")).unwrap();
    assert!(load_corpus(dir.path()).is_err());
}
