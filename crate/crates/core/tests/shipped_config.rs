use std::path::Path;

use ppa_core::pipeline::CaseStudyFile;

#[test]
fn shipped_config_matches_builtin_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/spain_like.json");
    let file = CaseStudyFile::load(&path).unwrap();
    assert_eq!(file, CaseStudyFile::spain_like());
}
