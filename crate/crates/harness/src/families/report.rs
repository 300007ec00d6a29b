//! Report family: rebuild every table, plot, and summary of a persisted
//! experiment directory from its manifest and records alone. The analyze
//! phases are pure, so regenerated files are byte-identical to the
//! originals.

use std::path::Path;

use crate::error::{HarnessError, Result};
use crate::records::{read_records, RECORDS_FILE};
use crate::runner::read_manifest;

pub fn run(from: &Path, to: Option<&Path>) -> Result<()> {
    let manifest = read_manifest(from)?;
    let records = read_records(&from.join(RECORDS_FILE))?;
    if records.len() != manifest.n_records {
        return Err(HarnessError::config(format!(
            "record count {} does not match manifest ({})",
            records.len(),
            manifest.n_records
        )));
    }
    for r in &records {
        if r.config_hash != manifest.config_hash {
            return Err(HarnessError::config(
                "records and manifest disagree on the config hash",
            ));
        }
    }
    let out = to.unwrap_or(from);
    std::fs::create_dir_all(out)?;
    match manifest.family.as_str() {
        "observe" => super::observe::analyze(&manifest, &records, out),
        "intervene" => super::intervene::analyze(&manifest, &records, out),
        "sweep" => super::sweep::analyze(&manifest, &records, out),
        "ksweep" => super::ksweep::analyze(&manifest, &records, out),
        "specificity" => super::specificity::analyze(&manifest, &records, out),
        "robustness" => super::robustness::analyze(&manifest, &records, out),
        "calibrate" => super::calibrate::analyze(&manifest, &records, out),
        "sanity" => super::sanity::analyze(&manifest, &records, out),
        other => Err(HarnessError::config(format!("unknown family '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::testutil::small_config;
    use std::collections::BTreeMap;

    fn dir_bytes(dir: &Path) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for entry in std::fs::read_dir(dir).unwrap() {
            let entry = entry.unwrap();
            let name = entry.file_name().into_string().unwrap();
            if name.ends_with(".csv") || name.ends_with(".svg") || name.ends_with(".md") {
                out.insert(name, std::fs::read_to_string(entry.path()).unwrap());
            }
        }
        out
    }

    fn assert_same(a: &BTreeMap<String, String>, b: &BTreeMap<String, String>) {
        assert_eq!(
            a.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>(),
            "file sets differ"
        );
        for (name, content) in a {
            assert_eq!(content, &b[name], "{name} differs");
        }
    }

    #[test]
    fn report_regenerates_observe_outputs_byte_identically() {
        let cfg = small_config(3);
        let src = tempfile::tempdir().unwrap();
        crate::families::observe::run(cfg, src.path()).unwrap();
        let originals = dir_bytes(src.path());
        assert!(!originals.is_empty());
        let dst = tempfile::tempdir().unwrap();
        run(src.path(), Some(dst.path())).unwrap();
        assert_same(&originals, &dir_bytes(dst.path()));
        // In-place regeneration holds too.
        run(src.path(), None).unwrap();
        assert_same(&originals, &dir_bytes(src.path()));
    }

    #[test]
    fn report_checks_manifest_against_records() {
        let cfg = small_config(2);
        let src = tempfile::tempdir().unwrap();
        crate::families::observe::run(cfg, src.path()).unwrap();
        // Truncate the record file behind the manifest's back.
        let path = src.path().join(RECORDS_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        let first_line: String = text.lines().take(1).collect::<Vec<_>>().join("\n") + "\n";
        std::fs::write(&path, first_line).unwrap();
        let err = run(src.path(), None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
