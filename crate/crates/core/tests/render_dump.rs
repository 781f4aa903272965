// Fixture-calibration helper: writes the exact summary renders the pipeline
// remembers for every benign-tagged scenario page.
use portcullis_core::armor::{ArmorConfig, NormalizingTransform, RuleEngine};
use portcullis_core::isolation::{summarize_untrusted, DetectionTag, Scenario};

#[test]
#[ignore]
fn dump_benign_renders() {
    let root = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let config = ArmorConfig::default();
    let engine = RuleEngine::new(config.thresholds);
    let mut out = Vec::new();
    let mut dir: Vec<_> = std::fs::read_dir(root.join("corpus/scenarios"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    dir.sort();
    for path in dir {
        let scenario = Scenario::load(&path).unwrap();
        for page in &scenario.pages {
            if page.detection_tag == Some(DetectionTag::Benign) {
                let summary = summarize_untrusted(
                    &page.body,
                    &page.origin(),
                    &page.links,
                    &page.forms,
                    &config,
                    &engine,
                    &NormalizingTransform,
                )
                .expect("benign page must summarize");
                out.push(serde_json::json!({ "id": page.id, "text": summary.render() }));
            }
        }
    }
    let body: Vec<String> = out.iter().map(|v| v.to_string()).collect();
    std::fs::write("/tmp/benign_renders.jsonl", body.join("\n") + "\n").unwrap();
    println!("wrote {} renders", out.len());
}
