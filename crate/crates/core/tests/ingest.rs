use aeye_core::ingest::{ingest_embeddings, IngestOptions};
use aeye_core::store::store_digest;
use aeye_core::synth;

#[test]
fn ingest_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth::gaussian_mixture(300, 24, 4, 0.5, 9);
    let inputs = synth::write_inputs(&dir.path().join("in"), &m, true).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ingest_embeddings(&IngestOptions {
            vectors: inputs.vectors.clone(),
            metadata: inputs.metadata.clone(),
            captions: inputs.captions.clone(),
            images_dir: None,
            out: out.clone(),
            name: Some("same".into()),
        })
        .unwrap();
        store_digest(&out).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn normalized_rows_are_unit_and_parallel_to_input() {
    let m = synth::gaussian_mixture(200, 16, 3, 0.8, 2);
    let n = aeye_core::ingest::normalize_rows(&m).unwrap();
    for (raw, unit) in m.iter_rows().zip(n.iter_rows()) {
        let norm: f64 = raw.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        for (a, b) in raw.iter().zip(unit) {
            assert!((*a as f64 / norm - *b as f64).abs() < 1e-6);
        }
    }
}
