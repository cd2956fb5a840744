use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aeye_core::format::{self, VectorMatrix};
use aeye_core::store::{self, DatasetStore};
use aeye_core::synth;

fn aeye(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aeye"))
        .args(args)
        .env_remove("AEYE_EMBEDDER_URL")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = aeye(args);
    assert_eq!(code(&o), 0, "{args:?} failed:\n{}", stderr(&o));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Ingested store of `n` clustered vectors under `dir/store`.
fn ingested(dir: &Path, n: usize, dim: usize) -> PathBuf {
    let m = synth::gaussian_mixture(n, dim, 8, 0.5, 3);
    let inputs = synth::write_inputs(&dir.join("in"), &m, true).unwrap();
    let st = dir.join("store");
    ok(&[
        "ingest",
        "--vectors",
        s(&inputs.vectors),
        "--meta",
        s(&inputs.metadata),
        "--captions",
        s(inputs.captions.as_ref().unwrap()),
        "--out",
        s(&st),
    ]);
    st
}

fn built(dir: &Path, n: usize) -> PathBuf {
    let st = ingested(dir, n, 16);
    ok(&["project", "--store", s(&st)]);
    ok(&["tile", "--store", s(&st), "--k", "10"]);
    ok(&["index", "--store", s(&st), "--kind", "flat"]);
    st
}

#[test]
fn three_item_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let v = dir.path().join("v.aev");
    format::write_vectors(&v, &VectorMatrix::new(3, 2, vec![3.0, 0.0, 0.0, 2.0, 1.0, 1.0])).unwrap();
    let meta = dir.path().join("m.tsv");
    fs::write(
        &meta,
        "filename:a.jpg\tlabel:x\nfilename:b.jpg\nfilename:c.jpg\tlabel:z\n",
    )
    .unwrap();
    let st = dir.path().join("three");
    ok(&["ingest", "--vectors", s(&v), "--meta", s(&meta), "--out", s(&st)]);

    let store = DatasetStore::open(&st).unwrap();
    assert_eq!((store.len(), store.dimension(), store.name()), (3, 2, "three"));
    let h = std::f32::consts::FRAC_1_SQRT_2;
    assert_eq!(store.normalized().data, vec![1.0, 0.0, 0.0, 1.0, h, h]);
    assert_eq!(store.raw_vectors().unwrap().data, vec![3.0, 0.0, 0.0, 2.0, 1.0, 1.0]);

    ok(&["project", "--store", s(&st)]);
    ok(&["tile", "--store", s(&st)]);
    ok(&["index", "--store", s(&st)]);
    ok(&["validate", "--store", s(&st)]);
    let store = DatasetStore::open(&st).unwrap();
    let m = store.manifest().unwrap();
    assert_eq!((m.depth, m.item_count, m.k), (0, 3, 25));
}

#[test]
fn full_pipeline_validates_and_logs_stage_times() {
    let dir = tempfile::tempdir().unwrap();
    let st = ingested(dir.path(), 800, 16);
    for args in [
        vec!["project", "--store", s(&st)],
        vec!["tile", "--store", s(&st), "--k", "10", "--seed", "3"],
        vec!["index", "--store", s(&st)],
    ] {
        let o = ok(&args);
        let line = format!("stage={} elapsed_s=", args[0]);
        assert!(stderr(&o).contains(&line), "{}", stderr(&o));
    }
    let o = ok(&["validate", "--store", s(&st)]);
    assert!(stderr(&o).contains("store is valid"));
}

#[test]
fn tiling_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let st = built(dir.path(), 1500);
    let first = store::store_digest(&st.join(store::PYRAMID_DIR)).unwrap();
    ok(&["tile", "--store", s(&st), "--k", "10"]);
    assert_eq!(first, store::store_digest(&st.join(store::PYRAMID_DIR)).unwrap());
    ok(&["tile", "--store", s(&st), "--k", "10", "--seed", "8"]);
    assert_ne!(first, store::store_digest(&st.join(store::PYRAMID_DIR)).unwrap());
}

#[test]
fn corrupted_tile_fails_validation_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let st = built(dir.path(), 1500);
    let tile = st.join("pyramid/L1/0_0.tile");
    let mut bytes = fs::read(&tile).unwrap();
    // first entry's id -> an id no item has
    bytes[4..12].copy_from_slice(&9_999_999u64.to_le_bytes());
    fs::write(&tile, &bytes).unwrap();
    let o = aeye(&["validate", "--store", s(&st)]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("tile 1/0/0"), "{}", stderr(&o));

    // a truncated record is reported with its path
    fs::write(&tile, &bytes[..bytes.len() - 3]).unwrap();
    let o = aeye(&["validate", "--store", s(&st)]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("L1/0_0.tile"), "{}", stderr(&o));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    assert_eq!(code(&aeye(&[])), 2);
    assert_eq!(code(&aeye(&["tile", "--store"])), 2);
    assert_eq!(code(&aeye(&["index", "--store", "x", "--kind", "tree"])), 2);
    assert_eq!(code(&aeye(&["--help"])), 0);
    assert_eq!(code(&aeye(&["tile", "--store", s(&missing)])), 3);
    assert_eq!(
        code(&aeye(&[
            "ingest",
            "--vectors",
            s(&missing),
            "--meta",
            s(&missing),
            "--out",
            s(&dir.path().join("o"))
        ])),
        3
    );

    let st = ingested(dir.path(), 50, 4);
    // tiling before projecting
    assert_eq!(code(&aeye(&["tile", "--store", s(&st)])), 3);
    ok(&["project", "--store", s(&st)]);
    assert_eq!(code(&aeye(&["tile", "--store", s(&st), "--k", "0"])), 2);
    assert_eq!(code(&aeye(&["index", "--store", s(&st), "--m", "1"])), 2);

    fs::write(st.join(store::LOCK_FILE), "1\n").unwrap();
    assert_eq!(code(&aeye(&["tile", "--store", s(&st)])), 5);
    fs::remove_file(st.join(store::LOCK_FILE)).unwrap();
    ok(&["tile", "--store", s(&st)]);

    // a zero vector is bad input data
    let v = dir.path().join("z.aev");
    format::write_vectors(&v, &VectorMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 0.0])).unwrap();
    let meta = dir.path().join("z.tsv");
    fs::write(&meta, "label:a\nlabel:b\n").unwrap();
    let o = aeye(&[
        "ingest",
        "--vectors",
        s(&v),
        "--meta",
        s(&meta),
        "--out",
        s(&dir.path().join("z")),
    ]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("item id(s) [1]"), "{}", stderr(&o));

    // wrong coordinate count
    let c = dir.path().join("c.aec");
    format::write_coords(&c, &[[0.0, 0.0]]).unwrap();
    assert_eq!(code(&aeye(&["project", "--store", s(&st), "--coords", s(&c)])), 4);
}

#[test]
fn export_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let st = built(dir.path(), 600);
    let (a, b) = (dir.path().join("a.tar"), dir.path().join("b.tar"));
    ok(&["export", "--store", s(&st), "--out", s(&a)]);
    ok(&["export", "--store", s(&st), "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(fs::metadata(&a).unwrap().len() > 0);
}

#[test]
fn external_coordinates_are_adopted() {
    let dir = tempfile::tempdir().unwrap();
    let st = ingested(dir.path(), 100, 8);
    let c = dir.path().join("c.aec");
    let pts: Vec<[f32; 2]> = (0..100).map(|i| [i as f32, (i % 10) as f32]).collect();
    format::write_coords(&c, &pts).unwrap();
    ok(&["project", "--store", s(&st), "--coords", s(&c)]);
    ok(&["tile", "--store", s(&st)]);
    ok(&["validate", "--store", s(&st)]);
    let store = DatasetStore::open(&st).unwrap();
    assert_eq!(store.manifest().unwrap().projection_method.to_string(), "external");
}
