use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn synspec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synspec"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = synspec(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn encode_matches_golden_dump() {
    let dump = ok(&["encode", "--program", &fixture("atiixp_small.json")]);
    assert_eq!(
        dump,
        std::fs::read_to_string(fixture("atiixp_small_rules.txt")).unwrap()
    );
}

#[test]
fn check_reports_gfs2_violation() {
    let specs = fixture("gfs2_specs.json");
    let text = ok(&[
        "check",
        "--specs",
        &specs,
        "--program",
        &fixture("gfs2.json"),
    ]);
    assert_eq!(text.lines().count(), 1);
    assert!(text.contains("missing {gfs2_holder_uninit}"));
    let json = ok(&[
        "check",
        "--specs",
        &specs,
        "--program",
        &fixture("gfs2_fixed.json"),
        "--format",
        "json",
    ]);
    assert_eq!(json.trim(), "[]");
}

#[test]
fn walk_is_reproducible_across_workers() {
    let small = fixture("atiixp_small.json");
    let a = ok(&[
        "walk",
        "--program",
        &small,
        "--gamma",
        "20",
        "--walk-length",
        "8",
        "--seed",
        "3",
    ]);
    let b = ok(&[
        "walk",
        "--program",
        &small,
        "--gamma",
        "20",
        "--walk-length",
        "8",
        "--seed",
        "3",
        "--workers",
        "4",
    ]);
    let c = ok(&[
        "walk",
        "--program",
        &small,
        "--gamma",
        "20",
        "--walk-length",
        "8",
        "--seed",
        "4",
    ]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.starts_with("# gamma=20 k=8 seed=3\n"));
}

#[test]
fn probe_pipeline_with_identity_partition() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "pipeline",
        "--program",
        &fixture("atiixp_probe.json"),
        "--out-dir",
        p(dir.path()),
        "--identity-partition",
        "--min-support",
        "2",
        "--gamma",
        "5",
        "--dim",
        "8",
    ]);
    let specs = std::fs::read_to_string(dir.path().join("specs.txt")).unwrap();
    assert!(specs.contains("{pci_enable_device} =e=> {pci_disable_device}"));
    assert!(
        specs.contains("{kzalloc, pci_enable_device, pci_request_regions} =e=> {snd_atiixp_free}")
    );
}

#[test]
fn pipeline_equals_composed_stages() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| -> PathBuf { dir.path().join(name) };
    let (program, gold) = synspec::synth::planted_synonyms(4, 3, 5);
    std::fs::write(d("program.json"), program.to_json()).unwrap();
    std::fs::write(d("gold.txt"), gold).unwrap();
    let prog = d("program.json");
    let (corpus_p, vectors_p, clusters_p) = (d("corpus.txt"), d("vectors.txt"), d("clusters.tsv"));
    let (partition_p, handlers_p, specs_p) =
        (d("partition.tsv"), d("handlers.json"), d("specs.json"));
    let gold = d("gold.txt");
    let piped = d("piped");
    let knobs = ["--seed", "5", "--gamma", "8", "--walk-length", "15"];
    let train_knobs = ["--seed", "5", "--dim", "12", "--epochs", "3"];
    let mut args = vec![
        "pipeline",
        "--program",
        p(&prog),
        "--gold",
        p(&gold),
        "--out-dir",
        p(&piped),
        "--min-support",
        "2",
    ];
    args.extend(knobs);
    args.extend(&train_knobs[2..]);
    ok(&args);

    let mut walk = vec!["walk", "--program", p(&prog)];
    walk.extend(knobs);
    let corpus = ok(&walk);
    std::fs::write(d("corpus.txt"), &corpus).unwrap();
    let mut train = vec!["train", "--corpus", p(&corpus_p)];
    train.extend(train_knobs);
    std::fs::write(d("vectors.txt"), ok(&train)).unwrap();
    let clusters = ok(&[
        "cluster",
        "--vectors",
        p(&vectors_p),
        "--gold",
        p(&gold),
        "--seed",
        "5",
        "--partition-out",
        p(&partition_p),
    ]);
    std::fs::write(d("clusters.tsv"), &clusters).unwrap();
    let metrics = ok(&[
        "eval-gold",
        "--clusters",
        p(&clusters_p),
        "--gold",
        p(&gold),
    ]);
    std::fs::write(d("handlers.json"), ok(&["handlers", "--program", p(&prog)])).unwrap();
    let mine = [
        "mine",
        "--handlers",
        p(&handlers_p),
        "--partition",
        p(&partition_p),
        "--min-support",
        "2",
    ];
    let specs_text = ok(&mine);
    let mut mine_json = mine.to_vec();
    mine_json.extend(["--format", "json", "--out", p(&specs_p)]);
    ok(&mine_json);
    let violations = ok(&[
        "check",
        "--specs",
        p(&specs_p),
        "--handlers",
        p(&handlers_p),
    ]);

    let read = |name: &str| std::fs::read_to_string(piped.join(name)).unwrap();
    assert_eq!(read("rules.txt"), ok(&["encode", "--program", p(&prog)]));
    assert_eq!(read("corpus.txt"), corpus);
    assert_eq!(
        read("vectors.txt"),
        std::fs::read_to_string(d("vectors.txt")).unwrap()
    );
    assert_eq!(read("clusters.tsv"), clusters);
    assert_eq!(
        read("partition.tsv"),
        std::fs::read_to_string(d("partition.tsv")).unwrap()
    );
    assert_eq!(read("metrics.txt"), metrics);
    assert_eq!(
        read("handlers.json"),
        std::fs::read_to_string(d("handlers.json")).unwrap()
    );
    assert_eq!(read("specs.txt"), specs_text);
    assert_eq!(
        read("specs.json"),
        std::fs::read_to_string(d("specs.json")).unwrap()
    );
    assert_eq!(read("violations.txt"), violations);
}

#[test]
fn query_nearest_and_analogy() {
    let dir = tempfile::tempdir().unwrap();
    let vectors = dir.path().join("v.txt");
    std::fs::write(&vectors, "4 2\na 1 0\nb 0.9 0.1\nc 0 1\nd 0.1 0.9\n").unwrap();
    let near = ok(&[
        "query",
        "--vectors",
        p(&vectors),
        "--nearest",
        "a",
        "-n",
        "1",
    ]);
    assert!(near.trim_end().ends_with("\tb"), "{near}");
    let json = ok(&[
        "query",
        "--vectors",
        p(&vectors),
        "--analogy",
        "a",
        "b",
        "c",
        "--format",
        "json",
    ]);
    let rows: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(rows[0]["label"], "d");
}

#[test]
fn exit_codes() {
    let code = |args: &[&str]| synspec(args).status.code().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"functions\": [").unwrap();
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["walk"]), 2);
    assert_eq!(
        code(&["encode", "--program", p(&dir.path().join("absent.json"))]),
        3
    );
    assert_eq!(code(&["encode", "--program", p(&bad)]), 4);
    assert_eq!(
        code(&[
            "walk",
            "--program",
            &fixture("atiixp_small.json"),
            "--gamma",
            "0"
        ]),
        5
    );
    let vectors = dir.path().join("v.txt");
    std::fs::write(&vectors, "2 1\na 1\nb 1\n").unwrap();
    let gold = dir.path().join("gold.txt");
    std::fs::write(&gold, "must a b\n").unwrap();
    assert_eq!(
        code(&[
            "cluster",
            "--vectors",
            p(&vectors),
            "--gold",
            p(&gold),
            "--k-clusters",
            "9"
        ]),
        5
    );
    assert_eq!(
        code(&[
            "cluster",
            "--vectors",
            p(&vectors),
            "--program",
            &fixture("atiixp_small.json")
        ]),
        1
    );
    assert_eq!(
        code(&["query", "--vectors", p(&vectors), "--nearest", "zzz"]),
        1
    );
    let stderr = synspec(&["encode", "--program", p(&bad)]).stderr;
    assert!(String::from_utf8_lossy(&stderr).contains("line 1"));
}

#[test]
fn parallel_training_warns() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    std::fs::write(&corpus, "a b c\nb c d\n").unwrap();
    let out = synspec(&[
        "train",
        "--corpus",
        p(&corpus),
        "--dim",
        "4",
        "--workers",
        "2",
        "--deterministic",
        "false",
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not reproducible"));
}
