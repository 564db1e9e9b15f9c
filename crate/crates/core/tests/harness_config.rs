use std::path::PathBuf;

use hts_core::harness::config::{load_config, parse_config, Overrides, TaskType};
use hts_core::harness::dataset::{parse_dataset, DatasetError, Schema};
use hts_core::harness::report::emit_report;
use hts_core::harness::Workspace;
use hts_core::metrics::MetricId;
use hts_core::path::PathExpr;
use hts_core::registry::ToolKind;

fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo")
}

#[test]
fn demo_config_binds_both_tools() {
    let cfg = load_config(&demo_dir().join("config.toml"), Overrides::default()).unwrap();
    assert_eq!(cfg.task_type, TaskType::Design);
    assert_eq!(cfg.metric, "bleu2:char".parse::<MetricId>().unwrap());
    let registry = cfg.build_registry().unwrap();
    assert_eq!(registry.get("Name2SMILES").unwrap().kind, ToolKind::Retrieval);
    assert_eq!(registry.get("ChemDFM").unwrap().kind, ToolKind::Compute);
    let path = PathExpr::parse("['Name2SMILES_1','ChemDFM_1']").unwrap();
    assert!(hts_core::expand::expand(&path, &registry).is_ok());
}

#[test]
fn overrides_change_the_hash_only_when_they_matter() {
    let file = demo_dir().join("config.toml");
    let base = load_config(&file, Overrides::default()).unwrap();
    let jobs = load_config(
        &file,
        Overrides {
            jobs: Some(8),
            ..Overrides::default()
        },
    )
    .unwrap();
    let seed = load_config(
        &file,
        Overrides {
            seed: Some(99),
            ..Overrides::default()
        },
    )
    .unwrap();
    assert_eq!(base.hash(), jobs.hash());
    assert_ne!(base.hash(), seed.hash());
    assert_eq!(seed.seed, 99);
}

fn minimal(extra: &str) -> String {
    format!(
        "task = \"t\"\ntask_type = \"design\"\n[dataset]\ntrain = \"train.jsonl\"\n\
         [[tools]]\nname = \"A\"\nkind = \"compute\"\nbackend = \"simulated\"\n{extra}"
    )
}

#[test]
fn invalid_configs_name_the_field() {
    let cases = [
        (minimal("error_rate = 1.5\n"), "tools[0].error_rate"),
        (minimal("bogus = 1\n"), ""),
        (
            minimal("").replace(
                "task_type = \"design\"\n",
                "task_type = \"design\"\nmetric = \"bleu9\"\n",
            ),
            "metric",
        ),
    ];
    for (text, field) in cases {
        let err = parse_config(&text, &demo_dir(), Overrides::default()).unwrap_err();
        assert!(err.field.contains(field), "{text}: {err}");
    }
    assert!(parse_config(&minimal(""), &demo_dir(), Overrides::default()).is_ok());
}

#[test]
fn dataset_cases() {
    let good = "{\"id\":1,\"input\":\"a\",\"gold\":\"x\"}\n{\"id\":\"b\",\"input\":\"b\",\"gold\":\"y\"}\n\n{\"id\":3,\"input\":\"c\",\"gold\":\"z\"}\n";
    let d = parse_dataset(good, Schema::Generation).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.records[0].id, "1");

    let dup = "{\"id\":1,\"input\":\"a\",\"gold\":\"x\"}\n{\"id\":1,\"input\":\"b\",\"gold\":\"y\"}\n";
    assert!(matches!(
        parse_dataset(dup, Schema::Generation),
        Err(DatasetError::Schema { line: 2, .. })
    ));

    let bad_label = "{\"id\":1,\"input\":\"a\",\"label\":2}\n";
    assert!(matches!(
        parse_dataset(bad_label, Schema::Classification),
        Err(DatasetError::Schema { line: 1, .. })
    ));

    let labels = "{\"id\":1,\"input\":\"a\",\"label\":1,\"group\":\"bbbp\"}\n{\"id\":2,\"input\":\"b\",\"label\":0}\n";
    let d = parse_dataset(labels, Schema::Classification).unwrap();
    assert_eq!(d.records[0].label, Some(1));
    assert_eq!(d.records[0].gold, "1");

    assert!(matches!(
        parse_dataset("\n", Schema::Generation),
        Err(DatasetError::Empty)
    ));
}

#[test]
fn eval_then_report_on_demo() {
    let out = tempfile::tempdir().unwrap();
    let ws = Workspace::open(
        &demo_dir().join("config.toml"),
        Overrides::default(),
        Some(out.path().to_path_buf()),
    )
    .unwrap();
    let path = PathExpr::parse("['Name2SMILES_0','ChemDFM_0']").unwrap();
    let scored = ws.eval(&path, &demo_dir().join("test.jsonl")).unwrap();
    assert!((0.0..=1.0).contains(&scored.score));
    let table = emit_report(&ws.entries().unwrap(), TaskType::Design, out.path()).unwrap();
    assert_eq!(table.columns[..4], ["Exact", "BLEU", "Dis", "Validity"]);
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].items, 4);
    assert!(out.path().join("report.csv").exists());
    assert!(out.path().join("report.txt").exists());
}
