use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_qgrl");

fn qgrl(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("QGRL_ANSWER_CMD")
        .env("RUST_LOG", "info")
        .output()
        .expect("spawn qgrl")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str =
    "word_dim=6\nfeat_dim=2\nenc_hidden=5\nenc_layers=1\ndec_hidden=8\natt_dim=5\nptr_dim=4\nmax_len=12\nepochs=1\n";

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let train = dir.join("train.jsonl");
    if !train.exists() {
        ok(&qgrl(&["synth", "--n", "12", "--seed", "3", "--out", s(&train)]));
        ok(&qgrl(&[
            "synth",
            "--n",
            "4",
            "--seed",
            "4",
            "--out",
            s(&dir.join("heldout.jsonl")),
        ]));
    }
    let cfg = dir.join(format!("run{}.cfg", extra.len()));
    fs::write(
        &cfg,
        format!(
            "{TINY}train={}\nheldout={}\n{extra}",
            s(&train),
            s(&dir.join("heldout.jsonl"))
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn synth_is_deterministic_and_rejects_zero() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a.jsonl"), d.path().join("b.jsonl"));
    ok(&qgrl(&["synth", "--n", "30", "--seed", "5", "--out", s(&a)]));
    ok(&qgrl(&["synth", "--n", "30", "--seed", "5", "--out", s(&b)]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 30);

    let zero = qgrl(&["synth", "--n", "0", "--out", s(&d.path().join("z.jsonl"))]);
    assert_eq!(zero.status.code(), Some(2));
    assert!(!d.path().join("z.jsonl").exists());
}

#[test]
fn synth_to_unwritable_path_fails() {
    let out = qgrl(&["synth", "--n", "3", "--out", "/nonexistent-dir/x.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn build_vocab_respects_cap() {
    let d = tempfile::tempdir().unwrap();
    let c = d.path().join("c.jsonl");
    ok(&qgrl(&["synth", "--n", "20", "--out", s(&c)]));
    let v = d.path().join("v.json");
    ok(&qgrl(&[
        "build-vocab",
        "--corpus",
        s(&c),
        "--cap",
        "10",
        "--out",
        s(&v),
    ]));
    let j: serde_json::Value = serde_json::from_str(&fs::read_to_string(&v).unwrap()).unwrap();
    assert_eq!(j["vocab"].as_array().unwrap().len(), 10);
    assert_eq!(j["vocab"][3], "<unk>");
}

#[test]
fn config_errors_list_every_bad_key() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.cfg");
    fs::write(&cfg, "epochs=2\nlearning_rate=1\nalpha=-1\nfoo=bar\n").unwrap();
    let out = qgrl(&["pretrain", "--config", s(&cfg), "--out", s(d.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    for k in ["learning_rate", "alpha", "foo"] {
        assert!(err.contains(k), "{err}");
    }
}

#[test]
fn finetune_without_pretrained_names_path() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nowhere.qgrl");
    let cfg = tiny_config(d.path(), &format!("pretrained={}\n", s(&missing)));
    let out = qgrl(&["finetune", "--config", s(&cfg), "--out", s(&d.path().join("ft"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn pipeline_end_to_end() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path(), "");
    let (pre1, pre2) = (d.path().join("pre1"), d.path().join("pre2"));
    ok(&qgrl(&["pretrain", "--config", s(&cfg), "--out", s(&pre1)]));
    ok(&qgrl(&["pretrain", "--config", s(&cfg), "--out", s(&pre2)]));
    let m1 = fs::read_to_string(pre1.join("metrics.jsonl")).unwrap();
    assert_eq!(m1, fs::read_to_string(pre2.join("metrics.jsonl")).unwrap());
    assert!(fs::read(pre1.join("model.qgrl")).unwrap() == fs::read(pre2.join("model.qgrl")).unwrap());
    let line: serde_json::Value = serde_json::from_str(m1.lines().next().unwrap()).unwrap();
    for k in ["loss", "xent", "heldout_xent", "heldout_reward"] {
        assert!(line[k].is_number(), "{k} in {line}");
    }
    assert!(pre1.join("epoch-001.qgrl").exists());

    let ft_cfg = tiny_config(
        d.path(),
        &format!(
            "pretrained={}\nbase=rouge_l\nqss=true\nanss=true\nrl_lr=1e-3\n",
            s(&pre1.join("model.qgrl"))
        ),
    );
    let ft = d.path().join("ft");
    ok(&qgrl(&["finetune", "--config", s(&ft_cfg), "--out", s(&ft)]));
    let line: serde_json::Value = serde_json::from_str(
        fs::read_to_string(ft.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert!(line["reward"].is_number(), "{line}");

    let heldout = d.path().join("heldout.jsonl");
    let (g1, g2) = (d.path().join("g1.jsonl"), d.path().join("g2.jsonl"));
    for g in [&g1, &g2] {
        ok(&qgrl(&[
            "generate",
            "--config",
            s(&cfg),
            "--checkpoint",
            s(&ft.join("model.qgrl")),
            "--corpus",
            s(&heldout),
            "--out",
            s(g),
        ]));
    }
    let gen = fs::read_to_string(&g1).unwrap();
    assert_eq!(gen, fs::read_to_string(&g2).unwrap());
    assert_eq!(gen.lines().count(), 4);

    let scores = d.path().join("scores.jsonl");
    ok(&qgrl(&[
        "evaluate",
        "--candidates",
        s(&g1),
        "--references",
        s(&heldout),
        "--out",
        s(&scores),
    ]));
    assert_eq!(fs::read_to_string(&scores).unwrap().lines().count(), 5);
}

#[test]
fn evaluate_identity_and_orphans() {
    let d = tempfile::tempdir().unwrap();
    let c = d.path().join("c.jsonl");
    ok(&qgrl(&["synth", "--n", "10", "--out", s(&c)]));
    let out = d.path().join("e.jsonl");
    ok(&qgrl(&[
        "evaluate",
        "--candidates",
        s(&c),
        "--references",
        s(&c),
        "--out",
        s(&out),
    ]));
    let text = fs::read_to_string(&out).unwrap();
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(last["corpus"]["bleu4"], 1.0);
    assert_eq!(last["corpus"]["rouge_l"], 1.0);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for k in ["bleu4", "gleu", "rouge_l", "qss", "anss"] {
        assert!(first[k].is_number(), "{k} in {first}");
    }
    assert_eq!(first["anss"], 1.0);

    let cand = d.path().join("cand.jsonl");
    fs::write(
        &cand,
        "{\"id\":\"synth-1-00000\",\"question\":[\"a\"]}\n{\"id\":\"stray\",\"question\":[\"b\"]}\n",
    )
    .unwrap();
    let res = qgrl(&[
        "evaluate",
        "--candidates",
        s(&cand),
        "--references",
        s(&c),
        "--out",
        s(&out),
    ]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("stray") && err.contains("synth-1-00009"), "{err}");
}

#[test]
fn train_das_writes_checkpoint() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path(), "das_emb_dim=4\ndas_hidden=4\ndas_out_dim=3\ndas_epochs=2\n");
    let out = d.path().join("das");
    ok(&qgrl(&["train-das", "--config", s(&cfg), "--out", s(&out)]));
    assert!(out.join("das.qgrl").exists());
    assert_eq!(
        fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().count(),
        2
    );
}

#[test]
fn gradcheck_reports_and_validates_scope() {
    let d = tempfile::tempdir().unwrap();
    let rep = d.path().join("g.json");
    ok(&qgrl(&["gradcheck", "--scope", "pointer", "--out", s(&rep)]));
    let j: serde_json::Value = serde_json::from_str(&fs::read_to_string(&rep).unwrap()).unwrap();
    assert!(j[0]["report"]["max_rel_error"].as_f64().unwrap() < 1e-4);
    assert_eq!(qgrl(&["gradcheck", "--scope", "lstm"]).status.code(), Some(2));
}

#[test]
fn external_answer_command_from_env() {
    let d = tempfile::tempdir().unwrap();
    let pre = d.path().join("pre");
    let cfg = tiny_config(d.path(), "");
    ok(&qgrl(&["pretrain", "--config", s(&cfg), "--out", s(&pre)]));
    let ft_cfg = tiny_config(
        d.path(),
        &format!(
            "pretrained={}\nanss=true\nanswer_timeout_ms=2000\n",
            s(&pre.join("model.qgrl"))
        ),
    );
    let out = Command::new(BIN)
        .args(["finetune", "--config", s(&ft_cfg), "--out", s(&d.path().join("ft"))])
        .env(
            "QGRL_ANSWER_CMD",
            r#"while read l; do echo '{"answer":["1600"]}'; done"#,
        )
        .output()
        .unwrap();
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("answer_cmd=while read l"));
}
