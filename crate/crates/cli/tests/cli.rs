use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn prevcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prevcast"))
        .args(args)
        .env("PREVCAST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn doc(id: usize, ts: &str, text: &str, kind: &str) -> String {
    format!(r#"{{"id":"d{id}","timestamp":"{ts}","text":"{text}","kind":"{kind}"}}"#)
}

#[test]
fn prevalence_matches_hand_counts() {
    let dir = tempfile::tempdir().unwrap();
    let day1 = "2020-03-01T10:00:00Z";
    let day2 = "2020-03-02T10:00:00Z";
    let day3 = "2020-03-03T10:00:00Z";
    let lines = [
        // day 1: 7 counted documents (the retweet is dropped)
        doc(1, day1, "tengo miedo", "original"),
        doc(2, day1, "MIEDO y feliz", "reply"),
        doc(3, day1, "hoy es un dia", "original"),
        doc(4, day1, "#TengoMiedo", "original"),
        doc(5, day1, "que dia", "original"),
        doc(6, day1, "miedo miedo", "retweet"),
        doc(7, "2020-03-02T01:00:00+03:00", "nada", "original"),
        doc(8, day1, "feliz feliz", "original"),
        // day 2: 5 documents; the mention is not a word
        doc(9, day2, "miedo", "original"),
        doc(10, day2, "feliz", "original"),
        doc(11, day2, "nada", "original"),
        doc(12, day2, "@miedo hola", "original"),
        doc(13, day2, "otra cosa", "original"),
        // day 3: 7 documents
        doc(14, day3, "miedo feliz", "original"),
        doc(15, day3, "miedo y alegria", "original"),
        doc(16, day3, "feliz", "original"),
        doc(17, day3, "x", "original"),
        doc(18, day3, "y", "original"),
        doc(19, day3, "z", "original"),
        doc(20, day3, "w", "original"),
    ];
    let docs = dir.path().join("docs.ndjson");
    fs::write(&docs, lines.join("\n") + "\n").unwrap();
    let lex = dir.path().join("lex.json");
    fs::write(&lex, r#"{"fear":["miedo"],"joy":["feliz","alegria"]}"#).unwrap();
    let out = dir.path().join("out");

    let r = prevcast(&["prevalence", "--docs", p(&docs), "--lexicon", p(&lex), "--out", p(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = fs::read_to_string(out.join("prevalence.csv")).unwrap();
    // fear 3/7, 1/5, 2/7; joy 2/7, 1/5, 3/7
    assert_eq!(
        csv,
        "date,fear,joy\n\
         2020-03-01,42.857143,28.571429\n\
         2020-03-02,20.000000,20.000000\n\
         2020-03-03,28.571429,42.857143\n"
    );
}

#[test]
fn missing_lexicon_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let docs = dir.path().join("docs.ndjson");
    fs::write(&docs, doc(1, "2020-03-01T10:00:00Z", "hola", "original")).unwrap();
    let missing = dir.path().join("no_such_lexicon.json");
    let r = prevcast(&["prevalence", "--docs", p(&docs), "--lexicon", p(&missing), "--out", p(dir.path())]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("no_such_lexicon.json"), "{err}");
}

#[test]
fn bad_arguments_are_input_errors() {
    let r = prevcast(&["forecast", "--strategy", "prophet"]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let prev = dir.path().join("prevalence.csv");
    fs::write(&prev, "date,a,b\n2020-03-01,1,2\n2020-03-02,2,3\n").unwrap();
    let dims = dir.path().join("dims.json");
    fs::write(&dims, r#"{"d":["a","b"]}"#).unwrap();
    let r = prevcast(&["peaks", "--prevalence", p(&prev), "--dimensions", p(&dims), "--out", p(dir.path())]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
}

fn synth_inputs(dir: &Path) {
    fs::write(
        dir.join("spec.toml"),
        "generator = \"peaks\"\nbackground = 10.0\nbump_days = [12, 27, 42]\nbump_width = 2.0\n\
         bump_height = 12.0\nmarkers = 3\nsigma = 0.3\nlength = 50\nseed = 5\n",
    )
    .unwrap();
    fs::write(dir.join("lex.json"), r#"{"fear":["miedo"],"sadness":["triste"],"anger":["bronca"]}"#).unwrap();
    fs::write(dir.join("dims.json"), r#"{"negative emotions":["fear","sadness","anger"]}"#).unwrap();
    fs::write(
        dir.join("pipeline.toml"),
        "documents = \"s/documents.ndjson\"\nlexicon = \"lex.json\"\ndimensions = \"dims.json\"\nout = \"unused\"\n\
         strategies = [\"arima\", \"additive\", \"var\", \"gru\", \"naive\"]\ntrain_days = [7, 14]\nstride = 3\n\
         hit_n = [2, 3, 7]\nseed = 11\n[gru]\nhidden = 6\nepochs = 15\n",
    )
    .unwrap();
    let r = prevcast(&[
        "synth",
        "--spec",
        p(&dir.join("spec.toml")),
        "--lexicon",
        p(&dir.join("lex.json")),
        "--docs-per-day",
        "120",
        "--out",
        p(&dir.join("s")),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
}

fn strip_version(svg: &str) -> String {
    svg.lines().filter(|l| !l.starts_with("<!-- prevcast")).collect::<Vec<_>>().join("\n")
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    synth_inputs(dir.path());
    let cfg = dir.path().join("pipeline.toml");
    let mut manifests = Vec::new();
    for (run, jobs) in [("a", "1"), ("b", "3")] {
        let out = dir.path().join(run);
        let r = prevcast(&["pipeline", "--config", p(&cfg), "--out", p(&out), "--jobs", jobs]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        manifests.push(manifest);
    }
    let files: Vec<String> = manifests[0]["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap().to_owned())
        .collect();
    assert!(files.contains(&"prevalence.csv".to_owned()));
    assert!(files.contains(&"charts/negative_emotions.svg".to_owned()));
    assert_eq!(manifests[0], manifests[1]);
    let skipped = manifests[0]["skipped"].as_array().unwrap();
    assert!(skipped.iter().any(|s| s["strategy"] == "additive" && s["train_days"] == 7));
    for f in &files {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(!a.is_empty(), "{f} is empty");
        if f.ends_with(".svg") {
            let (a, b) = (String::from_utf8(a).unwrap(), String::from_utf8(b).unwrap());
            assert_eq!(strip_version(&a), strip_version(&b), "{f}");
        } else {
            assert!(a == b, "{f} differs between runs");
        }
    }
}

#[test]
fn stages_reproduce_pipeline_tables() {
    let dir = tempfile::tempdir().unwrap();
    synth_inputs(dir.path());
    let d = dir.path();
    let full = d.join("full");
    let r = prevcast(&["pipeline", "--config", p(&d.join("pipeline.toml")), "--out", p(&full), "--no-charts"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));

    let st = d.join("stages");
    let (lex, dims) = (d.join("lex.json"), d.join("dims.json"));
    let prev = st.join("prevalence.csv");
    let docs = d.join("s/documents.ndjson");
    let steps: Vec<Vec<&str>> = vec![
        vec!["prevalence", "--docs", p(&docs), "--lexicon", p(&lex), "--out", p(&st)],
        vec!["peaks", "--prevalence", p(&prev), "--dimensions", p(&dims), "--out", p(&st)],
        vec![
            "forecast",
            "--prevalence",
            p(&prev),
            "--dimensions",
            p(&dims),
            "--strategy",
            "arima,var,naive",
            "--train-days",
            "7,14",
            "--stride",
            "3",
            "--seed",
            "11",
            "--out",
            p(&st),
        ],
        vec!["evaluate", "--prevalence", p(&prev), "--dimensions", p(&dims), "--hit-n", "2,3,7", "--out", p(&st)],
        vec!["compare", "--prevalence", p(&prev), "--dimensions", p(&dims), "--out", p(&st)],
        vec!["plot", "--prevalence", p(&prev), "--dimensions", p(&dims), "--out", p(&st)],
    ];
    for args in &steps {
        let r = prevcast(args);
        assert!(r.status.success(), "{args:?}: {}", String::from_utf8_lossy(&r.stderr));
    }
    for f in ["prevalence.csv", "peaks.csv"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(st.join(f)).unwrap(), "{f}");
    }
    // the stage run covers a subset of strategies; its rows match the full run's
    let full_mape = fs::read_to_string(full.join("mape.csv")).unwrap();
    let stage_mape = fs::read_to_string(st.join("mape.csv")).unwrap();
    for line in stage_mape.lines() {
        assert!(full_mape.lines().any(|l| l == line), "missing {line}");
    }
    assert!(st.join("charts/negative_emotions.svg").exists());
    assert!(st.join("comparisons.json").exists());
}
