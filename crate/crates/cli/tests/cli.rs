use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn resp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resp"))
        .args(args)
        .env_remove("RESP_LLM_ENDPOINT")
        .env_remove("RESP_LLM_MODEL")
        .env_remove("RESP_LLM_API_KEY")
        .env_remove("RESP_CONFIG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn built_index(corpus: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("index");
    let o = resp(&["index", fixture(corpus).to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

fn index_arg(dir: &TempDir) -> String {
    dir.path().join("index").to_string_lossy().into_owned()
}

#[test]
fn index_prints_stats() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    fs::write(
        &corpus,
        "{\"id\": 1, \"title\": \"A\", \"contents\": \"red apple\"}\n{\"id\": 2, \"title\": \"B\", \"contents\": \"green pear\"}\n{\"id\": 3, \"title\": \"C\", \"contents\": \"blue plum\"}\n",
    )
    .unwrap();
    let out = dir.path().join("idx");
    let o = resp(&["index", corpus.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("indexed 3 documents"));
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn index_missing_file_names_the_path() {
    let o = resp(&["index", "/nonexistent/corpus.jsonl", "--out", "/tmp/unused"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("/nonexistent/corpus.jsonl"));
}

#[test]
fn index_duplicate_id_names_the_id() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    fs::write(
        &corpus,
        "{\"id\": \"dup-7\", \"contents\": \"one\"}\n{\"id\": \"dup-7\", \"contents\": \"two\"}\n",
    )
    .unwrap();
    let o = resp(&["index", corpus.to_str().unwrap(), "--out", dir.path().join("i").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("dup-7"));
}

#[test]
fn ask_answers_the_case_study_and_writes_a_trace() {
    let idx = built_index("case_corpus.jsonl");
    let trace = idx.path().join("trace.json");
    let o = resp(&[
        "ask",
        "Victor Varnada directed Twisted Fortune, which starred which brother of Eddie Murphy?",
        "--index",
        &index_arg(&idx),
        "--script",
        fixture("case_murphy_script.jsonl").to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "Charlie Murphy");
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(t["iterations"][0]["round"], 0);
    assert_eq!(t["stop_reason"], "judged_sufficient");
    assert_eq!(t["iterations"].as_array().unwrap().len(), 1);
}

#[test]
fn ask_standard_pipeline_has_one_iteration() {
    let idx = built_index("case_corpus.jsonl");
    let trace = idx.path().join("trace.json");
    let o = resp(&[
        "ask",
        "Who starred in Twisted Fortune?",
        "--pipeline",
        "standard",
        "--index",
        &index_arg(&idx),
        "--script",
        fixture("case_murphy_script.jsonl").to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(t["iterations"].as_array().unwrap().len(), 1);
    assert_eq!(t["pipeline"], "standard");
}

#[test]
fn ask_without_backend_is_a_config_error() {
    let idx = built_index("case_corpus.jsonl");
    let o = resp(&["ask", "Who?", "--index", &index_arg(&idx)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no LLM backend configured"));
}

#[test]
fn ask_with_missing_index_is_a_data_error() {
    let o = resp(&[
        "ask",
        "Who?",
        "--index",
        "/nonexistent/index",
        "--script",
        fixture("case_murphy_script.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("/nonexistent/index"));
}

#[test]
fn script_mismatch_is_a_runtime_error() {
    let idx = built_index("case_corpus.jsonl");
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("s.jsonl");
    fs::write(&script, "{\"match\": \"Passages:\", \"response\": \"E. [DONE]\"}\n").unwrap();
    let o = resp(&["ask", "Who starred in Twisted Fortune?", "--index", &index_arg(&idx), "--script", script.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("reasoner call failed in round 0"));
}

#[test]
fn eval_prints_summary_and_respects_limit() {
    let idx = built_index("mini_corpus.jsonl");
    let out = idx.path().join("report");
    let script = fixture("mini_script.jsonl");
    let o = resp(&[
        "eval",
        fixture("mini_dataset.jsonl").to_str().unwrap(),
        "--index",
        &index_arg(&idx),
        "--script",
        script.to_str().unwrap(),
        "--parallelism",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.contains("n=20"), "{line}");
    assert!(line.contains("F1=0.8000"), "{line}");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n"], 20);
    assert_eq!(summary["mean_rounds"], 1.0);
    assert_eq!(fs::read_to_string(out.join("rows.jsonl")).unwrap().lines().count(), 20);
    assert_eq!(fs::read_to_string(out.join("traces.jsonl")).unwrap().lines().count(), 20);

    let o = resp(&[
        "eval",
        fixture("mini_dataset.jsonl").to_str().unwrap(),
        "--index",
        &index_arg(&idx),
        "--script",
        script.to_str().unwrap(),
        "--limit",
        "2",
        "--k",
        "15",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.contains("n=2 "), "{line}");
    assert!(line.contains("mean_gen_prompt_tokens="), "{line}");
}

#[test]
fn eval_missing_dataset_is_a_data_error() {
    let idx = built_index("mini_corpus.jsonl");
    let o = resp(&[
        "eval",
        "/nonexistent/data.jsonl",
        "--index",
        &index_arg(&idx),
        "--script",
        fixture("mini_script.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("/nonexistent/data.jsonl"));
}

#[test]
fn sweep_writes_one_csv_row_per_pipeline_and_k() {
    let idx = built_index("mini_corpus.jsonl");
    let csv_path = idx.path().join("sweep.csv");
    let o = resp(&[
        "sweep",
        fixture("mini_dataset.jsonl").to_str().unwrap(),
        "--k",
        "3,5,10,15",
        "--pipelines",
        "resp,standard",
        "--index",
        &index_arg(&idx),
        "--script",
        fixture("mini_script.jsonl").to_str().unwrap(),
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "pipeline,k,n,mean_f1,mean_em,mean_generator_prompt_tokens,errors");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    assert_eq!(rows.len(), 8);
    let size = |r: &Vec<String>| r[5].parse::<f64>().unwrap();
    let resp_rows: Vec<_> = rows.iter().filter(|r| r[0] == "resp").collect();
    let standard_rows: Vec<_> = rows.iter().filter(|r| r[0] == "standard").collect();
    assert!(resp_rows.windows(2).all(|w| size(w[0]) == size(w[1])));
    assert!(standard_rows.windows(2).all(|w| size(w[0]) < size(w[1])));
}

#[test]
fn config_file_supplies_paths() {
    let idx = built_index("case_corpus.jsonl");
    let config = idx.path().join("resp.toml");
    fs::write(
        &config,
        format!(
            "[paths]\nindex_dir = \"index\"\nscript = {:?}\n\n[pipeline]\ntop_k = 2\n",
            fixture("case_murphy_script.jsonl").to_str().unwrap()
        ),
    )
    .unwrap();
    let o = resp(&["--config", config.to_str().unwrap(), "ask", "Which brother of Eddie Murphy starred in Twisted Fortune?"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "Charlie Murphy");
}

#[test]
fn bad_config_and_bad_flags_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[pipeline]\nmax_iterations = 0\n").unwrap();
    let o = resp(&["--config", config.to_str().unwrap(), "ask", "q"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("max_iterations"));

    let o = resp(&["ask", "q", "--pipeline", "ircot"]);
    assert_eq!(o.status.code(), Some(2));
}
