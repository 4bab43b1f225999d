use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use ivirs_core::dds::{Channel, ProfileStore};

fn ivirs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ivirs"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn run(args: &[&str], dir: &Path) -> Output {
    ivirs().args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn index_reports_the_fixture_size() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixtures().join("fixture.trec");
    let o = run(
        &["index", corpus.to_str().unwrap(), "-o", "ix.json"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("N=3 "), "{}", stdout(&o));
    assert!(dir.path().join("ix.json").is_file());

    let o = run(
        &["search", "--index", "ix.json", "--query", "sheep farming"],
        dir.path(),
    );
    assert!(o.status.success());
    assert!(stdout(&o).lines().next().unwrap().contains("D2"));
}

#[test]
fn empty_directory_gives_an_empty_index_and_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("docs")).unwrap();
    let o = run(
        &["index", "docs", "--format", "plain-dir", "-o", "ix.json"],
        dir.path(),
    );
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("N=0 "));
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn corrupted_corpus_fails_with_an_offset() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.trec"),
        "<DOC>\n<DOCNO> A </DOCNO>\n<TEXT>\nfine.\n</TEXT>\n</DOC>\n<DOC>\n<DOCNO> B\n",
    )
    .unwrap();
    let o = run(&["index", "bad.trec"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("offset"), "{}", stderr(&o));
    assert!(!dir.path().join("index.json").exists());
}

#[test]
fn eval_prints_percentages() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.tsv"),
        "q1\ta\t1\nq1\tx\t2\nq1\tb\t3\nq1\ty\t4\nq1\tc\t5\nq2\tm\t1\nq2\tn\t2\nq9\tz\t1\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("qrels.tsv"),
        "q1\ta\nq1\tb\nq1\tc\nq1\td\nq2\tm\nq2\tn\n",
    )
    .unwrap();
    let o = run(&["eval", "run.tsv", "qrels.tsv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let q1 = out.lines().find(|l| l.starts_with("q1")).unwrap();
    assert!(q1.contains("60.00") && q1.contains("75.00"), "{q1}");
    let q2 = out.lines().find(|l| l.starts_with("q2")).unwrap();
    assert_eq!(q2.matches("100.00").count(), 3, "{q2}");
    assert!(stderr(&o).contains("q9"));
}

#[test]
fn merge_experiment_is_reproducible_and_clean_at_full_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let desk = fixtures().join("desk");
    let args = |csv: &str| {
        vec![
            "merge-experiment".to_string(),
            "--desk".into(),
            desk.to_str().unwrap().into(),
            "--accuracies".into(),
            "1.0,0.7".into(),
            "--recognizers".into(),
            "1,3".into(),
            "--trials".into(),
            "5".into(),
            "--csv".into(),
            csv.into(),
        ]
    };
    let a = ivirs()
        .args(args("a.csv"))
        .current_dir(dir.path())
        .output()
        .unwrap();
    let b = ivirs()
        .args(args("b.csv"))
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    let csv = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(
        csv,
        std::fs::read_to_string(dir.path().join("b.csv")).unwrap()
    );

    let clean: f64 = stdout(&a)
        .lines()
        .next()
        .unwrap()
        .trim_start_matches("clean MAP ")
        .parse()
        .unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for r in rows.iter().filter(|r| r[0] == 1.0) {
        assert_eq!(r[3], 0.0);
        assert!((r[6] - clean).abs() < 1e-4, "{r:?} vs {clean}");
    }
}

#[test]
fn synth_writes_a_loadable_desk() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["synth", "-o", "desk", "--documents", "40", "--topics", "4"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["corpus.trec", "queries.tsv", "qrels.tsv"] {
        assert!(dir.path().join("desk").join(f).is_file());
    }
    let o = run(
        &["damage-experiment", "--desk", "desk", "--trials", "3"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("weighted smaller drop"));
}

#[test]
fn transcribe_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "transcribe",
        "stock market crash",
        "--recognizers",
        "3",
        "--accuracy",
        "0.6",
        "--seed",
        "5",
    ];
    let a = run(&args, dir.path());
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&run(&args, dir.path())));
    assert!(stdout(&a).contains("# merged") && stdout(&a).contains("# wer"));
}

#[test]
fn add_user_writes_a_profile_store() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "add-user",
            "--profiles",
            "p.txt",
            "--user",
            "bob",
            "--pin",
            "1357",
            "--email",
            "bob@example.org",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let store = ProfileStore::load(&dir.path().join("p.txt")).unwrap();
    let bob = store.get("bob").unwrap();
    assert!(bob.verify_pin("1357").unwrap());
    assert_eq!(bob.addresses[&Channel::Email], "bob@example.org");
    let o = run(
        &[
            "add-user",
            "--profiles",
            "p.txt",
            "--user",
            "eve",
            "--pin",
            "12ab",
        ],
        dir.path(),
    );
    assert!(!o.status.success());
}

#[test]
fn serve_without_an_index_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ivirs.toml"), "index = \"missing.json\"\n").unwrap();
    let o = run(&["serve", "--config", "ivirs.toml"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing.json"), "{}", stderr(&o));
}

#[test]
fn serve_answers_and_stops_cleanly_on_interrupt() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixtures().join("fixture.trec");
    assert!(run(
        &["index", corpus.to_str().unwrap(), "-o", "ix.json"],
        dir.path()
    )
    .status
    .success());
    std::fs::write(
        dir.path().join("ivirs.toml"),
        "listen = \"127.0.0.1:0\"\nindex = \"ix.json\"\n[session]\ntheta_confirm = 0.6\n",
    )
    .unwrap();
    let mut child = ivirs()
        .args(["serve", "--config", "ivirs.toml"])
        .current_dir(dir.path())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut out = BufReader::new(child.stdout.take().unwrap());
    let mut ready = String::new();
    out.read_line(&mut ready).unwrap();
    assert!(
        ready.starts_with("ivirs listening on http://127.0.0.1:"),
        "{ready}"
    );
    let addr = ready
        .trim_start_matches("ivirs listening on http://")
        .split_whitespace()
        .next()
        .unwrap()
        .to_string();

    let mut stream = TcpStream::connect(&addr).unwrap();
    stream
        .set_read_timeout(Some(Duration::from_secs(10)))
        .unwrap();
    write!(
        stream,
        "POST /sessions HTTP/1.1\r\nHost: {addr}\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    assert!(response.starts_with("HTTP/1.1 201"), "{response}");
    assert!(response.contains("\"state\":\"awaiting_login\""));
    assert!(response.contains("\"theta_confirm\":0.6"));

    let status = Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    let exit = child.wait().unwrap();
    assert!(exit.success(), "{exit:?}");
    let mut rest = String::new();
    out.read_to_string(&mut rest).unwrap();
    assert!(rest.contains("ivirs stopped"));
    let mut log = String::new();
    child
        .stderr
        .take()
        .unwrap()
        .read_to_string(&mut log)
        .unwrap();
    assert!(log.contains("/sessions") && log.contains("201"), "{log}");
}
