use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sentcnn::embed::{write_word2vec_binary, VectorRecord};

const WORDS: [&str; 8] = ["good", "fine", "bad", "awful", "movie", "plot", "the", "was"];

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut data = String::new();
        for i in 0..60 {
            let (label, word) = if i % 2 == 0 { (1, ["good", "fine"][i % 4 / 2]) } else { (0, ["bad", "awful"][i % 4 / 2]) };
            let noun = ["movie", "plot"][i % 3 % 2];
            data.push_str(&format!("{label}\tthe {noun} was {word} , {i} times\n"));
        }
        fs::write(dir.path().join("data.tsv"), data).unwrap();
        fs::write(
            dir.path().join("small.cfg"),
            "# tiny model\nembedding_dim = 4\nfeature_maps = 3\nfilter_widths = 1,2\nmax_epochs = 2\nseed = 3\n",
        )
        .unwrap();
        let records: Vec<VectorRecord> = WORDS
            .iter()
            .enumerate()
            .map(|(i, w)| {
                // "fine" duplicates "good"
                let base = if *w == "fine" { 0 } else { i };
                let values = (0..4).map(|d| ((base * 7 + d * 3) % 11) as f32 / 10.0 - 0.5).collect();
                VectorRecord { word: w.to_string(), values }
            })
            .collect();
        let mut bytes = Vec::new();
        write_word2vec_binary(&mut bytes, &records).unwrap();
        fs::write(dir.path().join("vectors.bin"), bytes).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_sentcnn"))
            .args(args)
            .current_dir(self.dir.path())
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    fn train(&self, variant: &str, out: &str) -> Output {
        let out = self.run(&[
            "train", "--config", "small.cfg", "--data", "data.tsv", "--vectors", "vectors.bin", "--variant", variant, "--out", out,
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        out
    }
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let fx = Fixture::new();
    assert_eq!(fx.run(&[]).status.code(), Some(1));
    assert_eq!(fx.run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fx.run(&["train", "--variant", "huge", "--data", "x"]).status.code(), Some(1));
    let help = fx.run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("inspect-data"));
}

#[test]
fn static_without_vectors_is_a_validation_error() {
    let fx = Fixture::new();
    let out = fx.run(&["train", "--data", "data.tsv", "--variant", "static", "--cv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("static variant requires --vectors"), "{}", stderr(&out));
}

#[test]
fn malformed_inputs_name_the_line() {
    let fx = Fixture::new();
    fs::write(fx.path("bad.tsv"), "1\tfine\nno tab here\n").unwrap();
    let out = fx.run(&["train", "--data", "bad.tsv", "--cv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    fs::write(fx.path("bad.cfg"), "seed = 1\nwidth = 3\n").unwrap();
    let out = fx.run(&["train", "--config", "bad.cfg", "--data", "data.tsv", "--cv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    let out = fx.run(&["train", "--data", "missing.tsv", "--cv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cross_validation_report_is_reproducible() {
    let fx = Fixture::new();
    let args = ["train", "--config", "small.cfg", "--data", "data.tsv", "--cv", "--seed", "7"];
    let a = fx.run(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let report = stdout(&a);
    let lines: Vec<&str> = report.lines().collect();
    assert!(lines[0].starts_with("# seed=7 config="), "{report}");
    assert_eq!(lines[1], "fold,accuracy");
    assert_eq!(lines.len(), 2 + 10 + 1);
    assert!(lines[12].starts_with("mean,"));
    assert_eq!(fx.run(&args).stdout, a.stdout);
}

#[test]
fn train_writes_checkpoint_and_history() {
    let fx = Fixture::new();
    let out = fx.train("non-static", "model.scnv");
    assert!(stdout(&out).contains("dev_accuracy\t"));
    assert!(fx.path("model.scnv").exists());
    let history = fs::read_to_string(fx.path("model.scnv.history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_loss,dev_acc"));
    assert_eq!(history.lines().count(), 3);

    let again = fx.train("non-static", "again.scnv");
    assert_eq!(again.stdout, out.stdout);
    assert_eq!(fs::read(fx.path("again.scnv")).unwrap(), fs::read(fx.path("model.scnv")).unwrap());
}

#[test]
fn predict_prints_class_and_distribution() {
    let fx = Fixture::new();
    fx.train("rand", "m.scnv");
    let out = fx.run(&["predict", "--checkpoint", "m.scnv", "--text", "the movie was good"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let line = stdout(&out);
    let fields: Vec<&str> = line.trim_end().split('\t').collect();
    assert_eq!(fields.len(), 3);
    let class: usize = fields[0].parse().unwrap();
    let probs: Vec<f64> = fields[1..].iter().map(|p| p.parse().unwrap()).collect();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    assert_eq!(class, if probs[1] > probs[0] { 1 } else { 0 });

    let twice = fx.run(&["predict", "--checkpoint", "m.scnv", "--text", "the movie was good"]);
    assert_eq!(twice.stdout, out.stdout);
}

#[test]
fn predict_reads_stdin_lines_including_empty_ones() {
    use std::io::Write;
    let fx = Fixture::new();
    fx.train("rand", "m.scnv");
    let mut child = Command::new(env!("CARGO_BIN_EXE_sentcnn"))
        .args(["predict", "--checkpoint", "m.scnv"])
        .current_dir(fx.dir.path())
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"the plot was awful\n\nthe plot was awful\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], lines[2]);
}

#[test]
fn corrupt_checkpoint_exits_three() {
    let fx = Fixture::new();
    fx.train("rand", "m.scnv");
    let bytes = fs::read(fx.path("m.scnv")).unwrap();
    fs::write(fx.path("cut.scnv"), &bytes[..bytes.len() - 8]).unwrap();
    let out = fx.run(&["predict", "--checkpoint", "cut.scnv", "--text", "x"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("truncated checkpoint"));

    fs::write(fx.path("junk.scnv"), b"not a model at all").unwrap();
    assert_eq!(fx.run(&["neighbors", "--checkpoint", "junk.scnv", "good"]).status.code(), Some(3));
}

fn neighbor_rows(fx: &Fixture, checkpoint: &str, word: &str, extra: &[&str]) -> Vec<Vec<String>> {
    let mut args = vec!["neighbors", "--checkpoint", checkpoint, word];
    args.extend_from_slice(extra);
    let out = fx.run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    stdout(&out).lines().map(|l| l.split('\t').map(str::to_string).collect()).collect()
}

#[test]
fn neighbors_lists_planted_duplicate_first() {
    let fx = Fixture::new();
    fx.train("static", "static.scnv");
    let rows = neighbor_rows(&fx, "static.scnv", "good", &[]);
    assert_eq!(rows[0], ["rank", "static", "cosine"]);
    assert_eq!(rows.len(), 1 + 4);
    assert_eq!(rows[1], ["1", "fine", "1.000"]);

    let rows = neighbor_rows(&fx, "static.scnv", "good", &["--count", "2"]);
    assert_eq!(rows.len(), 1 + 2);
}

#[test]
fn multichannel_neighbors_have_two_columns() {
    let fx = Fixture::new();
    fx.train("multichannel", "multi.scnv");
    let rows = neighbor_rows(&fx, "multi.scnv", "good", &[]);
    assert_eq!(rows[0], ["rank", "static", "cosine", "non-static", "cosine"]);
    assert_eq!(rows[1][1], "fine");
    assert!(rows.iter().all(|r| r.len() == 5));
}

#[test]
fn unknown_query_word_exits_four() {
    let fx = Fixture::new();
    fx.train("static", "m.scnv");
    let out = fx.run(&["neighbors", "--checkpoint", "m.scnv", "zebra"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn inspect_data_prints_statistics() {
    let fx = Fixture::new();
    let out = fx.run(&["inspect-data", "--config", "small.cfg", "--data", "data.tsv", "--vectors", "vectors.bin"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stats = stdout(&out);
    let get = |key: &str| {
        stats.lines().find_map(|l| l.strip_prefix(&format!("{key}\t"))).map(str::to_string).unwrap_or_else(|| panic!("{key} missing: {stats}"))
    };
    assert_eq!(get("c"), "2");
    assert_eq!(get("N"), "60");
    assert_eq!(get("|V_pre|"), "8");
    assert_eq!(get("test"), "CV");
    let vocab: usize = get("|V|").parse().unwrap();
    assert_eq!(vocab, WORDS.len() + 2 + 60);

    fs::write(fx.path("test.tsv"), "1\tgood movie\n0\tbad plot\n").unwrap();
    let out = fx.run(&["inspect-data", "--data", "data.tsv", "--test", "test.tsv"]);
    assert!(stdout(&out).contains("test\t2\n"));
}

#[test]
fn commands_do_not_modify_checkpoints() {
    let fx = Fixture::new();
    fx.train("multichannel", "m.scnv");
    let before = fs::read(fx.path("m.scnv")).unwrap();
    fx.run(&["predict", "--checkpoint", "m.scnv", "--text", "the plot was good"]);
    fx.run(&["neighbors", "--checkpoint", "m.scnv", "plot"]);
    assert_eq!(fs::read(Path::new(&fx.path("m.scnv"))).unwrap(), before);
}
