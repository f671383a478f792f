use std::path::Path;
use std::process::{Command, Output};

use mlscope_core::audio::{AudioBuffer, HapticScript};
use mlscope_core::isochrome::ImageRaster;
use serde_json::Value;

fn mlscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlscope")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn records(o: &Output) -> Vec<(String, Value)> {
    stdout(o)
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            (v["metric"].as_str().unwrap().to_string(), v["value"].clone())
        })
        .collect()
}

fn metric(o: &Output, name: &str) -> Value {
    records(o).into_iter().find(|(n, _)| n == name).unwrap().1
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = mlscope(&["qlearn", "train", "--level", "1", "--episodes", "2000", "--seed", "42", "--out", p(out)]);
        assert!(o.status.success());
        let text = stdout(&o);
        for key in ["episodes: 2000", "final_epsilon:", "greedy_length: 8", "bfs_length: 8"] {
            assert!(text.contains(key), "{text}");
        }
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let o = mlscope(&["--format", "records", "qlearn", "play", "--level", "1", "--qtable", p(&a)]);
    assert!(o.status.success());
    assert_eq!(metric(&o, "outcome"), "reached_goal");
    assert_eq!(metric(&o, "greedy_length"), 8);
}

#[test]
fn custom_grid_file() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("g.json");
    std::fs::write(&grid, r#"{"width":3,"height":1,"start":[0,0],"cells":["..G"]}"#).unwrap();
    let o = mlscope(&["--format=records", "qlearn", "train", "--grid", p(&grid), "--episodes", "300"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(metric(&o, "greedy_length"), 2);
    assert_eq!(metric(&o, "bfs_length"), 2);

    std::fs::write(&grid, r#"{"width":3,"height":1,"cells":["..G"]}"#).unwrap();
    let o = mlscope(&["qlearn", "train", "--grid", p(&grid)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("InvalidGrid"));
}

#[test]
fn usage_errors_exit_2() {
    let o = mlscope(&["qlearn", "train", "--level", "1", "--fast"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("--fast") && err.contains("Usage"), "{err}");

    let o = mlscope(&["qlearn", "train", "--level", "1", "--grid", "x.json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = mlscope(&["haptics", "tutorial", "--kind", "polka", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_code() {
    let o = mlscope(&["qlearn", "train", "--level", "7"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("UnknownLevel"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.png");
    std::fs::write(&bad, b"\x89PNG\r\n\x1a\nbroken").unwrap();
    let o = mlscope(&["isochrome", "decompose", "--input", p(&bad), "--k", "2", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("DecodeError"));
}

#[test]
fn decompose_two_colors() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("in.png");
    let pixels = (0..32 * 16).map(|i| if (i / 32) % 2 == 0 { [250, 250, 0] } else { [0, 10, 90] }).collect();
    std::fs::write(&img, ImageRaster::new(32, 16, pixels).unwrap().to_png().unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = mlscope(&["--format", "records", "isochrome", "decompose", "--input", p(&img), "--k", "2", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(metric(&o, "inertia").as_f64(), Some(0.0));

    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["cloud.ply", "layer_0.png", "layer_1.png", "summary.json"]);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["layers"][0]["pixel_count"], 256);
    assert_eq!(summary["layers"][0]["color"], serde_json::json!([0, 10, 90]));
    let ply = std::fs::read_to_string(out.join("cloud.ply")).unwrap();
    assert!(ply.contains("element vertex 512\n"));

    // Rerunning reproduces every file.
    let again = dir.path().join("again");
    mlscope(&["isochrome", "decompose", "--input", p(&img), "--k", "2", "--out", p(&again)]);
    for n in &names {
        assert_eq!(std::fs::read(out.join(n)).unwrap(), std::fs::read(again.join(n)).unwrap(), "{n}");
    }
}

#[test]
fn haptics_commands() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("quiet.wav");
    std::fs::write(&wav, AudioBuffer::new(vec![0.0; 16_000], 16_000).to_wav_pcm16()).unwrap();
    let script = dir.path().join("quiet.txt");
    let o = mlscope(&["haptics", "analyze", "--input", p(&wav), "--out", p(&script)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("events: 0\n"));
    let (header, s) = HapticScript::from_records(&std::fs::read_to_string(&script).unwrap()).unwrap();
    assert_eq!(header.source, "quiet.wav");
    assert!(s.events.is_empty());

    for (kind, events) in [("rhythm", 24), ("notes", 8), ("accents", 30)] {
        let out = dir.path().join(format!("{kind}.txt"));
        let o = mlscope(&["--format", "records", "haptics", "tutorial", "--kind", kind, "--out", p(&out)]);
        assert!(o.status.success());
        assert_eq!(metric(&o, "events"), events, "{kind}");
        HapticScript::from_records(&std::fs::read_to_string(&out).unwrap()).unwrap();
    }
}
