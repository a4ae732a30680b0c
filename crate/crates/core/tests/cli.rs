use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gridmor(args: &str, dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridmor"))
        .args(args.split_whitespace())
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(args: &str, dir: &Path) {
    let out = gridmor(args, dir);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "{args}: {stderr}");
}

fn code(args: &str, dir: &Path) -> Option<i32> {
    gridmor(args, dir).status.code()
}

fn metrics(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok("gen --n 6 --seed 3 --out a.json", d);
    ok("gen --n 6 --seed 3 --out b.json", d);
    ok("gen --n 6 --seed 4 --out c.json", d);
    let read = |f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.json"), read("b.json"));
    assert_ne!(read("a.json"), read("c.json"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code("gen --n 0 --out a.json", d), Some(2));
    assert_eq!(code("frobnicate", d), Some(2));
    ok("gen --n 4 --seed 1 --out g.json", d);
    assert_eq!(
        code("reduce --params g.json --nr 6 --out m.txt", d),
        Some(2)
    );
    assert_eq!(
        code("sweep --params g.json --nr 8 --N 2 --out s.csv", d),
        Some(2)
    );
    assert_eq!(
        code("reduce --params nope.json --nr 4 --out m.txt", d),
        Some(1)
    );
}

#[test]
fn full_order_reduce_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok("gen --n 4 --seed 3 --connectivity 0.8 --out g.json", d);
    ok("reduce --params g.json --nr 16 --out m.txt", d);
    assert!(d.join("m.diagnostics.csv").exists());
    ok(
        "compare --params g.json --model m.txt --perturb-x0 1:0.1 --out cmp",
        d,
    );
    for f in ["metrics.csv", "full_outputs.csv", "reduced_outputs.csv"] {
        assert!(d.join("cmp").join(f).exists(), "{f}");
    }
    let rows = metrics(&d.join("cmp/metrics.csv"));
    assert_eq!(rows.len(), 1);
    let l2: f64 = rows[0][4].parse().unwrap();
    assert!(l2 <= 1e-5, "{l2}");
    assert_eq!(rows[0][7], "false");
}

#[test]
fn sweep_row_matches_reduce_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok("gen --n 5 --seed 2 --out g.json", d);
    ok("reduce --params g.json --nr 8 --N 3 --out m.txt", d);
    ok(
        "compare --params g.json --model m.txt --perturb-u 1:1.1 --out cmp",
        d,
    );
    let sweep = "sweep --params g.json --method bt,pod --nr 8 --N 3 --perturb-u 1:1.1";
    ok(&format!("{sweep} --jobs 2 --out s.csv"), d);
    let single = metrics(&d.join("cmp/metrics.csv"));
    let swept = metrics(&d.join("s.csv"));
    assert_eq!(swept.len(), 2);
    assert_eq!(swept[0], single[0]);
    // POD rows leave the BT-only columns empty
    assert_eq!(swept[1][0], "pod");
    assert_eq!((swept[1][1].as_str(), swept[1][2].as_str()), ("", ""));

    ok(&format!("{sweep} --jobs 1 --out s2.csv"), d);
    assert_eq!(
        fs::read(d.join("s.csv")).unwrap(),
        fs::read(d.join("s2.csv")).unwrap()
    );
}
