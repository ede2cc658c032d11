use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use derivpq::synth::Mixture;
use derivpq::vecio::{load_model, write_vecs};
use derivpq::{ElementKind, FlatIndex, GroundTruth, ProductQuantizer};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_derivpq"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Files {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Files {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let mix = Mixture::new(16, 12, 3.0, 1);
        write_vecs(
            &mix.sample(1500, 1),
            root.join("train.fvecs"),
            ElementKind::Float32,
        )
        .unwrap();
        write_vecs(
            &mix.sample(2000, 2),
            root.join("base.fvecs"),
            ElementKind::Float32,
        )
        .unwrap();
        write_vecs(
            &mix.sample(25, 3),
            root.join("query.fvecs"),
            ElementKind::Float32,
        )
        .unwrap();
        Files { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn train_encode_query_round_trip() {
    let f = Files::new();
    let model = f.path("pq.dpq");
    let out = run(&[
        "train",
        "--train",
        s(&f.path("train.fvecs")),
        "--m",
        "4",
        "--b",
        "6",
        "--bbar",
        "3",
        "--out",
        s(&model),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines().filter(|l| l.starts_with("subspace ")).count(),
        4
    );
    assert!(text.contains("P1 verified"));
    let pq: ProductQuantizer = load_model(&model).unwrap();
    pq.verify_p1().unwrap();

    let index = f.path("flat.dpq");
    let out = run(&[
        "encode",
        "--model",
        s(&model),
        "--base",
        s(&f.path("base.fvecs")),
        "--out",
        s(&index),
    ]);
    assert_eq!(code(&out), 0);
    let flat: FlatIndex = load_model(&index).unwrap();
    assert_eq!(flat.codes.len(), 2000);

    let out = run(&[
        "query",
        "--index",
        s(&index),
        "--queries",
        s(&f.path("query.fvecs")),
        "--mode",
        "derived",
        "--r",
        "5",
        "--r2",
        "200",
    ]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 25);
    for (q, line) in lines.iter().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 3);
        assert_eq!(cols[0], q.to_string());
        assert_eq!(cols[1].split(' ').count(), 5);
        assert_eq!(cols[2].split(' ').count(), 5);
    }
}

#[test]
fn configuration_errors_exit_2() {
    let f = Files::new();
    let train = f.path("train.fvecs");
    let out = run(&[
        "train",
        "--train",
        s(&train),
        "--m",
        "4",
        "--b",
        "8",
        "--bbar",
        "9",
        "--out",
        s(&f.path("x")),
    ]);
    assert_eq!(code(&out), 2);
    let out = run(&[
        "train",
        "--train",
        s(&train),
        "--m",
        "3",
        "--b",
        "4",
        "--bbar",
        "2",
        "--out",
        s(&f.path("x")),
    ]);
    assert_eq!(code(&out), 2);
    let out = run(&[
        "train",
        "--train",
        s(&f.path("missing.fvecs")),
        "--m",
        "4",
        "--b",
        "4",
        "--bbar",
        "2",
        "--out",
        s(&f.path("x")),
    ]);
    assert_eq!(code(&out), 2);
    let out = run(&["train", "--m", "4"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn data_errors_exit_3() {
    let f = Files::new();
    let broken = f.path("broken.fvecs");
    std::fs::write(&broken, [4u8, 0, 0, 0, 1, 2]).unwrap();
    let out = run(&[
        "train",
        "--train",
        s(&broken),
        "--m",
        "1",
        "--b",
        "1",
        "--bbar",
        "1",
        "--out",
        s(&f.path("x")),
    ]);
    assert_eq!(code(&out), 3);

    let fake = f.path("fake.dpq");
    std::fs::write(&fake, b"NOTMAGIC\x01\x00\x00\x00").unwrap();
    let out = run(&[
        "query",
        "--index",
        s(&fake),
        "--queries",
        s(&f.path("query.fvecs")),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn groundtruth_and_query_are_deterministic() {
    let f = Files::new();
    let run_all = |tag: &str| -> (Vec<u8>, Vec<u8>) {
        let gt = f.path(&format!("gt{tag}.ivecs"));
        let out = run(&[
            "groundtruth",
            "--base",
            s(&f.path("base.fvecs")),
            "--queries",
            s(&f.path("query.fvecs")),
            "--depth",
            "10",
            "--out",
            s(&gt),
        ]);
        assert_eq!(code(&out), 0);
        let idx = f.path(&format!("ivf{tag}.dpq"));
        let out = run(&[
            "index",
            "--train",
            s(&f.path("train.fvecs")),
            "--base",
            s(&f.path("base.fvecs")),
            "--K",
            "8",
            "--m",
            "4",
            "--b",
            "5",
            "--bbar",
            "2",
            "--out",
            s(&idx),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let res = f.path(&format!("res{tag}.tsv"));
        let out = run(&[
            "query",
            "--index",
            s(&idx),
            "--queries",
            s(&f.path("query.fvecs")),
            "--mode",
            "derived",
            "--r",
            "10",
            "--r2",
            "100",
            "--ma",
            "3",
            "--out",
            s(&res),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        (std::fs::read(gt).unwrap(), std::fs::read(res).unwrap())
    };
    let a = run_all("a");
    let b = run_all("b");
    assert_eq!(a, b);
    let gt = GroundTruth::new(
        10,
        a.0.chunks(44)
            .flat_map(|r| {
                r[4..]
                    .chunks(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            })
            .collect(),
    )
    .unwrap();
    assert_eq!(gt.queries(), 25);
}

#[test]
fn bench_writes_one_row_per_method_and_depth() {
    let f = Files::new();
    let csv = f.path("bench.csv");
    let out = bin()
        .env("DERIVPQ_THREADS", "1")
        .args([
            "bench",
            "--train",
            s(&f.path("train.fvecs")),
            "--base",
            s(&f.path("base.fvecs")),
            "--queries",
            s(&f.path("query.fvecs")),
            "--method",
            "4x4",
            "--method",
            "2x8",
            "--method",
            "2x4,8",
            "--r",
            "1,10",
            "--r2-grid",
            "50,200,2000",
            "--max-iters",
            "10",
            "--out",
            s(&csv),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "method,m,b,bbar,K,ma,r,r2,recall,index_us,tables_us,scan_us,refine_us,total_us"
    );
    assert_eq!(lines.len(), 1 + 3 * 2);
    // Conventional rows have no refine phase. Their method names hold no
    // comma, so a plain split finds the columns.
    for line in lines[1..].iter().filter(|l| !l.starts_with('"')) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[12].parse::<f64>().unwrap(), 0.0);
    }
    assert!(lines.iter().any(|l| l.starts_with("\"2x4,8\"")));

    let out = run(&[
        "bench",
        "--train",
        s(&f.path("train.fvecs")),
        "--base",
        s(&f.path("base.fvecs")),
        "--queries",
        s(&f.path("query.fvecs")),
        "--method",
        "2x4,8",
    ]);
    assert_eq!(code(&out), 2);
}
