use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mfegan::data::{save_cube, save_labels, HsiCube, LabelRaster};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IN_SIZES: [usize; 16] = [46, 1428, 830, 237, 483, 730, 28, 478, 20, 972, 2455, 593, 205, 1265, 386, 93];

fn mfegan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfegan")).args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

/// A tiny synthetic experiment: sp 8, narrow networks, one epoch.
fn small_config(dir: &Path, extra: &str) -> String {
    let cfg = format!(
        r#"
seed = 4
sp = 8
train_fraction = 0.2
output = "run"
variants = ["cnn", "mfegan", "knn"]
{extra}
[data.synthetic]
height = 16
width = 16
bands = 6
sizes = [60, 30, 10]
noise = 0.05
seed = 4

[training]
epochs = 1
batch_size = 8
widths = [4, 6, 8]
"#
    );
    let path = dir.join("exp.toml");
    fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn selftest_passes() {
    let o = mfegan(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let out = text(&o);
    assert!(out.contains("D(G(z)) input"));
    assert!(out.contains("shapes sp=28 n=16"));
    assert!(out.contains("0 failed"));
}

#[test]
fn indian_pines_shaped_split_totals() {
    let dir = tempfile::tempdir().unwrap();
    let (h, w, bands) = (145, 145, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut labels = vec![0u16; h * w];
    let mut order: Vec<usize> = (0..h * w).collect();
    order.shuffle(&mut rng);
    let mut it = order.into_iter();
    for (c, &n) in IN_SIZES.iter().enumerate() {
        for px in it.by_ref().take(n) {
            labels[px] = c as u16 + 1;
        }
    }
    let values = (0..h * w * bands).map(|_| rng.random::<f32>()).collect();
    save_cube(dir.path().join("in.hsc"), &HsiCube::new(h, w, bands, values).unwrap()).unwrap();
    save_labels(dir.path().join("in.hsl"), &LabelRaster::new(h, w, labels).unwrap()).unwrap();
    let cfg = dir.path().join("in.toml");
    fs::write(
        &cfg,
        "seed = 1\nsp = 20\ntrain_fraction = 0.05\noutput = \"run\"\n[data]\ncube = \"in.hsc\"\nlabels = \"in.hsl\"\n",
    )
    .unwrap();
    let o = mfegan(&["prepare", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let out = text(&o);
    assert!(out.contains("sum,10249,512,9737"), "{out}");
    assert!(out.contains("\n11,2455,123,2332\n"), "{out}");
    assert!(out.contains("imbalance ratio (train): 123.00"), "{out}");
}

#[test]
fn missing_label_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\nsp = 20\ntrain_fraction = 0.1\noutput = \"o\"\n[data]\ncube = \"x.hsc\"\nlabels = \"x.hsl\"\n")
        .unwrap();
    let o = mfegan(&["prepare", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("x.hsc"), "{}", text(&o));

    let o = mfegan(&["train", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "learning_rate = 0.1");
    let o = mfegan(&["prepare", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("learning_rate"), "{}", text(&o));
}

#[test]
fn full_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let run = |cfg: &str| {
        for cmd in ["prepare", "train", "evaluate", "compare", "render-map"] {
            let o = mfegan(&[cmd, cfg]);
            assert_eq!(o.status.code(), Some(0), "{cmd}: {}", text(&o));
        }
    };
    run(&cfg);
    let out = dir.path().join("run");
    let first: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    for name in ["mfegan.trace.csv", "mfegan.d.mfw", "mfegan.g.mfw", "knn.map.ppm", "mcnemar.csv", "ground_truth.ppm"] {
        assert!(first.iter().any(|(n, _)| n == name), "missing {name}");
    }
    let trace = &first.iter().find(|(n, _)| n == "mfegan.trace.csv").unwrap().1;
    let trace = String::from_utf8_lossy(trace);
    assert!(trace.lines().skip(1).all(|l| l.ends_with("minmax") || l.ends_with("heuristic") || l.ends_with("leastsquare")));

    run(&cfg);
    for (name, bytes) in &first {
        if name.ends_with(".timing.csv") {
            continue;
        }
        assert_eq!(&fs::read(out.join(name)).unwrap(), bytes, "{name} changed between runs");
    }
}

#[test]
fn checkpoint_data_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    for cmd in ["prepare", "train"] {
        assert_eq!(mfegan(&[cmd, &cfg]).status.code(), Some(0));
    }
    let text_cfg = fs::read_to_string(&cfg).unwrap().replace("widths = [4, 6, 8]", "widths = [4, 6, 10]");
    fs::write(&cfg, text_cfg).unwrap();
    let o = mfegan(&["evaluate", &cfg]);
    assert_eq!(o.status.code(), Some(4), "{}", text(&o));
}

#[test]
fn compare_flags_and_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str, rows: &[(usize, u16, u16)]| {
        let mut s = String::from("index,truth,predicted\n");
        rows.iter().for_each(|(i, t, q)| s.push_str(&format!("{i},{t},{q}\n")));
        fs::write(dir.path().join(name), s).unwrap();
    };
    // a right / b wrong on 40 rows, the reverse on 10
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..50 {
        let a_right = i < 40;
        a.push((i, 1, if a_right { 1 } else { 2 }));
        b.push((i, 1, if a_right { 2 } else { 1 }));
    }
    p("a.predictions.csv", &a);
    p("b.predictions.csv", &b);
    p("short.predictions.csv", &a[..10]);
    let write_cfg = |files: &str| {
        let c = format!(
            "seed = 1\nsp = 8\ntrain_fraction = 0.5\noutput = \".\"\n[data]\ncube = \"c\"\nlabels = \"l\"\n[compare]\npredictions = [{files}]\n"
        );
        let path = dir.path().join("cmp.toml");
        fs::write(&path, c).unwrap();
        path.to_str().unwrap().to_string()
    };

    let cfg = write_cfg("\"a.predictions.csv\", \"a.predictions.csv\", \"b.predictions.csv\"");
    let o = mfegan(&["compare", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let matrix = fs::read_to_string(dir.path().join("mcnemar.csv")).unwrap();
    let rows: Vec<&str> = matrix.lines().collect();
    assert_eq!(rows[0], "method,a,a,b");
    assert_eq!(rows[1], "a,0.000,0.000,4.243");
    assert_eq!(rows[3], "b,4.243,4.243,0.000");
    let pairs = fs::read_to_string(dir.path().join("mcnemar_pairs.csv")).unwrap();
    assert!(pairs.contains("a,a,0,0,0.000,false"));
    assert!(pairs.contains("a,b,40,10,4.243,true"));

    let cfg = write_cfg("\"a.predictions.csv\", \"short.predictions.csv\"");
    assert_eq!(mfegan(&["compare", &cfg]).status.code(), Some(4));
    let cfg = write_cfg("\"a.predictions.csv\"");
    assert_eq!(mfegan(&["compare", &cfg]).status.code(), Some(2));
}
