use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
[data]
frames = 8
height = 32
width = 48
seed = 1

[model]
decoder_strides = 2,2,2
base_channels = 12
min_channels = 4
embed_channels = 4
encoder_channels = 4
pe_frequencies = 4
temporal_hidden = 16
creb_count = 1

[train]
epochs = 2
eval_every = 1

[compress]
epochs = 2
lambdas = 0, 0.1
bits = 6

[ablate]
seeds = 0
budget = 20000
";

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tiny.conf"), TINY).unwrap();
        Self { dir }
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("tiny.conf")
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("runs")
    }

    fn run(&self, args: &[&str]) -> Output {
        let out = Command::new(env!("CARGO_BIN_EXE_fanerv"))
            .args(args)
            .arg("--config")
            .arg(self.config())
            .arg("--out")
            .arg(self.out())
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        if !out.status.success() {
            eprintln!("{}", String::from_utf8_lossy(&out.stderr));
        }
        out
    }

    fn ok(&self, args: &[&str]) -> PathBuf {
        let out = self.run(args);
        assert!(out.status.success(), "fanerv {args:?} failed");
        run_dir(&out)
    }
}

fn run_dir(out: &Output) -> PathBuf {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout
        .lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .expect("run directory line");
    PathBuf::from(line.trim())
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .split("\r\n")
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn interpolate_reports_four_train_and_four_test_frames() {
    let env = Env::new();
    let dir = env.ok(&["interpolate", "train.epochs=1"]);
    let rows = read_csv(&dir.join("metrics.csv"));
    assert_eq!(rows[0].join(","), "epoch,split,frame,psnr,ms_ssim,loss,lr");
    let frames = |split: &str| {
        rows.iter()
            .filter(|r| r[1] == split && r[2] != "mean")
            .map(|r| r[2].parse::<usize>().unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(frames("train"), vec![0, 2, 4, 6]);
    assert_eq!(frames("test"), vec![1, 3, 5, 7]);
    for t in [1, 3, 5, 7] {
        assert!(dir.join(format!("recon_{t:05}.png")).exists());
    }
    let m = manifest(&dir);
    assert_eq!(m["status"], "finished");
    assert_eq!(m["command"], "interpolate");
    assert_eq!(m["config"]["train"]["epochs"], 1);
    assert!(m["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    assert!(m["inputs"][0][1].as_str().unwrap().len() == 64);
}

#[test]
fn inpaint_writes_masked_inputs_and_reconstructions() {
    let env = Env::new();
    let dir = env.ok(&["inpaint", "--mask", "center"]);
    for t in 0..8 {
        assert!(dir.join(format!("masked_{t:05}.png")).exists());
        assert!(dir.join(format!("recon_{t:05}.png")).exists());
    }
    assert_eq!(manifest(&dir)["config"]["task"]["mask"], "center");
    let img = std::fs::read(dir.join("masked_00000.png")).unwrap();
    assert_eq!(&img[1..4], b"PNG");
}

#[test]
fn train_eval_compress_report_pipeline() {
    let env = Env::new();
    let train = env.ok(&["train", "--seed", "3"]);
    let ckpt = train.join("checkpoint.fanc");
    let before = std::fs::read(&ckpt).unwrap();
    assert_eq!(manifest(&train)["config"]["train"]["seed"], 3);

    let eval = env.ok(&["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    let train_rows = read_csv(&train.join("metrics.csv"));
    let eval_rows = read_csv(&eval.join("metrics.csv"));
    let last_train_mean = train_rows.iter().rev().find(|r| r[1] == "train" && r[2] == "mean").unwrap();
    let eval_mean = eval_rows.iter().find(|r| r[1] == "train" && r[2] == "mean").unwrap();
    assert_eq!(last_train_mean[3], eval_mean[3]);

    let comp = env.ok(&["compress", "--checkpoint", ckpt.to_str().unwrap()]);
    let rd = read_csv(&comp.join("rd.csv"));
    assert_eq!(rd[0].join(","), "lambda,bits,bpp,psnr,ms_ssim,artifact");
    assert_eq!(rd.len(), 3);
    let bpp: Vec<f64> = rd[1..].iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(bpp.windows(2).all(|w| w[0] <= w[1]));
    for r in &rd[1..] {
        let size = std::fs::metadata(comp.join(&r[5])).unwrap().len();
        assert_eq!(r[2].parse::<f64>().unwrap(), (8 * size) as f64 / (8.0 * 32.0 * 48.0));
    }
    assert!(comp.join("rd_psnr.png").exists());
    let dat = std::fs::read_to_string(comp.join("rd_psnr.dat")).unwrap();
    assert_eq!(dat.lines().filter(|l| !l.starts_with('#')).count(), 2);
    assert_eq!(std::fs::read(&ckpt).unwrap(), before, "inputs must not change");

    let rep = env.ok(&["report", "--checkpoint", ckpt.to_str().unwrap()]);
    let table = read_csv(&rep.join("params.csv"));
    assert_eq!(table[0].join(","), "stage_label,param_count,share");
    let body: usize = table[1..table.len() - 1].iter().map(|r| r[1].parse::<usize>().unwrap()).sum();
    assert_eq!(table.last().unwrap()[1].parse::<usize>().unwrap(), body);
    let stdout = String::from_utf8_lossy(&env.run(&["report", "--checkpoint", ckpt.to_str().unwrap()]).stdout).to_string();
    assert!(stdout.contains(&format!("decoder total {body}")));
    let dat = std::fs::read_to_string(rep.join("params.dat")).unwrap();
    assert!(dat.starts_with("# stage_label param_count"));
    assert!(rep.join("params.png").exists());
}

#[test]
fn creb_changes_the_final_stage_share() {
    let env = Env::new();
    let share = |args: &[&str]| {
        let dir = env.ok(args);
        let table = read_csv(&dir.join("params.csv"));
        table.iter().find(|r| r[0] == "head").unwrap()[2].parse::<f64>().unwrap()
    };
    let with = share(&["report"]);
    let without = share(&["report", "model.ablation.creb=false"]);
    assert_ne!(with, without);
}

#[test]
fn ablate_emits_one_row_per_variant() {
    let env = Env::new();
    let dir = env.ok(&["ablate", "--flags", "wfub,fsfb,tgfn,creb", "train.epochs=1"]);
    let rows = read_csv(&dir.join("ablation.csv"));
    assert_eq!(rows.len(), 6);
    let names: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names[0], "full");
    for r in &rows[1..] {
        let p: f64 = r[1].parse().unwrap();
        assert!((p - 20_000.0).abs() <= 600.0, "{r:?}");
    }
}

#[test]
fn identical_seeds_reproduce_metrics() {
    let env = Env::new();
    let a = env.ok(&["train", "--seed", "5"]);
    let b = env.ok(&["train", "--seed", "5"]);
    assert_ne!(a, b);
    assert_eq!(
        std::fs::read(a.join("metrics.csv")).unwrap(),
        std::fs::read(b.join("metrics.csv")).unwrap()
    );
}

#[test]
fn invalid_config_names_the_offending_key() {
    let env = Env::new();
    let out = env.run(&["train", "train.epoch=3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.epoch"));
    let out = env.run(&["train", "train.lr0=-1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lr0"));
    let out = env.run(&["train", "model.decoder_strides=2,3"]);
    assert!(!out.status.success());
}

#[test]
fn output_root_comes_from_the_environment() {
    let env = Env::new();
    let root = env.dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_fanerv"))
        .args(["report", "--config"])
        .arg(env.config())
        .env("FANERV_OUT", &root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(run_dir(&out).starts_with(&root));
}
