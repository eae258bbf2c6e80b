use std::path::{Path, PathBuf};

use s2dm::config::RunConfig;
use s2dm::evalkit::load_batch;
use s2dm::par::ExecMode;
use s2dm::samplers::{draw_latents, interpolate_run, InterpMode};
use s2dm::schedule::build_stride;
use s2dm_cli::{run_from_args, EXIT_BUDGET, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};

const BASE_CONFIG: &str = "\
# tiny run
schedule.T = 40
schedule.beta_start = 0.001
schedule.beta_end = 0.3
net.hidden = 16,16
net.time_embed_dim = 8
train.skip = 4
train.iterations = 10
train.batch_size = 32
train.snapshot_every = 5
train.time_policy = full_range
data.n = 500
";

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn s2dm(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["s2dm"];
    full.extend_from_slice(args);
    let code = run_from_args(full, &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// The base config with any key in `extra` replacing its base line.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let key = |l: &str| l.split('=').next().unwrap_or("").trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let mut text: String = BASE_CONFIG
        .lines()
        .filter(|l| !overridden.contains(&key(l)))
        .map(|l| format!("{l}\n"))
        .collect();
    text.push_str(extra);
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

fn trained(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, "");
    let out = dir.join("run");
    let r = s2dm(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    out.join("checkpoint.s2dm")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn train_writes_artifacts_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    assert!(ckpt.exists());
    let run = ckpt.parent().unwrap();
    let manifest = std::fs::read_to_string(run.join("manifest.txt")).unwrap();
    let echoed = RunConfig::parse(&manifest).unwrap();
    let original = RunConfig::parse(BASE_CONFIG).unwrap();
    assert_eq!(echoed, original);
    assert!(manifest.contains("manifest.iterations_run=10"));
    let curve = std::fs::read_to_string(run.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("iter,l0,lskip,combined"));
    assert_eq!(curve.lines().count(), 3);

    // feeding the manifest back in reproduces the run
    let again = dir.path().join("again");
    let r = s2dm(&["train", "--config", p(&run.join("manifest.txt")), "--out", p(&again)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert_eq!(
        std::fs::read(&ckpt).unwrap(),
        std::fs::read(again.join("checkpoint.s2dm")).unwrap()
    );
}

#[test]
fn out_dir_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("from_env");
    std::env::set_var(s2dm_cli::OUT_DIR_ENV, &out);
    let r = s2dm(&["train", "--config", p(&cfg)]);
    std::env::remove_var(s2dm_cli::OUT_DIR_ENV);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(out.join("checkpoint.s2dm").exists());
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "train.tau = 1.2\n");
    let r = s2dm(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("tau"), "{}", r.err);

    let cfg = write_config(dir.path(), "train.bogus = 3\n");
    let r = s2dm(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("train.bogus"), "{}", r.err);
}

#[test]
fn divergence_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "train.lr = 1000000\ntrain.iterations = 200\n");
    let out = dir.path().join("boom");
    let r = s2dm(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(r.code, EXIT_NUMERIC, "{}", r.err);
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(!manifest.contains("manifest.abort=none"));
}

#[test]
fn sample_outputs_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    let out = dir.path().join("s.csv");
    let r = s2dm(&[
        "sample", "--ckpt", p(&ckpt), "--steps", "40", "--n", "30", "--seed", "2", "--out", p(&out), "--svg", "--trajectory",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let b = load_batch(&out).unwrap();
    assert_eq!((b.n(), b.dim()), (30, 2));
    let svg = std::fs::read_to_string(dir.path().join("s.csv.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 30);
    let traj = std::fs::read_to_string(dir.path().join("s.csv.trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 41 * 30);

    let r = s2dm(&["sample", "--ckpt", p(&ckpt), "--steps", "3", "--sampler", "pndm", "--out", p(&out)]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("ddim"), "{}", r.err);

    let r = s2dm(&["sample", "--ckpt", p(&ckpt), "--steps", "41", "--out", p(&out)]);
    assert_eq!(r.code, EXIT_USAGE, "{}", r.err);

    let r = s2dm(&["sample", "--ckpt", p(&ckpt), "--steps", "10", "--sampler", "euler", "--out", p(&out)]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("ddim, pndm"), "{}", r.err);
}

#[test]
fn checkpoint_version_mismatch_prints_both() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
    std::fs::write(&ckpt, bytes).unwrap();
    let r = s2dm(&["sample", "--ckpt", p(&ckpt), "--steps", "10", "--out", p(&dir.path().join("s.csv"))]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("version 7") && r.err.contains("version 1"), "{}", r.err);
}

#[test]
fn eval_reports_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixture("eval_a.csv");
    let r = s2dm(&["eval", "--samples", p(&a), "--reference", p(&a), "--metric", "swd"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("value=0.0\n"), "{}", r.out);

    let r = s2dm(&["eval", "--samples", p(&a), "--reference", p(&a), "--metric", "fid"]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("swd, mmd, moments"), "{}", r.err);

    let short = dir.path().join("short.csv");
    std::fs::write(&short, "x0,x1\n0.0,1.0\n").unwrap();
    let r = s2dm(&["eval", "--samples", p(&a), "--reference", p(&short)]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("equal size"), "{}", r.err);

    let saved = dir.path().join("report.txt");
    let r = s2dm(&["eval", "--samples", p(&a), "--reference", p(&a), "--metric", "moments", "--out", p(&saved)]);
    assert_eq!(r.code, EXIT_OK);
    assert_eq!(std::fs::read_to_string(saved).unwrap(), r.out);
}

/// Reports generated by this build from the committed fixture pair.
#[test]
fn eval_matches_golden_reports() {
    let a = fixture("eval_a.csv");
    let b = fixture("eval_b.csv");
    for metric in ["swd", "mmd", "moments"] {
        let r = s2dm(&["eval", "--samples", p(&a), "--reference", p(&b), "--metric", metric, "--seed", "7"]);
        assert_eq!(r.code, EXIT_OK, "{}", r.err);
        let golden = std::fs::read_to_string(fixture(&format!("golden_{metric}.txt"))).unwrap();
        let value = |text: &str| -> f64 {
            text.lines()
                .find_map(|l| l.strip_prefix("value="))
                .unwrap()
                .parse()
                .unwrap()
        };
        assert!((value(&r.out) - value(&golden)).abs() <= 1e-12, "{metric}: {} vs {}", r.out, golden);
    }
}

#[test]
fn interpolation_grid_and_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    let out = dir.path().join("interp");
    let r = s2dm(&[
        "interpolate", "--ckpt", p(&ckpt), "--steps", "10", "--pairs", "2", "--alphas", "11", "--n", "5", "--seed", "3",
        "--out", p(&out),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let csv = std::fs::read_to_string(out.join("pair_1.csv")).unwrap();
    let mut alphas: Vec<String> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect();
    alphas.dedup();
    let want: Vec<String> = (0..=10).map(|i| format!("{:?}", i as f64 / 10.0)).collect();
    assert_eq!(alphas, want);
    assert!(out.join("pair_1.svg").exists());

    // pair 1 alpha 1 decodes the latents `sample --seed 6` draws
    let direct = dir.path().join("direct.csv");
    let r = s2dm(&["sample", "--ckpt", p(&ckpt), "--steps", "10", "--n", "5", "--seed", "6", "--out", p(&direct)]);
    assert_eq!(r.code, EXIT_OK);
    let last: Vec<String> = csv.lines().filter(|l| l.starts_with("1.0,")).map(|l| l[4..].to_string()).collect();
    let direct: Vec<String> = std::fs::read_to_string(direct).unwrap().lines().skip(1).map(String::from).collect();
    assert_eq!(last, direct);
}

#[test]
fn identical_latents_give_a_constant_strip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = s2dm::checkpoint::Checkpoint::load(&trained(dir.path())).unwrap();
    let model = ckpt.model().unwrap();
    let sched = ckpt.schedule().unwrap();
    let z = draw_latents(8, 2, 1);
    let alphas = s2dm::samplers::alpha_grid(5);
    let out = interpolate_run(&model, &sched, &build_stride(40, 8).unwrap(), &z, &z, &alphas, InterpMode::Spherical, ExecMode::Serial)
        .unwrap();
    assert!(out.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn ablate_grid_layout_and_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "schedule.T = 100\ntrain.iterations = 20\nnet.hidden = 8\n");
    let out = dir.path().join("ab");
    let r = s2dm(&[
        "ablate", "--config", p(&cfg), "--skips", "10", "--strides", "10", "--seeds", "1", "--n-eval", "50", "--out", p(&out),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let csv = std::fs::read_to_string(out.join("grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2);
    assert!(out.join("grid.svg").exists());

    let r = s2dm(&[
        "ablate", "--config", p(&cfg), "--skips", "2,10,50", "--strides", "2,10,50", "--seeds", "1,2", "--n-eval", "40", "--jobs",
        "2", "--out", p(&out),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let csv = std::fs::read_to_string(out.join("grid.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4 * 3);
    let matched: Vec<&str> = rows.iter().filter(|l| l.ends_with(",true")).copied().collect();
    assert_eq!(matched.len(), 3);
    for (k, l) in [2, 10, 50].iter().zip(&matched) {
        assert!(l.starts_with(&format!("skip={k},{k},{k},")), "{l}");
        assert!(l.contains(",2,1;2,"), "{l}");
    }
    let trend = std::fs::read_to_string(out.join("trend.txt")).unwrap();
    assert_eq!(trend.lines().count(), 3);

    let r = s2dm(&[
        "ablate", "--config", p(&cfg), "--skips", "2,10", "--strides", "10", "--seeds", "1,2", "--budget", "100", "--out", p(&out),
    ]);
    assert_eq!(r.code, EXIT_BUDGET);
    assert!(r.err.contains("estimated 120"), "{}", r.err);
}

#[test]
fn ablation_is_identical_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "schedule.T = 100\ntrain.iterations = 15\nnet.hidden = 8\n");
    let mut grids = Vec::new();
    for jobs in ["1", "3"] {
        let out = dir.path().join(format!("j{jobs}"));
        let r = s2dm(&[
            "ablate", "--config", p(&cfg), "--skips", "2,10", "--strides", "10,20", "--seeds", "4,5", "--n-eval", "30", "--jobs",
            jobs, "--out", p(&out),
        ]);
        assert_eq!(r.code, EXIT_OK, "{}", r.err);
        grids.push(std::fs::read(out.join("grid.csv")).unwrap());
    }
    assert_eq!(grids[0], grids[1]);
}

#[test]
fn oracle_check_quick_passes() {
    let r = s2dm(&["oracle-check", "--quick"]);
    assert_eq!(r.code, EXIT_OK, "{}{}", r.out, r.err);
    assert!(r.out.contains("PASS gamma_convergence"), "{}", r.out);
    assert!(!r.out.contains("FAIL"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(s2dm(&["frobnicate"]).code, EXIT_USAGE);
    assert_eq!(s2dm(&["sample"]).code, EXIT_USAGE);
    assert_eq!(s2dm(&["--help"]).code, EXIT_OK);
    let r = s2dm(&["train", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(r.code, EXIT_USAGE);
}
