use std::path::Path;
use std::process::{Command, Output};

use gomi_core::dp::{default_orders, max_steps_for_budget};
use gomi_core::manifest::RunManifest;
use gomi_core::PrivacyRecord;

fn gomi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gomi"))
        .args(args)
        .env_remove("GOMI_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A few hundred steps everywhere; enough to exercise every stage.
const SMALL: &str = r#"
[public_gan]
latent_dim = 4
steps = 400
batch_size = 32

[public_gan.architecture]
kind = "mlp"
hidden = [16, 16]

[inversion]
method = "gomi"
iterations = 40
restarts = 1

[dp_gan]
inner_latent_dim = 2
hidden = [16, 16]
batch_size = 16
generator_ema = 0.0
max_critic_steps = 600

[dp_gan.dp]
clip_norm = 0.1
noise_multiplier = 1.1
epsilon_budget = 10.0

[synthesis]
samples = 300

[evaluation.labeler]
steps = 200

[evaluation.downstream]
steps = 200

[data.source]
kind = "toy"
train = 800
test = 400
"#;

#[test]
fn budget_matches_the_library() {
    let o = gomi(&["budget", "--epsilon", "10", "--delta", "1e-5", "--q", "0.01", "--sigma", "1.1"]);
    assert!(o.status.success());
    let expected = max_steps_for_budget(10.0, 1e-5, 0.01, 1.1, &default_orders()).unwrap();
    assert!(stdout(&o).contains(&format!("max_steps: {expected}")), "{}", stdout(&o));
}

#[test]
fn budget_too_small_for_one_step_prints_zero() {
    let o = gomi(&["budget", "--epsilon", "0.01", "--delta", "1e-5", "--q", "0.5", "--sigma", "0.8"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("max_steps: 0\n"));
}

#[test]
fn invalid_arguments_exit_with_code_two() {
    let o = gomi(&["budget", "--epsilon", "10", "--delta", "2", "--q", "0.01", "--sigma", "1.1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = gomi(&["partition", "--dataset", "/nonexistent/data", "--out", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_without_output_or_cache_root_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let o = gomi(&["run", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stage_by_stage_chain_verifies_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let d = |s: &str| root.join(s);

    let o = gomi(&["partition", "--dataset", "toy", "--seed", "3", "--out", p(&d("partition"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = gomi(&["train-public", "--split", p(&d("partition")), "--config", p(&cfg), "--out", p(&d("public"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = gomi(&[
        "invert", "--ckpt", p(&d("public")), "--split", p(&d("partition")), "--method", "mi", "--config", p(&cfg),
        "--out", p(&d("latents")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(RunManifest::load(&d("latents")).unwrap().metrics["method"], "mi");

    let o = gomi(&[
        "train-dp", "--latents", p(&d("latents")), "--epsilon", "5", "--delta", "1e-5", "--sigma", "1.3", "--clip",
        "0.2", "--config", p(&cfg), "--out", p(&d("dp")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let PrivacyRecord::Private(rec) = RunManifest::load(&d("dp")).unwrap().privacy else {
        panic!("DP stage must carry a finite privacy record");
    };
    assert_eq!((rec.epsilon_budget, rec.noise_multiplier, rec.clip_norm), (5.0, 1.3, 0.2));
    assert!(rec.epsilon <= 5.0);

    let o = gomi(&[
        "synthesize", "--dp-ckpt", p(&d("dp")), "--public-ckpt", p(&d("public")), "-n", "200", "--seed", "1", "--out",
        p(&d("synthetic")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(RunManifest::load(&d("synthetic")).unwrap().privacy, PrivacyRecord::Private(rec));

    let report = d("eval").join("report.txt");
    std::fs::create_dir_all(d("eval")).unwrap();
    let o = gomi(&[
        "evaluate", "--synthetic", p(&d("synthetic")), "--split", p(&d("partition")), "--config", p(&cfg), "--out",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&report).unwrap().contains("fid"));

    let o = gomi(&["verify", p(root)]);
    assert!(o.status.success(), "{}", stdout(&o));

    let img = d("synthetic").join("synthetic.img");
    let mut bytes = std::fs::read(&img).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&img, bytes).unwrap();
    let o = gomi(&["verify", p(root)]);
    assert_eq!(o.status.code(), Some(9));
    assert!(stdout(&o).contains("checksum mismatch"));
}

#[test]
fn run_reuses_completed_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("run");
    let first = gomi(&["run", "--config", p(&cfg), "--out", p(&out)]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = gomi(&["run", "--config", p(&cfg), "--out", p(&out)]);
    assert!(second.status.success());
    let text = stdout(&second);
    assert!(text.contains("reused: partition, train-public, invert, train-dp, synthesize"), "{text}");
    let checksum = |t: &str| t.lines().find(|l| l.starts_with("report_checksum")).map(str::to_owned);
    assert_eq!(checksum(&stdout(&first)), checksum(&text));
}

#[test]
fn cache_root_names_the_default_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gomi"))
        .args(["run", "--config", p(&cfg)])
        .env("GOMI_CACHE_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let runs: Vec<_> = std::fs::read_dir(dir.path().join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
}
