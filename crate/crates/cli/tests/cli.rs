use std::path::Path;
use std::process::{Command, Output};

use latentfit::autoencoder::AutoencoderModel;
use latentfit::baselines::{crlb_sigma_f, crlb_sigma_tau, CrlbInputs};
use latentfit::signals::{make_dataset, Dataset, DatasetSpec, ParamSpread, SignalKind};

fn latentfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latentfit"))
        .args(args)
        .env_remove("LATENTFIT_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = latentfit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn tiny_model(dir: &Path) -> String {
    let model = path(dir, "tiny.lfm");
    ok(&[
        "train", "--kind", "exp", "--datasets", "1", "--reps", "1", "--stage-epochs", "1,1,1",
        "--signals-per-dataset", "40", "--seed", "3", "--out", &model,
    ]);
    model
}

#[test]
fn crlb_matches_library_exactly() {
    let out = ok(&["crlb", "--snr", "32", "--fbw", "200e6", "--tm", "5e-6", "--tau", "1e-6"]);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("sigma_f_hz,sigma_tau_s"));
    let v: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    let inputs = CrlbInputs { snr: 32.0, f_bw: 200e6, t_m: 5e-6, tau: 1e-6 };
    assert_eq!(v, vec![crlb_sigma_f(&inputs).unwrap(), crlb_sigma_tau(&inputs).unwrap()]);

    let suffixed = ok(&["crlb", "--snr", "2^5", "--fbw", "200MHz", "--tm", "5us", "--tau", "1us"]);
    assert_eq!(suffixed, out);
}

#[test]
fn generate_is_deterministic_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(dir.path(), "a.bin"), path(dir.path(), "b.bin"));
    let args = ["generate", "--kind", "exp", "--n", "200", "--snr", "1048576", "--seed", "7"];
    ok(&[&args[..], &["--out", &a]].concat());
    ok(&[&args[..], &["--out", &b]].concat());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let lib = make_dataset(&DatasetSpec::training(SignalKind::ExpDecay, 7)).unwrap();
    assert_eq!(Dataset::load(&a).unwrap(), lib);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(dir.path(), "a.bin"), path(dir.path(), "b.bin"));
    ok(&["generate", "--n", "10", "--seed", "42", "--out", &a]);
    let out = Command::new(env!("CARGO_BIN_EXE_latentfit"))
        .args(["generate", "--n", "10", "--out", &b])
        .env("LATENTFIT_SEED", "42")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn missing_out_is_a_usage_error() {
    let out = latentfit(&["generate", "--kind", "exp", "--n", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn domain_errors_exit_1_and_name_the_precondition() {
    let out = latentfit(&["crlb", "--snr", "-1", "--tau", "1e-6"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("snr"));
}

#[test]
fn missing_or_malformed_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(latentfit(&["fit", "--data", "/nonexistent/d.bin"]).status.code(), Some(2));
    let junk = path(dir.path(), "junk.bin");
    std::fs::write(&junk, b"not a dataset").unwrap();
    assert_eq!(latentfit(&["fit", "--data", &junk]).status.code(), Some(2));
    assert_eq!(latentfit(&["generate", "--kind", "sine", "--out", &junk]).status.code(), Some(2));
}

#[test]
fn config_file_equivalent_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "c.json");
    std::fs::write(&cfg, r#"{"tau_mean": 2e-6, "tau_std": "0.3us", "n": 30, "seed": 5}"#).unwrap();
    let (a, b) = (path(dir.path(), "a.bin"), path(dir.path(), "b.bin"));
    ok(&["--config", &cfg, "generate", "--out", &a]);
    ok(&["generate", "--tau-mean", "2us", "--tau-std", "0.3e-6", "--n", "30", "--seed", "5", "--out", &b]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let mut spec = DatasetSpec { n: 30, ..DatasetSpec::training(SignalKind::ExpDecay, 5) };
    spec.dist.tau = ParamSpread { mean: 2e-6, std: 0.3e-6, ..spec.dist.tau };
    assert_eq!(Dataset::load(&a).unwrap(), make_dataset(&spec).unwrap());

    // Flags override the file.
    let c = path(dir.path(), "c.bin");
    ok(&["--config", &cfg, "generate", "--n", "12", "--out", &c]);
    assert_eq!(Dataset::load(&c).unwrap().len(), 12);
}

#[test]
fn empty_config_gives_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "c.json");
    std::fs::write(&cfg, "{}").unwrap();
    let (a, b) = (path(dir.path(), "a.bin"), path(dir.path(), "b.bin"));
    ok(&["--config", &cfg, "generate", "--out", &a]);
    ok(&["generate", "--out", &b]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "c.json");
    std::fs::write(&cfg, r#"{"snr": 32, "learnig_rate": 0.1}"#).unwrap();
    let out = latentfit(&["--config", &cfg, "crlb", "--tau", "1us"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnig_rate"));
}

#[test]
fn train_encode_fit_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = tiny_model(dir.path());
    let data_path = path(dir.path(), "d.bin");
    ok(&["generate", "--n", "8", "--snr", "2^10", "--seed", "9", "--out", &data_path]);

    let model = AutoencoderModel::load(&model_path).unwrap();
    let data = Dataset::load(&data_path).unwrap();
    let csv = ok(&["encode", "--model", &model_path, "--data", &data_path]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("signal_index,tau_s,true_tau_s"));
    for (line, s) in lines.zip(&data.signals) {
        let tau: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(tau, model.encode(s).unwrap().tau());
    }

    let fit = ok(&["fit", "--data", &data_path]);
    assert!(fit.starts_with("signal_index,status,iterations,residual_rms,amplitude,amplitude_sigma,tau_s,tau_sigma_s"));
    assert_eq!(fit.lines().count(), 9);

    let info: serde_json::Value = serde_json::from_str(&ok(&["--json", "model", "inspect", "--model", &model_path])).unwrap();
    assert_eq!(info["encoder_flops"], 100_100);
    assert_eq!(info["widths"], serde_json::json!([1000, 50, 1, 50, 1000]));

    let recon = path(dir.path(), "r.bin");
    let mse = ok(&["reconstruct", "--model", &model_path, "--data", &data_path, "--out", &recon]);
    assert_eq!(mse.lines().count(), 9);
    assert_eq!(Dataset::load(&recon).unwrap().len(), 8);
}

#[test]
fn train_progress_goes_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let model = path(dir.path(), "m.lfm");
    let report = path(dir.path(), "r.json");
    let out = latentfit(&[
        "train", "--datasets", "1", "--reps", "2", "--stage-epochs", "2,1,1", "--signals-per-dataset", "40",
        "--out", &model, "--report", &report,
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let err = String::from_utf8(out.stderr).unwrap();
    let progress: Vec<&str> = err.lines().filter(|l| l.starts_with("progress ")).collect();
    assert_eq!(progress.len(), 6);
    assert!(progress[0].starts_with("progress dataset=0 rep=0 stage=1 epoch=2 loss="));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["full_loss"].as_array().unwrap().len(), 4);
}

#[test]
fn eval_subcommands_write_csv_with_units() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model(dir.path());
    let sweep = ok(&["eval", "sweep", "--model", &model, "--snrs", "2^5,2^9", "--n-per-point", "4"]);
    assert!(sweep.starts_with("snr,method,n_ok,failures,flagged,tau_mean_s,tau_std_s,tau_crlb_s,tau_crlb_shape_s"));
    assert_eq!(sweep.lines().count(), 5);

    let scan = ok(&["eval", "scan", "--model", &model, "--n-per-point", "2"]);
    assert!(scan.starts_with("detuning,true_tau_s,ae_tau_mean_s"));
    assert_eq!(scan.lines().count(), 22);

    let hist = ok(&["eval", "hist", "--model", &model, "--n", "60", "--snr", "32"]);
    assert!(hist.starts_with("bin_center_s,count"));

    let bench = ok(&["eval", "bench", "--model", &model, "--repetitions", "1", "--noop"]);
    let lines: Vec<&str> = bench.lines().collect();
    assert!(lines[0].starts_with("network,flops,"));
    assert!(lines[1].starts_with("no-op,0,"));
    assert!(lines[2].starts_with("exp encoder 1000-50-1,100100,"));

    let out = latentfit(&["eval", "sweep", "--model", &model, "--freq", "3MHz"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_seed_same_csv() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model(dir.path());
    let args = ["eval", "sweep", "--model", &model, "--snrs", "32", "--n-per-point", "5", "--seed", "1"];
    assert_eq!(ok(&args), ok(&args));
    let json: serde_json::Value = serde_json::from_str(&ok(&[&["--json"][..], &args[..]].concat())).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 2);
}
