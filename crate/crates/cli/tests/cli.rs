use std::path::Path;
use std::process::{Command, Output};

fn mhss(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhss"))
        .current_dir(dir)
        .env_remove("MHSS_OUTPUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn generate_fit_sample_diagnose_compare() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = mhss(
        d,
        &[
            "generate", "--n", "500", "--d", "3", "--seed", "2", "--out", "data.csv", "--beta",
            "beta.txt",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    assert_eq!(
        std::fs::read_to_string(d.join("beta.txt"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let o = mhss(d, &["fit-mode", "--data", "data.csv", "--cache", "c.bin"]);
    assert!(o.status.success(), "{o:?}");
    let theta: Vec<f64> = stdout(&o)
        .trim()
        .trim_matches(['[', ']'])
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(theta.len(), 3);
    assert!(d.join("c.bin").exists());

    let o = mhss(
        d,
        &[
            "sample",
            "--data",
            "data.csv",
            "--cache",
            "c.bin",
            "--algorithm",
            "TUNA,MHSS1,MHSS2,SMH1,SMH2,RWM",
            "--iterations",
            "300",
            "--output",
            "out",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let table = stdout(&o);
    assert_eq!(table.lines().count(), 7, "{table}");
    assert!(table.starts_with("algorithm,acceptance_rate,mean_batch,ess_per_second,ess_per_batch"));

    let o = mhss(d, &["diagnose", "out/MHSS1.samples.csv"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("\"algorithm\": \"MHSS1\""));

    let o = mhss(
        d,
        &["compare", "out/MHSS1.metrics.json", "out/RWM.metrics.json"],
    );
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn config_file_env_output_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("exp.ini"),
        "[experiment]\nn = 200\nd = 2\noutput = from_file\n\n[chain.a]\nalgorithm = MHSS2\niterations = 100\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mhss"))
        .current_dir(d)
        .env("MHSS_OUTPUT_DIR", "from_env")
        .args(["sample", "--config", "exp.ini"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
    assert!(d.join("from_env/a.samples.csv").exists());
    assert!(!d.join("from_file").exists());

    let o = mhss(
        d,
        &[
            "sample",
            "--config",
            "exp.ini",
            "--iterations",
            "50",
            "--burn-in",
            "0",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let rows = std::fs::read_to_string(d.join("from_file/a.samples.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 51);
}

#[test]
fn identical_runs_write_identical_samples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["r1", "r2"] {
        let o = mhss(
            d,
            &[
                "sample",
                "--n",
                "300",
                "--d",
                "3",
                "--algorithm",
                "MHSS1,SMH2",
                "--iterations",
                "200",
                "--seed",
                "5",
                "--output",
                out,
            ],
        );
        assert!(o.status.success(), "{o:?}");
    }
    for f in ["MHSS1.samples.csv", "SMH2.samples.csv"] {
        assert_eq!(
            std::fs::read(d.join("r1").join(f)).unwrap(),
            std::fs::read(d.join("r2").join(f)).unwrap()
        );
    }
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        vec!["sample", "--n", "50", "--d", "2"],
        vec!["sample", "--algorithm", "NUTS"],
        vec!["sample", "--algorithm", "MHSS1", "--gamma", "3"],
        vec![
            "sample",
            "--algorithm",
            "TUNA",
            "--model",
            "probit",
            "--n",
            "50",
            "--d",
            "2",
            "--iterations",
            "10",
        ],
    ] {
        let o = mhss(d, &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {o:?}");
    }
    std::fs::write(d.join("bad.csv"), "a,y\n1,1\n2,2\n").unwrap();
    let o = mhss(d, &["fit-mode", "--data", "bad.csv"]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
    let o = mhss(d, &["diagnose", "missing.csv"]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
}
