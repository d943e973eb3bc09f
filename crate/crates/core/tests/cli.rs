use std::path::PathBuf;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_worstcase"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs"]
        .iter()
        .collect()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn gen_matrix_prints_q() {
    let o = bin(&["gen-matrix", "--b", "4"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "row,q0,q1,q2,q3");
    assert_eq!(lines[1], "0,0.5,0.5,0.5,0.5");
    assert_eq!(lines.len(), 5);
    let o = bin(&["gen-matrix", "--b", "5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn odd_b_config_exits_two_naming_b() {
    let o = bin(&[
        "run",
        "--config",
        configs().join("odd_b.cfg").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("b = 7"));
}

#[test]
fn gaussian_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&[
        "run",
        "--config",
        configs().join("gaussian.cfg").to_str().unwrap(),
        "--trials",
        "5000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let conv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(conv.starts_with("b,encoder,distortion,stderr,gaussian_ref,ref_stderr\n"));
    assert_eq!(conv.lines().count(), 1 + 5 * 2);
    assert!(stdout(&o).lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn subcommands_emit_csv() {
    let o = bin(&[
        "distortion",
        "--family",
        "uniform",
        "--b",
        "8",
        "--trials",
        "2000",
        "--seed",
        "3",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("encoder,rate,distortion,stderr,trials\n0,1,"));

    let o = bin(&[
        "sweep-b", "--family", "laplace", "--b-list", "1,4", "--trials", "1000",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 3);

    let o = bin(&[
        "gaussianity",
        "--family",
        "rademacher",
        "--cov",
        "1, 0.5; 0.5, 1",
        "--b-list",
        "1,16",
        "--trials",
        "2000",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("b,direction_id,ks_stat,n_samples,seed\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 4);

    let o = bin(&[
        "lindeberg",
        "--family",
        "rademacher",
        "--b-list",
        "256",
        "--row",
        "3",
        "--trials",
        "1000",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "b,row,epsilon,value,s_b2\n256,3,0.1,0,256\n");

    let o = bin(&[
        "lindeberg",
        "--t",
        "1,-1",
        "--cov",
        "1, 0.8; 0.8, 1",
        "--b-list",
        "4",
        "--trials",
        "1000",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = bin(&["rect-audit", "--delta", "0.01", "--trials", "20000"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).starts_with("item,encoder,value,stderr,bound\nevent_a,all,"));
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(
        bin(&["distortion", "--cov", "1, 2; 3, 1"]).status.code(),
        Some(2)
    );
    assert_eq!(
        bin(&["distortion", "--family", "cauchy"]).status.code(),
        Some(2)
    );
    assert_eq!(
        bin(&["run", "--config", "/nonexistent.cfg"]).status.code(),
        Some(2)
    );
}

#[test]
fn seeded_output_is_stable() {
    let args = [
        "sweep-b",
        "--family",
        "rademacher",
        "--b-list",
        "4,16",
        "--trials",
        "500",
        "--seed",
        "9",
    ];
    assert_eq!(stdout(&bin(&args)), stdout(&bin(&args)));
}
