//! End-to-end tests of the `imrestore` binary and the file formats it uses.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use imrestore::grid::ImageGrid;
use imrestore::io::{read_image, read_psf, write_image, LOG_HEADER};
use imrestore::phantom::Phantom;
use tempfile::TempDir;

fn imrestore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imrestore"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture {
            dir: TempDir::new().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// A 48² portrait phantom on disk.
    fn clean(&self) -> PathBuf {
        let p = self.path("clean.pgm");
        write_image(&Phantom::Portrait.render(48).unwrap(), &p).unwrap();
        p
    }
}

#[test]
fn psf_command_writes_unsharp_zero_matrix() {
    let fx = Fixture::new();
    let out = fx.path("k.txt");
    let res = imrestore(&["psf", "--type", "unsharp", "--alpha", "0", "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text, "0 -1 0\n-1 5 -1\n0 -1 0\n");
    let psf = read_psf(&out).unwrap();
    assert_eq!(psf.sum(), 1.0);
}

#[test]
fn psf_command_accepts_compact_spec() {
    let res = imrestore(&["psf", "--spec", "motion:5:0"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn noise_is_reproducible_by_seed() {
    let fx = Fixture::new();
    let clean = fx.clean();
    let (a, b, c) = (fx.path("a.pgm"), fx.path("b.pgm"), fx.path("c.pgm"));
    for (out, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let res = imrestore(&["noise", "-i", path_str(&clean), "--eta", "10", "--seed", seed, "-o", path_str(out)]);
        assert!(res.status.success());
    }
    let (ba, bb, bc) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), std::fs::read(&c).unwrap());
    assert_eq!(ba, bb);
    assert_ne!(ba, bc);
}

#[test]
fn denoise_with_zero_eta_returns_input_unchanged() {
    let fx = Fixture::new();
    let clean = fx.clean();
    let out = fx.path("out.pgm");
    let res = imrestore(&["denoise", "-i", path_str(&clean), "--eta", "0", "-o", path_str(&out)]);
    assert!(res.status.success());
    assert_eq!(std::fs::read(&clean).unwrap(), std::fs::read(&out).unwrap());
}

#[test]
fn denoise_writes_log_and_stage_images_reproducibly() {
    let fx = Fixture::new();
    let clean = fx.clean();
    let stages = fx.path("stages");
    std::fs::create_dir(&stages).unwrap();
    let run = |log: &Path, out: &Path| {
        imrestore(&[
            "denoise", "-i", path_str(&clean), "--eta", "10", "--seed", "3", "--method", "hybrid",
            "--policy", "sd", "--log", path_str(log), "--stages", path_str(&stages), "-o", path_str(out),
        ])
    };
    let (log1, log2) = (fx.path("1.csv"), fx.path("2.csv"));
    let (out1, out2) = (fx.path("1.pgm"), fx.path("2.pgm"));
    assert!(run(&log1, &out1).status.success());
    assert!(run(&log2, &out2).status.success());

    let text = std::fs::read_to_string(&log1).unwrap();
    assert_eq!(text, std::fs::read_to_string(&log2).unwrap());
    assert_eq!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(LOG_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.len() > 3);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 5);
        assert_eq!(row[0].parse::<usize>().unwrap(), k);
    }
    // The implicit stage has no step size.
    assert_eq!(rows.last().unwrap()[1], "");
    assert!(stages.join("0-denoise.pgm").is_file());
    assert!(stages.join("1-implicit.pgm").is_file());
}

#[test]
fn blur_then_deblur_improves_psnr() {
    let fx = Fixture::new();
    let clean = fx.clean();
    let (blurred, restored) = (fx.path("b.pgm"), fx.path("r.pgm"));
    let res = imrestore(&["blur", "-i", path_str(&clean), "--psf", "gaussian:1:5", "-o", path_str(&blurred)]);
    assert!(res.status.success());
    let res = imrestore(&[
        "deblur", "-i", path_str(&blurred), "--psf", "gaussian:1:5", "--beta", "1e-4", "--policy", "lsd",
        "--tol", "1e-4", "-o", path_str(&restored),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let psnr_of = |p: &Path| {
        let res = imrestore(&["metrics", "-i", path_str(p), "-r", path_str(&clean)]);
        assert!(res.status.success());
        let text = String::from_utf8(res.stdout).unwrap();
        let line = text.lines().find(|l| l.starts_with("psnr")).unwrap().to_owned();
        line.split_whitespace().nth(1).unwrap().parse::<f64>().unwrap()
    };
    assert!(psnr_of(&restored) > psnr_of(&blurred));
}

#[test]
fn restore_runs_three_stages() {
    let fx = Fixture::new();
    let clean = fx.clean();
    let data = fx.path("d.pgm");
    let out = fx.path("r.pgm");
    let stages = fx.path("s");
    std::fs::create_dir(&stages).unwrap();
    assert!(imrestore(&["blur", "-i", path_str(&clean), "--psf", "disk:2", "--eta", "5", "--seed", "1", "-o", path_str(&data)])
        .status
        .success());
    let res = imrestore(&[
        "restore", "-i", path_str(&data), "--psf", "disk:2", "--beta", "1e-3", "--stages", path_str(&stages),
        "-o", path_str(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["0-denoise.pgm", "1-deblur.pgm", "2-sharpen.pgm"] {
        assert!(stages.join(name).is_file(), "{name}");
    }
    assert_eq!(read_image(&out).unwrap(), read_image(stages.join("2-sharpen.pgm")).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(imrestore(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(imrestore(&["deblur", "--nonsense"]).status.code(), Some(2));
    assert_eq!(imrestore(&[]).status.code(), Some(2));
}

#[test]
fn validation_errors_exit_with_one_and_write_nothing() {
    let fx = Fixture::new();
    let clean = fx.clean();
    let out = fx.path("never.pgm");
    let log = fx.path("never.csv");
    let cases: Vec<Vec<&str>> = vec![
        vec!["deblur", "-i", path_str(&clean), "--psf", "motion:5:30", "--beta", "-1", "-o", path_str(&out)],
        vec!["deblur", "-i", path_str(&clean), "--psf", "motion:5:30", "--beta", "1e-4", "--tol", "0", "-o", path_str(&out)],
        vec!["deblur", "-i", path_str(&clean), "--psf", "nonsense:1", "--beta", "1e-4", "-o", path_str(&out)],
        vec!["denoise", "-i", path_str(&clean), "--policy", "fast", "--log", path_str(&log), "-o", path_str(&out)],
        vec!["denoise", "-i", path_str(&clean), "--eta", "-5", "-o", path_str(&out)],
        vec!["restore", "-i", path_str(&clean), "--psf", "disk:2", "--beta", "1e-3", "--pre-tol", "2", "-o", path_str(&out)],
        vec!["noise", "-i", "/definitely/missing.pgm", "--eta", "5", "-o", path_str(&out)],
    ];
    for args in cases {
        let res = imrestore(&args);
        assert_eq!(res.status.code(), Some(1), "{args:?}");
        let stderr = String::from_utf8(res.stderr).unwrap();
        assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
        assert!(!out.exists() && !log.exists(), "{args:?} wrote output");
    }
}

#[test]
fn commands_do_not_modify_their_input() {
    let fx = Fixture::new();
    let clean = fx.clean();
    let before = std::fs::read(&clean).unwrap();
    let out = fx.path("o.pgm");
    assert!(imrestore(&["denoise", "-i", path_str(&clean), "--max-iters", "5", "-o", path_str(&out)])
        .status
        .success());
    assert_eq!(std::fs::read(&clean).unwrap(), before);
}

#[test]
fn pgm_files_round_trip_through_disk() {
    let fx = Fixture::new();
    let img = ImageGrid::from_fn(16, |i, j| ((i * 16 + j) % 256) as f64).unwrap();
    let p = fx.path("q.pgm");
    write_image(&img, &p).unwrap();
    assert_eq!(read_image(&p).unwrap(), img);
    let bytes = std::fs::read(&p).unwrap();
    assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(bytes.len(), 13 + 256);
}
