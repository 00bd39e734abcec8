#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cellxai::imagestore::{encode_bmp, RawImage};
use cellxai::model::{Parameters, ReferenceNet, ReferenceNetConfig};
use cellxai::RandomStream;

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_cellxai"))
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin()).current_dir(dir).args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Noisy BMP whose channels sit in `[lo, hi]`.
pub fn noisy_bmp(h: usize, w: usize, lo: u8, hi: u8, seed: u64) -> Vec<u8> {
    let mut rng = RandomStream::new(seed);
    let span = (hi - lo) as usize + 1;
    let data = (0..h * w * 3).map(|_| lo + rng.below(span) as u8).collect();
    encode_bmp(&RawImage::new(h, w, data).unwrap())
}

/// `all/` holds bright cells, `hem/` dark ones.
pub fn bright_dark_tree(root: &Path, per_class: usize) {
    for (dir, lo, hi, offset) in [("all", 190u8, 255u8, 0u64), ("hem", 0, 65, 10_000)] {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).unwrap();
        for i in 0..per_class {
            let name = format!("UID_{}_{i}_cell.bmp", i % 5);
            std::fs::write(d.join(name), noisy_bmp(24, 24, lo, hi, offset + i as u64)).unwrap();
        }
    }
}

/// Cell-like test image: a dark textured disc on a light textured field.
pub fn cell_bmp(seed: u64) -> Vec<u8> {
    let (h, w) = (64, 64);
    let mut rng = RandomStream::new(seed);
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let inside = ((y as f64 - 30.0).powi(2) + (x as f64 - 34.0).powi(2)).sqrt() < 14.0;
            let n = rng.below(24) as u8;
            let px = if inside { [90 + n, 40 + n, 130 + n] } else { [215 + n, 180 + n, 190 + n] };
            data.extend_from_slice(&px);
        }
    }
    encode_bmp(&RawImage::new(h, w, data).unwrap())
}

/// Untrained reference network parameters, written as JSON.
pub fn reference_params(path: &Path, seed: u64) {
    let cfg = ReferenceNetConfig {
        input_side: 8,
        hidden_units: 6,
        seed,
        ..Default::default()
    };
    let mut rng = RandomStream::new(seed);
    let net = ReferenceNet {
        params: Parameters::init(cfg.input_dim(), cfg.hidden_units, &mut rng),
        config: cfg,
    };
    std::fs::write(path, net.to_json().unwrap()).unwrap();
}

/// Manifest with synthetic records: `counts[c]` records of class `c`.
pub fn synthetic_manifest(path: &Path, counts: &[usize]) {
    let total: usize = counts.iter().sum();
    let mut text = format!(
        "{{\"schema_version\":1,\"hash_algorithm\":\"sha256\",\"created_at\":\"2020-01-01T00:00:00Z\",\"record_count\":{total}}}\n"
    );
    let mut k = 0usize;
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let digest = format!("{k:064x}");
            text.push_str(&format!(
                "{{\"id\":\"{}\",\"path\":\"c{c}/{k}.bmp\",\"label\":{c},\"digest\":\"{digest}\",\"patient_id\":null}}\n",
                &digest[48..]
            ));
            k += 1;
        }
    }
    std::fs::write(path, text).unwrap();
}
