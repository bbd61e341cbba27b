#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hazeforge::codec::encode_png;
use hazeforge::depth_io::{write_pfm, write_rawf32, Endian};
use hazeforge::Raster;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub struct Fixture {
    pub root: tempfile::TempDir,
}

impl Fixture {
    pub fn images(&self) -> PathBuf {
        self.root.path().join("images")
    }

    pub fn depth(&self) -> PathBuf {
        self.root.path().join("depth")
    }

    pub fn labels(&self) -> PathBuf {
        self.root.path().join("labels")
    }
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Raster<u8> {
    let data = (0..w * h * 3).map(|_| rng.random::<u8>()).collect();
    Raster::from_vec(w, h, 3, data).unwrap()
}

/// Smooth-ish positive depth with a far top and near bottom.
pub fn random_depth(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Raster<f32> {
    let data = (0..w * h)
        .map(|i| {
            let y = (i / w) as f32 / h as f32;
            (1.0 - y) * 40.0 + rng.random_range(0.1f32..2.0)
        })
        .collect();
    Raster::from_vec(w, h, 1, data).unwrap()
}

/// `n` samples of `w`×`h`, spread over two subdirectories, alternating
/// PFM and RAWF32 depth files, each with a YOLO label file.
pub fn build_fixture(n: usize, w: usize, h: usize, seed: u64) -> Fixture {
    let root = tempfile::tempdir().unwrap();
    let fx = Fixture { root };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let stem = format!("seq{}/frame_{i:04}", i % 2);
        let img = random_image(&mut rng, w, h);
        let depth = random_depth(&mut rng, w, h);
        let img_path = fx.images().join(format!("{stem}.png"));
        fs::create_dir_all(img_path.parent().unwrap()).unwrap();
        fs::write(&img_path, encode_png(&img).unwrap()).unwrap();

        let depth_path = fx.depth().join(format!("{stem}.{}", if i % 2 == 0 { "pfm" } else { "f32" }));
        fs::create_dir_all(depth_path.parent().unwrap()).unwrap();
        let mut buf = Vec::new();
        if i % 2 == 0 {
            write_pfm(&depth, if i % 4 == 0 { Endian::Little } else { Endian::Big }, &mut buf).unwrap();
        } else {
            write_rawf32(&depth, &mut buf).unwrap();
        }
        fs::write(&depth_path, buf).unwrap();

        let label_path = fx.labels().join(format!("{stem}.txt"));
        fs::create_dir_all(label_path.parent().unwrap()).unwrap();
        let cls = rng.random_range(0..3);
        fs::write(&label_path, format!("{cls} 0.5 0.5 0.25 0.125\n1 0.2 0.3 0.1 0.1\n")).unwrap();
    }
    fx
}

/// Relative path → SHA-256 of contents, for every file under `dir`.
pub fn tree_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in walkdir::WalkDir::new(dir) {
        let entry = entry.unwrap();
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
            let digest = Sha256::digest(fs::read(entry.path()).unwrap());
            out.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect());
        }
    }
    out
}

/// Hash of the whole tree.
pub fn tree_hash(dir: &Path) -> String {
    let mut h = Sha256::new();
    for (k, v) in tree_hashes(dir) {
        h.update(k.as_bytes());
        h.update([0]);
        h.update(v.as_bytes());
        h.update([0]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
