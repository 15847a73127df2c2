//! Labelled image sets: IDX (MNIST), CIFAR binary batches, and `<class>/<image>.png` trees.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::read_png;
use crate::nn::seeded_rng;
use crate::tensor::{Image8, Tensor};

/// Images in `[0,1]`, stored flat, with integer labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    shape: (usize, usize, usize),
    pixels: Vec<f32>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(shape: (usize, usize, usize), pixels: Vec<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let per = shape.0 * shape.1 * shape.2;
        if per == 0 || pixels.len() != per * labels.len() {
            return Err(Error::Shape(format!("{} pixels for {} labels of shape {shape:?}", pixels.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Invalid(format!("label {bad} outside [0,{num_classes})")));
        }
        Ok(Self { shape, pixels, labels, num_classes })
    }

    pub fn from_images(images: &[Image8], labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Invalid("no images".into()))?;
        let shape = first.dims();
        let mut pixels = Vec::with_capacity(images.len() * first.pixels.len());
        for img in images {
            if img.dims() != shape {
                return Err(Error::Shape(format!("mixed image sizes {:?} vs {shape:?}", img.dims())));
            }
            pixels.extend(img.pixels.iter().map(|&p| p as f32 / 255.0));
        }
        Self::new(shape, pixels, labels, num_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    fn per(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    pub fn pixels(&self, i: usize) -> &[f32] {
        let per = self.per();
        &self.pixels[i * per..(i + 1) * per]
    }

    /// Image `i` as a `[1,c,h,w]` tensor.
    pub fn image(&self, i: usize) -> Tensor {
        let (c, h, w) = self.shape;
        Tensor::new(&[1, c, h, w], self.pixels(i).to_vec()).expect("per-image length")
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let (c, h, w) = self.shape;
        let mut data = Vec::with_capacity(idx.len() * self.per());
        for &i in idx {
            data.extend_from_slice(self.pixels(i));
        }
        let t = Tensor::new(&[idx.len(), c, h, w], data).expect("batch length");
        (t, idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut pixels = Vec::with_capacity(idx.len() * self.per());
        for &i in idx {
            pixels.extend_from_slice(self.pixels(i));
        }
        Dataset {
            shape: self.shape,
            pixels,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn head(&self, n: usize) -> Dataset {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    /// Seeded permutation of the indices.
    pub fn shuffled_indices(&self, seed: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seeded_rng(seed));
        idx
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Data { path: path.to_path_buf(), msg: format!("gzip: {e}") })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads an IDX image file (magic 0x803) and label file (magic 0x801).
pub fn load_idx(images: &Path, labels: &Path, num_classes: usize) -> Result<Dataset> {
    let bad = |p: &Path, msg: String| Error::Data { path: p.to_path_buf(), msg };
    let ib = read_maybe_gz(images)?;
    if ib.len() < 16 || be_u32(&ib, 0) != 0x803 {
        return Err(bad(images, "not an IDX3 image file".into()));
    }
    let (n, h, w) = (be_u32(&ib, 4) as usize, be_u32(&ib, 8) as usize, be_u32(&ib, 12) as usize);
    if ib.len() != 16 + n * h * w {
        return Err(bad(images, format!("truncated: expected {} bytes, found {}", 16 + n * h * w, ib.len())));
    }
    let lb = read_maybe_gz(labels)?;
    if lb.len() < 8 || be_u32(&lb, 0) != 0x801 {
        return Err(bad(labels, "not an IDX1 label file".into()));
    }
    let nl = be_u32(&lb, 4) as usize;
    if lb.len() != 8 + nl {
        return Err(bad(labels, format!("truncated: expected {} bytes, found {}", 8 + nl, lb.len())));
    }
    if nl != n {
        return Err(bad(labels, format!("{nl} labels for {n} images")));
    }
    let labels_v: Vec<usize> = lb[8..].iter().map(|&l| l as usize).collect();
    if let Some(&l) = labels_v.iter().find(|&&l| l >= num_classes) {
        return Err(bad(labels, format!("label {l} out of range")));
    }
    let pixels = ib[16..].iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new((1, h, w), pixels, labels_v, num_classes)
}

fn find_idx(dir: &Path, stem: &str) -> Result<PathBuf> {
    for cand in [format!("{stem}.gz"), stem.to_string()] {
        let p = dir.join(cand);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Data { path: dir.join(stem), msg: "missing IDX file".into() })
}

/// `(train, test)` from a directory holding the four MNIST IDX files.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(&find_idx(dir, "train-images-idx3-ubyte")?, &find_idx(dir, "train-labels-idx1-ubyte")?, 10)?;
    let test = load_idx(&find_idx(dir, "t10k-images-idx3-ubyte")?, &find_idx(dir, "t10k-labels-idx1-ubyte")?, 10)?;
    Ok((train, test))
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

pub fn load_cifar_batch(path: &Path) -> Result<Dataset> {
    let b = fs::read(path).map_err(|e| Error::io(path, e))?;
    if b.is_empty() || b.len() % CIFAR_RECORD != 0 {
        return Err(Error::Data { path: path.to_path_buf(), msg: format!("length {} is not a multiple of {CIFAR_RECORD}", b.len()) });
    }
    let mut labels = Vec::new();
    let mut pixels = Vec::with_capacity(b.len());
    for rec in b.chunks_exact(CIFAR_RECORD) {
        if rec[0] >= 10 {
            return Err(Error::Data { path: path.to_path_buf(), msg: format!("label {} out of range", rec[0]) });
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&p| p as f32 / 255.0));
    }
    Dataset::new((3, 32, 32), pixels, labels, 10)
}

/// `(train, test)` from `data_batch_*.bin` and `test_batch.bin`.
pub fn load_cifar_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut parts = Vec::new();
    for i in 1..=5 {
        let p = dir.join(format!("data_batch_{i}.bin"));
        if p.exists() {
            parts.push(load_cifar_batch(&p)?);
        }
    }
    if parts.is_empty() {
        return Err(Error::Data { path: dir.to_path_buf(), msg: "no data_batch_*.bin files".into() });
    }
    let test = load_cifar_batch(&dir.join("test_batch.bin"))?;
    Ok((concat(&parts)?, test))
}

pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
    let first = parts.first().ok_or_else(|| Error::Invalid("nothing to concatenate".into()))?;
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in parts {
        if p.shape != first.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", p.shape, first.shape)));
        }
        pixels.extend_from_slice(&p.pixels);
        labels.extend_from_slice(&p.labels);
    }
    Dataset::new(first.shape, pixels, labels, first.num_classes)
}

/// `<root>/<class>/<image>.png`; labels follow sorted class-directory names.
pub fn load_png_tree(root: &Path) -> Result<(Dataset, Vec<String>)> {
    let mut classes: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(Error::Data { path: root.to_path_buf(), msg: "no class directories".into() });
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut shape = None;
    for (label, dir) in classes.iter().enumerate() {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        for f in files {
            let img = read_png(&f)?;
            match shape {
                None => shape = Some(img.dims()),
                Some(s) if s != img.dims() => {
                    return Err(Error::Data { path: f, msg: format!("size {:?} differs from {s:?}", img.dims()) })
                }
                _ => {}
            }
            images.push(img);
            labels.push(label);
        }
    }
    let names = classes.iter().map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect();
    Ok((Dataset::from_images(&images, labels, classes.len())?, names))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar,
    Png,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub path: PathBuf,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub split_seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Mnist,
            path: PathBuf::from("data/mnist-10k"),
            train: 8500,
            val: 500,
            test: 1000,
            split_seed: 17,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Loads and splits. Sources with a separate test file draw val/test from
/// it; a PNG tree is split from one shuffled pool. Sizes are caps.
pub fn ingest(spec: &DatasetSpec) -> Result<Splits> {
    let (train_src, test_src) = match spec.kind {
        DatasetKind::Mnist => load_mnist_dir(&spec.path)?,
        DatasetKind::Cifar => load_cifar_dir(&spec.path)?,
        DatasetKind::Png => {
            let (all, _) = load_png_tree(&spec.path)?;
            let idx = all.shuffled_indices(spec.split_seed);
            let n_train = spec.train.min(all.len());
            (all.subset(&idx[..n_train]), all.subset(&idx[n_train..]))
        }
    };
    let ti = train_src.shuffled_indices(spec.split_seed);
    let train = train_src.subset(&ti[..spec.train.min(ti.len())]);
    let si = test_src.shuffled_indices(spec.split_seed.wrapping_add(1));
    let nv = spec.val.min(si.len());
    let nt = spec.test.min(si.len() - nv);
    let val = test_src.subset(&si[..nv]);
    let test = test_src.subset(&si[nv..nv + nt]);
    if train.is_empty() {
        return Err(Error::Data { path: spec.path.clone(), msg: "empty training split".into() });
    }
    Ok(Splits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(n: usize) -> (Vec<u8>, Vec<u8>) {
        let mut im = vec![0, 0, 8, 3];
        for v in [n as u32, 2, 3] {
            im.extend_from_slice(&v.to_be_bytes());
        }
        im.extend((0..n * 6).map(|i| i as u8));
        let mut lb = vec![0, 0, 8, 1];
        lb.extend_from_slice(&(n as u32).to_be_bytes());
        lb.extend((0..n).map(|i| (i % 10) as u8));
        (im, lb)
    }

    #[test]
    fn idx_parse_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let (im, lb) = idx_bytes(4);
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, &im).unwrap();
        fs::write(&lp, &lb).unwrap();
        let d = load_idx(&ip, &lp, 10).unwrap();
        assert_eq!((d.len(), d.shape()), (4, (1, 2, 3)));
        assert_eq!(d.pixels(1)[0], 6.0 / 255.0);
        fs::write(&ip, &im[..im.len() - 1]).unwrap();
        let err = load_idx(&ip, &lp, 10).unwrap_err().to_string();
        assert!(err.contains(&ip.display().to_string()), "{err}");
    }

    #[test]
    fn png_tree_labels_by_sorted_class() {
        let dir = tempfile::tempdir().unwrap();
        for (ci, class) in ["zeta", "alpha", "mid"].iter().enumerate() {
            let cd = dir.path().join(class);
            fs::create_dir(&cd).unwrap();
            for j in 0..10 {
                let img = Image8::new(1, 4, 4, vec![(ci * 10 + j) as u8; 16]).unwrap();
                crate::imageio::write_png(&cd.join(format!("{j}.png")), &img).unwrap();
            }
        }
        let (d, names) = load_png_tree(dir.path()).unwrap();
        assert_eq!(d.len(), 30);
        assert_eq!(names, ["alpha", "mid", "zeta"]);
        let mut seen: Vec<usize> = d.labels().to_vec();
        seen.dedup();
        assert_eq!(seen, [0, 1, 2]);
        // "alpha" was written with ci = 1.
        assert_eq!(d.pixels(0)[0], 10.0 / 255.0);
    }

    #[test]
    fn png_tree_rejects_mixed_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let cd = dir.path().join("a");
        fs::create_dir(&cd).unwrap();
        crate::imageio::write_png(&cd.join("0.png"), &Image8::new(1, 4, 4, vec![0; 16]).unwrap()).unwrap();
        crate::imageio::write_png(&cd.join("1.png"), &Image8::new(1, 5, 4, vec![0; 20]).unwrap()).unwrap();
        let err = load_png_tree(dir.path()).unwrap_err().to_string();
        assert!(err.contains("1.png"), "{err}");
    }

    #[test]
    fn cifar_rejects_bad_length() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        fs::write(&p, vec![0u8; CIFAR_RECORD * 2 + 5]).unwrap();
        assert!(load_cifar_batch(&p).is_err());
        fs::write(&p, vec![3u8; CIFAR_RECORD * 2]).unwrap();
        let d = load_cifar_batch(&p).unwrap();
        assert_eq!((d.len(), d.shape(), d.label(1)), (2, (3, 32, 32), 3));
    }

    #[test]
    fn labels_out_of_range_rejected() {
        assert!(Dataset::new((1, 1, 1), vec![0.0; 2], vec![0, 10], 10).is_err());
    }
}
