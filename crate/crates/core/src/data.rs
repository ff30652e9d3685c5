//! Data pipeline: manifest-driven image datasets, value mapping, bilinear
//! resampling, batch sampling, and a synthetic face-like corpus for
//! self-contained experiments.
//!
//! Images live in memory as (3, h, w) f64 arrays in [-1, 1]. The manifest is
//! a CSV with the exact header `path,identity_id,split`; paths are resolved
//! relative to the manifest's directory, so a dataset directory is portable.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::{Array3, ArrayD, ArrayViewD, Axis, Ix3};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestRecord {
    /// Absolute path after resolution against the manifest directory.
    pub path: PathBuf,
    pub identity_id: u64,
    pub split: Split,
}

/// Parse `path,identity_id,split` records. Errors cite 1-based line numbers.
pub fn load_manifest(manifest_path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", manifest_path.display())))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "path,identity_id,split" => {}
        Some((_, header)) => {
            return Err(Error::Manifest(format!(
                "line 1: expected header 'path,identity_id,split', got '{header}'"
            )));
        }
        None => return Err(Error::Manifest("manifest is empty".into())),
    }

    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Manifest(format!(
                "line {lineno}: expected 3 comma-separated fields, got {}",
                fields.len()
            )));
        }
        let identity_id: u64 = fields[1].parse().map_err(|_| {
            Error::Manifest(format!("line {lineno}: identity_id '{}' is not a non-negative integer", fields[1]))
        })?;
        let split = Split::parse(fields[2]).ok_or_else(|| {
            Error::Manifest(format!(
                "line {lineno}: unknown split '{}' (expected 'train' or 'val')",
                fields[2]
            ))
        })?;
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::Manifest(format!("line {lineno}: duplicate path '{}'", fields[0])));
        }
        records.push(ManifestRecord {
            path: dir.join(fields[0]),
            identity_id,
            split,
        });
    }
    if records.is_empty() {
        return Err(Error::Manifest("manifest has a header but no records".into()));
    }
    Ok(records)
}

/// Map 8-bit RGB to a (3, h, w) array in [-1, 1].
pub fn image_to_array(img: &RgbImage) -> Array3<f64> {
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((3, h as usize, w as usize));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px.0[c] as f64 / 127.5 - 1.0;
        }
    }
    out
}

/// Map a (3, h, w) array in [-1, 1] back to 8-bit RGB: round((v+1)*127.5),
/// clamped. The exact inverse of `image_to_array` on in-range values.
pub fn array_to_image(arr: &ArrayViewD<f64>) -> Result<RgbImage> {
    let a = arr
        .view()
        .into_dimensionality::<Ix3>()
        .map_err(|_| Error::Shape("image array must be (3, h, w)".into()))?;
    let (c, h, w) = a.dim();
    if c != 3 {
        return Err(Error::Shape(format!("image array must have 3 channels, got {c}")));
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|ch| ((a[[ch, y, x]] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8);
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    Ok(img)
}

/// Snap a [-1, 1] image onto the 8-bit lattice: the value a viewer of the
/// exported PNG would see. Idempotent.
pub fn quantize_to_8bit(a: &Array3<f64>) -> Array3<f64> {
    a.mapv(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) / 127.5 - 1.0)
}

/// Center-crop to `size` x `size` (no resampling) and map to [-1, 1].
/// Images smaller than the target are refused rather than padded.
pub fn prepare_hr(img: &RgbImage, size: usize) -> Result<Array3<f64>> {
    let (w, h) = img.dimensions();
    if (w as usize) < size || (h as usize) < size {
        return Err(Error::Data(format!(
            "image is {w}x{h}, smaller than the {size}x{size} target"
        )));
    }
    let x0 = (w as usize - size) / 2;
    let y0 = (h as usize - size) / 2;
    let full = image_to_array(img);
    Ok(full
        .slice(ndarray::s![.., y0..y0 + size, x0..x0 + size])
        .to_owned())
}

/// Bilinear resampling with half-pixel centers (align-corners off) and edge
/// clamping, the convention under which 4x downsampling of a divisible image
/// averages the central 2x2 block of each 4x4 cell.
pub fn bilinear_resize(src: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, h, w) = src.dim();
    assert!(out_h > 0 && out_w > 0, "empty resize target");
    let mut out = Array3::zeros((c, out_h, out_w));
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let top = src[[ch, y0, x0]] * (1.0 - wx) + src[[ch, y0, x1]] * wx;
                let bot = src[[ch, y1, x0]] * (1.0 - wx) + src[[ch, y1, x1]] * wx;
                out[[ch, oy, ox]] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

/// Downsample by an integer factor; extents must divide evenly.
pub fn downsample_bilinear(hr: &Array3<f64>, factor: usize) -> Result<Array3<f64>> {
    let (_, h, w) = hr.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Data(format!(
            "cannot downsample {h}x{w} by factor {factor}"
        )));
    }
    Ok(bilinear_resize(hr, h / factor, w / factor))
}

/// Upsample by an integer factor; the baseline the generator competes with.
pub fn bilinear_upsample(lr: &Array3<f64>, factor: usize) -> Array3<f64> {
    let (_, h, w) = lr.dim();
    bilinear_resize(lr, h * factor, w * factor)
}

/// Stack (3, h, w) images into an (N, 3, h, w) batch.
pub fn stack_batch(images: &[&Array3<f64>]) -> ArrayD<f64> {
    assert!(!images.is_empty(), "empty batch");
    let views: Vec<_> = images.iter().map(|i| i.view()).collect();
    ndarray::stack(Axis(0), &views).expect("uniform image shapes").into_dyn()
}

/// In-memory dataset: high-resolution crops, their low-resolution
/// counterparts, and contiguous class labels.
pub struct Dataset {
    pub records: Vec<ManifestRecord>,
    pub hr: Vec<Array3<f64>>,
    pub lr: Vec<Array3<f64>>,
    /// Contiguous class index per record, shared across splits.
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub input_size: usize,
    pub scale: usize,
}

impl Dataset {
    pub fn load(manifest_path: &Path, input_size: usize, scale: usize) -> Result<Dataset> {
        let records = load_manifest(manifest_path)?;
        let identities: BTreeSet<u64> = records.iter().map(|r| r.identity_id).collect();
        let class_of: BTreeMap<u64, usize> = identities.iter().enumerate().map(|(i, &id)| (id, i)).collect();

        let mut hr = Vec::with_capacity(records.len());
        let mut lr = Vec::with_capacity(records.len());
        let mut labels = Vec::with_capacity(records.len());
        let mut train_indices = Vec::new();
        let mut val_indices = Vec::new();
        for (i, rec) in records.iter().enumerate() {
            let img = image::open(&rec.path)
                .map_err(|e| Error::Data(format!("cannot open {}: {e}", rec.path.display())))?
                .to_rgb8();
            let h = prepare_hr(&img, input_size)
                .map_err(|e| Error::Data(format!("{}: {e}", rec.path.display())))?;
            let l = downsample_bilinear(&h, scale)?;
            hr.push(h);
            lr.push(l);
            labels.push(class_of[&rec.identity_id]);
            match rec.split {
                Split::Train => train_indices.push(i),
                Split::Val => val_indices.push(i),
            }
        }
        if train_indices.is_empty() {
            return Err(Error::Manifest("manifest has no training records".into()));
        }
        Ok(Dataset {
            records,
            hr,
            lr,
            labels,
            num_classes: class_of.len(),
            train_indices,
            val_indices,
            input_size,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Training identities, as class labels, in ascending order.
    fn train_classes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.train_indices.iter().map(|&i| self.labels[i]).collect();
        set.into_iter().collect()
    }
}

/// Uniform with-replacement draw of training record indices for one step.
pub fn sample_batch(ds: &Dataset, seed: u64, label: &str, step: u64, n: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, label, &[step]);
    (0..n)
        .map(|_| ds.train_indices[r.gen_range(0..ds.train_indices.len())])
        .collect()
}

/// One recognizer-training batch: a reference half and a degraded half with
/// disjoint identity sets, so the classifier cannot pair a pristine and a
/// degraded view of the same person within one step.
pub struct TwoHalfBatch {
    /// Record indices whose images are used at full quality.
    pub hr_indices: Vec<usize>,
    /// Record indices whose low-resolution images are used (after upscaling).
    pub sr_indices: Vec<usize>,
}

pub fn sample_two_half_batch(
    ds: &Dataset,
    seed: u64,
    label: &str,
    step: u64,
    batch: usize,
) -> Result<TwoHalfBatch> {
    let classes = ds.train_classes();
    if classes.len() < 2 {
        return Err(Error::Data(format!(
            "two-half sampling needs at least 2 training identities, found {}",
            classes.len()
        )));
    }
    if batch < 2 {
        return Err(Error::Data("two-half batch must hold at least 2 images".into()));
    }
    let mut r = rng::stream(seed, label, &[step]);
    let mut shuffled = classes;
    shuffled.shuffle(&mut r);
    let cut = shuffled.len() / 2;
    // The reference half draws from the larger identity pool.
    let (sr_pool, hr_pool) = shuffled.split_at(cut);

    let by_class = |pool: &[usize]| -> Vec<usize> {
        ds.train_indices
            .iter()
            .copied()
            .filter(|&i| pool.contains(&ds.labels[i]))
            .collect()
    };
    let hr_candidates = by_class(hr_pool);
    let sr_candidates = by_class(sr_pool);
    let n_hr = batch.div_ceil(2);
    let n_sr = batch - n_hr;
    let draw = |r: &mut rand_chacha::ChaCha8Rng, cands: &[usize], n: usize| -> Vec<usize> {
        (0..n).map(|_| cands[r.gen_range(0..cands.len())]).collect()
    };
    let hr_indices = draw(&mut r, &hr_candidates, n_hr);
    let sr_indices = draw(&mut r, &sr_candidates, n_sr);
    Ok(TwoHalfBatch { hr_indices, sr_indices })
}

/// Balanced verification pairs from the validation split: (i, j, same).
/// Positives pair distinct images of one identity; negatives pair images of
/// two identities. Deterministic in the seed.
pub fn make_verification_pairs(ds: &Dataset, seed: u64, n_pairs: usize) -> Result<Vec<(usize, usize, bool)>> {
    if n_pairs == 0 || n_pairs % 2 != 0 {
        return Err(Error::Data(format!("pair count must be positive and even, got {n_pairs}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in &ds.val_indices {
        by_class.entry(ds.labels[i]).or_default().push(i);
    }
    let multi: Vec<&Vec<usize>> = by_class.values().filter(|v| v.len() >= 2).collect();
    if multi.is_empty() {
        return Err(Error::Data(
            "no validation identity has two images; cannot form positive pairs".into(),
        ));
    }
    if by_class.len() < 2 {
        return Err(Error::Data(
            "validation split has a single identity; cannot form negative pairs".into(),
        ));
    }
    let classes: Vec<&Vec<usize>> = by_class.values().collect();
    let mut r = rng::stream(seed, "verification-pairs", &[]);
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs / 2 {
        let group = multi[r.gen_range(0..multi.len())];
        let a = r.gen_range(0..group.len());
        let mut b = r.gen_range(0..group.len() - 1);
        if b >= a {
            b += 1;
        }
        pairs.push((group[a], group[b], true));
    }
    for _ in 0..n_pairs / 2 {
        let ca = r.gen_range(0..classes.len());
        let mut cb = r.gen_range(0..classes.len() - 1);
        if cb >= ca {
            cb += 1;
        }
        let a = classes[ca][r.gen_range(0..classes[ca].len())];
        let b = classes[cb][r.gen_range(0..classes[cb].len())];
        pairs.push((a, b, false));
    }
    Ok(pairs)
}

/// Generate a synthetic face-like corpus: each identity is a distinct
/// composition of oriented gratings and radial waves; images of one identity
/// differ by small phase, shift, and brightness jitter. Writes PNGs plus a
/// manifest and returns the manifest path. With at least two images per
/// identity, the last image of each identity goes to the validation split.
pub fn synth_toy_dataset(
    dir: &Path,
    num_identities: usize,
    images_per_identity: usize,
    size: usize,
    seed: u64,
) -> Result<PathBuf> {
    if num_identities < 2 || images_per_identity < 1 {
        return Err(Error::Data(
            "toy corpus needs at least 2 identities and 1 image each".into(),
        ));
    }
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::from("path,identity_id,split\n");
    for id in 0..num_identities {
        let mut idr = rng::stream(seed, "toy-identity", &[id as u64]);
        let theta: f64 = idr.gen_range(0.0..std::f64::consts::PI);
        let freq: f64 = idr.gen_range(3.0..8.0);
        let freq2: f64 = idr.gen_range(2.0..6.0);
        let cx: f64 = idr.gen_range(0.3..0.7);
        let cy: f64 = idr.gen_range(0.3..0.7);
        let color_mix: f64 = idr.gen_range(0.2..0.8);
        for j in 0..images_per_identity {
            let mut jr = rng::stream(seed, "toy-image", &[id as u64, j as u64]);
            let phase: f64 = jr.gen_range(0.0..0.6);
            let bright: f64 = jr.gen_range(-0.08..0.08);
            let shift: f64 = jr.gen_range(-0.03..0.03);
            let mut img = RgbImage::new(size as u32, size as u32);
            let tau = std::f64::consts::TAU;
            for y in 0..size {
                for x in 0..size {
                    let u = x as f64 / size as f64 + shift;
                    let v = y as f64 / size as f64 + shift;
                    let grating = (tau * freq * (u * theta.cos() + v * theta.sin()) + phase).sin();
                    let radial = (tau * freq2 * ((u - cx).powi(2) + (v - cy).powi(2)).sqrt() * 2.0 + phase).sin();
                    let cross = (tau * freq * u).cos() * (tau * freq2 * v).sin();
                    let r = 0.5 + 0.4 * grating + bright;
                    let g = 0.5 + 0.4 * (color_mix * radial + (1.0 - color_mix) * grating) + bright;
                    let b = 0.5 + 0.4 * cross + bright;
                    let px = [r, g, b].map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8);
                    img.put_pixel(x as u32, y as u32, image::Rgb(px));
                }
            }
            let name = format!("id{id:03}_img{j:02}.png");
            img.save(dir.join(&name))
                .map_err(|e| Error::Data(format!("cannot write {name}: {e}")))?;
            let split = if images_per_identity >= 2 && j == images_per_identity - 1 {
                "val"
            } else {
                "train"
            };
            manifest.push_str(&format!("{name},{id},{split}\n"));
        }
    }
    let manifest_path = dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest)?;
    Ok(manifest_path)
}
