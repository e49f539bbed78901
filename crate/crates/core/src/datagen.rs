//! Synthetic multi-domain segmentation benchmarks.
//!
//! Every domain shares one scene process (a background plus `K - 1`
//! rectangles and ellipses, one per foreground class) and one set of class
//! color prototypes. Domains differ only in appearance: a per-channel gain
//! and bias, color jitter per image and class, and pixel noise.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{Grid4, LabelMap, Shape};
use crate::rng::{stream, Rng};

pub const DATASET_MAGIC: &[u8; 6] = b"DANDS1";
pub const IMAGE_CHANNELS: usize = 3;
const PROTOTYPE_STREAM: u64 = 50;
const SCENE_STREAM_BASE: u64 = 1_000;
const RENDER_STREAM_BASE: u64 = 2_000;

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub name: String,
    pub channel_gain: [f64; 3],
    pub channel_bias: [f64; 3],
    pub texture_noise_std: f64,
    pub class_palette_jitter: f64,
    pub seed_offset: u64,
}

impl DomainSpec {
    pub fn identity(name: &str, seed_offset: u64) -> Self {
        Self {
            name: name.to_string(),
            channel_gain: [1.0; 3],
            channel_bias: [0.0; 3],
            texture_noise_std: 0.0,
            class_palette_jitter: 0.0,
            seed_offset,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(|c: char| c.is_whitespace() || c == '/') {
            return Err(Error::invalid(format!("bad domain name `{}`", self.name)));
        }
        if self.channel_gain.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(Error::invalid(format!("domain `{}`: gains must be positive", self.name)));
        }
        if self.channel_bias.iter().any(|b| !b.is_finite())
            || !(self.texture_noise_std >= 0.0)
            || !(self.class_palette_jitter >= 0.0)
        {
            return Err(Error::invalid(format!("domain `{}`: bad appearance parameters", self.name)));
        }
        Ok(())
    }
}

/// Class index per pixel of one scene.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatentScene {
    pub height: usize,
    pub width: usize,
    pub classes: Vec<u8>,
}

/// Places `classes - 1` axis-aligned rectangles or ellipses, one per
/// foreground class, in random order over background class 0.
pub fn generate_scene(rng: &mut Rng, height: usize, width: usize, classes: usize) -> Result<LatentScene> {
    if classes < 2 || classes > u8::MAX as usize {
        return Err(Error::invalid(format!("class count {classes} outside [2, 255)")));
    }
    if height < 8 || width < 8 {
        return Err(Error::invalid(format!("scene {height}x{width} too small, need at least 8x8")));
    }
    let mut map = vec![0u8; height * width];
    let mut order: Vec<u8> = (1..classes as u8).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    for class in order {
        let rh = rng.gen_range(height / 4..=height / 2);
        let rw = rng.gen_range(width / 4..=width / 2);
        let y0 = rng.gen_range(0..=height - rh);
        let x0 = rng.gen_range(0..=width - rw);
        let ellipse = rng.gen_bool(0.5);
        let (cy, cx) = (y0 as f64 + rh as f64 / 2.0, x0 as f64 + rw as f64 / 2.0);
        let (ay, ax) = (rh as f64 / 2.0, rw as f64 / 2.0);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                let inside = !ellipse || {
                    let dy = (y as f64 + 0.5 - cy) / ay;
                    let dx = (x as f64 + 0.5 - cx) / ax;
                    dy * dy + dx * dx <= 1.0
                };
                if inside {
                    map[y * width + x] = class;
                }
            }
        }
    }
    Ok(LatentScene {
        height,
        width,
        classes: map,
    })
}

/// Class colors in `[0.1, 0.6]^3`, pairwise at least `0.2` apart.
pub fn class_prototypes(rng: &mut Rng, classes: usize) -> Vec<[f64; 3]> {
    let mut out: Vec<[f64; 3]> = Vec::with_capacity(classes);
    let mut min_dist = 0.2f64;
    let mut attempts = 0;
    while out.len() < classes {
        let c = [0; 3].map(|_| rng.gen_range(0.1..0.6));
        let far = out
            .iter()
            .all(|p| p.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= min_dist);
        if far {
            out.push(c);
        }
        attempts += 1;
        if attempts % 10_000 == 0 {
            min_dist *= 0.8;
        }
    }
    out
}

/// `gain * (prototype + jitter) + bias + noise`, clipped to `[0, 1]`.
pub fn render_domain(
    scene: &LatentScene,
    prototypes: &[[f64; 3]],
    spec: &DomainSpec,
    rng: &mut Rng,
) -> Result<Grid4> {
    spec.validate()?;
    if let Some(c) = scene.classes.iter().find(|c| **c as usize >= prototypes.len()) {
        return Err(Error::Label {
            label: *c,
            classes: prototypes.len(),
        });
    }
    let jitter = Normal::new(0.0, spec.class_palette_jitter).expect("validated");
    let noise = Normal::new(0.0, spec.texture_noise_std).expect("validated");
    let colors: Vec<[f64; 3]> = prototypes
        .iter()
        .map(|p| {
            let mut c = [0.0; 3];
            for ch in 0..3 {
                let j = if spec.class_palette_jitter > 0.0 { jitter.sample(rng) } else { 0.0 };
                c[ch] = spec.channel_gain[ch] * (p[ch] + j) + spec.channel_bias[ch];
            }
            c
        })
        .collect();
    let shape = Shape::new(1, scene.height, scene.width, IMAGE_CHANNELS);
    let mut data = Vec::with_capacity(shape.len());
    for class in &scene.classes {
        for v in colors[*class as usize] {
            let n = if spec.texture_noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
            data.push((v + n).clamp(0.0, 1.0));
        }
    }
    Grid4::from_vec(shape, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    fn index(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
        }
    }
}

/// Images (`N x H x W x 3`) and their label maps for one domain split.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub images: Grid4,
    pub labels: LabelMap,
    pub classes: usize,
}

impl SceneDataset {
    pub fn new(images: Grid4, labels: LabelMap, classes: usize) -> Result<Self> {
        let s = images.shape();
        if (s.n, s.h, s.w) != labels.dims() {
            return Err(Error::shape(format!(
                "images {s} and labels {:?} disagree",
                labels.dims()
            )));
        }
        Ok(Self {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Images and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<(Grid4, LabelMap)> {
        let imgs = indices
            .iter()
            .map(|i| self.images.sample(*i))
            .collect::<Result<Vec<_>>>()?;
        let labs = indices
            .iter()
            .map(|i| self.labels.sample(*i))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            Grid4::concat_n(&imgs.iter().collect::<Vec<_>>())?,
            LabelMap::concat(&labs.iter().collect::<Vec<_>>())?,
        ))
    }

    /// Leading `n` images.
    pub fn head(&self, n: usize) -> Result<SceneDataset> {
        let n = n.min(self.len());
        Self::new(self.images.slice_n(0, n)?, self.labels.sample_range(0, n)?, self.classes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = self.images.shape();
        let mut out = DATASET_MAGIC.to_vec();
        for d in [s.n, s.h, s.w, s.c, self.classes] {
            out.extend((d as u64).to_le_bytes());
        }
        for v in self.images.data() {
            out.extend(v.to_le_bytes());
        }
        out.extend(self.labels.data());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("dataset: {m}"));
        if bytes.len() < 46 || &bytes[..6] != DATASET_MAGIC {
            return Err(bad("missing DANDS1 header"));
        }
        let dims: Vec<usize> = bytes[6..46]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
            .collect();
        let (n, h, w, c, k) = (dims[0], dims[1], dims[2], dims[3], dims[4]);
        let shape = Shape::try_new(n, h, w, c).map_err(|_| bad("zero dimension"))?;
        let pixels = n
            .checked_mul(h)
            .and_then(|p| p.checked_mul(w))
            .ok_or_else(|| bad("dims overflow"))?;
        let expected = shape
            .len()
            .checked_mul(8)
            .and_then(|b| b.checked_add(46 + pixels));
        if expected != Some(bytes.len()) {
            return Err(bad("length does not match header"));
        }
        let img_end = 46 + shape.len() * 8;
        let data = bytes[46..img_end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let labels = LabelMap::new(n, h, w, bytes[img_end..].to_vec())?;
        Self::new(Grid4::from_vec(shape, data)?, labels, k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchmarkSizes {
    pub height: usize,
    pub width: usize,
    pub train: usize,
    pub val: usize,
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainData {
    pub spec: DomainSpec,
    pub train: SceneDataset,
    pub val: SceneDataset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub name: String,
    pub seed: u64,
    pub sizes: BenchmarkSizes,
    pub prototypes: Vec<[f64; 3]>,
    pub domains: Vec<DomainData>,
}

fn render_split(
    seed: u64,
    spec: &DomainSpec,
    prototypes: &[[f64; 3]],
    sizes: &BenchmarkSizes,
    split: Split,
) -> Result<SceneDataset> {
    let n = match split {
        Split::Train => sizes.train,
        Split::Val => sizes.val,
    };
    let lane = 2 * spec.seed_offset + split.index();
    let mut scenes = stream(seed, SCENE_STREAM_BASE + lane);
    let mut pixels = stream(seed, RENDER_STREAM_BASE + lane);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n * sizes.height * sizes.width);
    for _ in 0..n {
        let scene = generate_scene(&mut scenes, sizes.height, sizes.width, sizes.classes)?;
        images.push(render_domain(&scene, prototypes, spec, &mut pixels)?);
        labels.extend(&scene.classes);
    }
    let images = Grid4::concat_n(&images.iter().collect::<Vec<_>>())?;
    let labels = LabelMap::new(n, sizes.height, sizes.width, labels)?;
    SceneDataset::new(images, labels, sizes.classes)
}

/// Renders train and val splits for every domain. Scenes come from one
/// shared process; each domain and split draws from its own stream, so
/// train and val never share a scene draw.
pub fn build_benchmark(
    name: &str,
    seed: u64,
    specs: &[DomainSpec],
    sizes: BenchmarkSizes,
) -> Result<Benchmark> {
    if specs.len() < 3 {
        return Err(Error::invalid("a benchmark needs at least three domains"));
    }
    if sizes.train == 0 || sizes.val == 0 {
        return Err(Error::invalid("train and val sizes must be positive"));
    }
    let mut names = HashSet::new();
    let mut offsets = HashSet::new();
    for s in specs {
        s.validate()?;
        if !names.insert(s.name.as_str()) {
            return Err(Error::invalid(format!("duplicate domain name `{}`", s.name)));
        }
        if !offsets.insert(s.seed_offset) {
            return Err(Error::invalid(format!("duplicate seed offset {}", s.seed_offset)));
        }
    }
    let prototypes = class_prototypes(&mut stream(seed, PROTOTYPE_STREAM), sizes.classes);
    let domains = specs
        .iter()
        .map(|spec| {
            Ok(DomainData {
                spec: spec.clone(),
                train: render_split(seed, spec, &prototypes, &sizes, Split::Train)?,
                val: render_split(seed, spec, &prototypes, &sizes, Split::Val)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Benchmark {
        name: name.to_string(),
        seed,
        sizes,
        prototypes,
        domains,
    })
}

/// The source domain `S`, the large-gap target `T`, and two unseen domains;
/// `U1` and `U2` sit at growing distance from `T` along the same shift.
pub fn default_domain_specs() -> Vec<DomainSpec> {
    let spec = |name: &str, gain: [f64; 3], bias: [f64; 3], offset| DomainSpec {
        name: name.to_string(),
        channel_gain: gain,
        channel_bias: bias,
        texture_noise_std: 0.03,
        class_palette_jitter: 0.03,
        seed_offset: offset,
    };
    vec![
        spec("S", [1.0, 1.0, 1.0], [0.0, 0.0, 0.0], 0),
        spec("T", [1.15, 1.15, 1.15], [0.05, 0.05, 0.05], 1),
        spec("U1", [1.25, 1.2, 1.25], [0.08, 0.07, 0.06], 2),
        spec("U2", [1.3, 1.35, 1.3], [0.1, 0.12, 0.1], 3),
    ]
}

pub const BENCHMARK_NAMES: [&str; 2] = ["default", "small"];

pub fn benchmark_sizes(name: &str) -> Result<BenchmarkSizes> {
    match name {
        "default" => Ok(BenchmarkSizes {
            height: 16,
            width: 16,
            train: 128,
            val: 48,
            classes: 5,
        }),
        "small" => Ok(BenchmarkSizes {
            height: 12,
            width: 12,
            train: 24,
            val: 12,
            classes: 5,
        }),
        other => Err(Error::Usage(format!(
            "unknown benchmark `{other}`, expected one of {}",
            BENCHMARK_NAMES.join(", ")
        ))),
    }
}

pub fn named_benchmark(name: &str, seed: u64) -> Result<Benchmark> {
    build_benchmark(name, seed, &default_domain_specs(), benchmark_sizes(name)?)
}

impl Benchmark {
    pub fn domain(&self, name: &str) -> Result<&DomainData> {
        self.domains
            .iter()
            .find(|d| d.spec.name == name)
            .ok_or_else(|| Error::invalid(format!("benchmark has no domain `{name}`")))
    }

    pub fn manifest(&self) -> String {
        let s = &self.sizes;
        let mut m = String::new();
        let _ = writeln!(m, "benchmark = {}", self.name);
        let _ = writeln!(m, "seed = {}", self.seed);
        let _ = writeln!(m, "height = {}", s.height);
        let _ = writeln!(m, "width = {}", s.width);
        let _ = writeln!(m, "classes = {}", s.classes);
        let _ = writeln!(m, "train = {}", s.train);
        let _ = writeln!(m, "val = {}", s.val);
        for (k, p) in self.prototypes.iter().enumerate() {
            let _ = writeln!(m, "prototype.{k} = {:?}", p);
        }
        for d in &self.domains {
            let sp = &d.spec;
            let _ = writeln!(
                m,
                "domain {} seed_offset={} gain={:?} bias={:?} noise={} jitter={} files={}_train.dands,{}_val.dands",
                sp.name,
                sp.seed_offset,
                sp.channel_gain,
                sp.channel_bias,
                sp.texture_noise_std,
                sp.class_palette_jitter,
                sp.name,
                sp.name
            );
        }
        m
    }

    /// Writes `<domain>_<split>.dands` for every domain and `manifest.txt`.
    pub fn write(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for d in &self.domains {
            for (split, ds) in [(Split::Train, &d.train), (Split::Val, &d.val)] {
                let path = dir.join(format!("{}_{}.dands", d.spec.name, split.as_str()));
                ds.save(&path)?;
                written.push(path);
            }
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, self.manifest())?;
        written.push(path);
        Ok(written)
    }
}

/// Loads `<domain>_<split>.dands` from a benchmark directory.
pub fn load_split(dir: &Path, domain: &str, split: Split) -> Result<SceneDataset> {
    let path = dir.join(format!("{domain}_{}.dands", split.as_str()));
    if !path.exists() {
        return Err(Error::invalid(format!("missing dataset file {}", path.display())));
    }
    SceneDataset::load(&path)
}

/// Nearest-class-mean pixel classifier fitted on one dataset's colors.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelProbe {
    pub means: Vec<[f64; 3]>,
}

impl PixelProbe {
    pub fn fit(ds: &SceneDataset) -> Self {
        let mut sums = vec![[0.0; 3]; ds.classes];
        let mut counts = vec![0usize; ds.classes];
        for (px, l) in ds.images.data().chunks_exact(3).zip(ds.labels.data()) {
            let l = *l as usize;
            if l < ds.classes {
                counts[l] += 1;
                for c in 0..3 {
                    sums[l][c] += px[c];
                }
            }
        }
        let means = sums
            .iter()
            .zip(&counts)
            .map(|(s, n)| s.map(|v| v / (*n).max(1) as f64))
            .collect();
        Self { means }
    }

    pub fn classify(&self, px: &[f64]) -> u8 {
        let d = |m: &[f64; 3]| m.iter().zip(px).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut best = 0;
        for k in 1..self.means.len() {
            if d(&self.means[k]) < d(&self.means[best]) {
                best = k;
            }
        }
        best as u8
    }

    pub fn error_rate(&self, ds: &SceneDataset) -> f64 {
        let mut wrong = 0usize;
        let mut total = 0usize;
        for (px, l) in ds.images.data().chunks_exact(3).zip(ds.labels.data()) {
            if (*l as usize) < ds.classes {
                total += 1;
                wrong += usize::from(self.classify(px) != *l);
            }
        }
        wrong as f64 / total.max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_classes_only() {
        let s = generate_scene(&mut stream(1, 0), 10, 12, 2).unwrap();
        assert!(s.classes.iter().all(|c| *c < 2));
        assert!(s.classes.contains(&1));
    }

    #[test]
    fn scene_determinism_and_limits() {
        let a = generate_scene(&mut stream(2, 0), 16, 16, 5).unwrap();
        let b = generate_scene(&mut stream(2, 0), 16, 16, 5).unwrap();
        assert_eq!(a, b);
        assert!(generate_scene(&mut stream(2, 0), 7, 16, 5).is_err());
        assert!(generate_scene(&mut stream(2, 0), 16, 16, 1).is_err());
    }

    #[test]
    fn class_frequencies_are_balanced_enough() {
        let mut rng = stream(3, 0);
        let mut counts = [0usize; 5];
        for _ in 0..1000 {
            for c in generate_scene(&mut rng, 32, 32, 5).unwrap().classes {
                counts[c as usize] += 1;
            }
        }
        let total = (1000 * 32 * 32) as f64;
        for (k, n) in counts.iter().enumerate() {
            let f = *n as f64 / total;
            assert!((0.02..=0.8).contains(&f), "class {k}: {f}");
        }
    }

    #[test]
    fn identity_domain_renders_prototypes() {
        let scene = generate_scene(&mut stream(4, 0), 8, 8, 3).unwrap();
        let protos = class_prototypes(&mut stream(4, 1), 3);
        let img = render_domain(&scene, &protos, &DomainSpec::identity("S", 0), &mut stream(4, 2)).unwrap();
        for (px, c) in img.data().chunks(3).zip(&scene.classes) {
            assert_eq!(px, &protos[*c as usize][..]);
        }
    }

    #[test]
    fn prototypes_are_separated() {
        let p = class_prototypes(&mut stream(5, 0), 5);
        for i in 0..5 {
            assert!(p[i].iter().all(|v| (0.1..0.6).contains(v)));
            for j in 0..i {
                let d: f64 = p[i].iter().zip(&p[j]).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d.sqrt() >= 0.2);
            }
        }
    }

    #[test]
    fn seed_offset_changes_noise_not_label_statistics() {
        let sizes = BenchmarkSizes { height: 16, width: 16, train: 200, val: 1, classes: 5 };
        let mut a = DomainSpec::identity("A", 0);
        a.texture_noise_std = 0.05;
        let b = DomainSpec { name: "B".into(), seed_offset: 1, ..a.clone() };
        let c = DomainSpec { name: "C".into(), seed_offset: 2, ..a.clone() };
        let bench = build_benchmark("t", 6, &[a, b, c], sizes).unwrap();
        let hist = |d: &DomainData| {
            let mut h = [0f64; 5];
            d.train.labels.data().iter().for_each(|l| h[*l as usize] += 1.0);
            h.map(|v| v / d.train.labels.data().len() as f64)
        };
        let (ha, hb) = (hist(&bench.domains[0]), hist(&bench.domains[1]));
        for k in 0..5 {
            assert!((ha[k] - hb[k]).abs() < 0.03, "{ha:?} {hb:?}");
        }
        assert_ne!(bench.domains[0].train.images, bench.domains[1].train.images);
    }

    #[test]
    fn affine_shift_matches_analytic_prediction() {
        // No clipping is reachable: prototypes live in [0.1, 0.6] and the
        // jitter and noise are small, so E[gain * x + bias] = gain * E[x] + bias.
        let sizes = BenchmarkSizes { height: 16, width: 16, train: 500, val: 1, classes: 5 };
        let mut s = DomainSpec::identity("S", 0);
        s.texture_noise_std = 0.02;
        s.class_palette_jitter = 0.02;
        let t = DomainSpec { name: "T".into(), channel_gain: [1.4; 3], channel_bias: [0.15; 3], seed_offset: 0, ..s.clone() };
        let probe = DomainSpec { name: "P".into(), seed_offset: 7, ..s.clone() };
        let bench = build_benchmark("t", 8, &[s.clone(), probe, DomainSpec { name: "Q".into(), seed_offset: 9, ..s }], sizes).unwrap();
        let protos = &bench.prototypes;
        let mean = |img: &Grid4| {
            let mut m = [0.0; 3];
            img.data().chunks(3).for_each(|px| (0..3).for_each(|c| m[c] += px[c]));
            m.map(|v| v / (img.data().len() / 3) as f64)
        };
        let src = &bench.domains[0].train;
        let mut rng = stream(8, 77);
        let mut scenes = stream(8, 78);
        let mut tgt = Vec::new();
        for _ in 0..500 {
            let scene = generate_scene(&mut scenes, 16, 16, 5).unwrap();
            tgt.push(render_domain(&scene, protos, &t, &mut rng).unwrap());
        }
        let tgt = Grid4::concat_n(&tgt.iter().collect::<Vec<_>>()).unwrap();
        let (ms, mt) = (mean(&src.images), mean(&tgt));
        for c in 0..3 {
            let predicted = 0.4 * ms[c] + 0.15;
            assert!(((mt[c] - ms[c]) - predicted).abs() < 0.02, "channel {c}: {} vs {predicted}", mt[c] - ms[c]);
        }
    }

    #[test]
    fn benchmark_is_byte_reproducible() {
        let a = named_benchmark("small", 11).unwrap();
        let b = named_benchmark("small", 11).unwrap();
        for (x, y) in a.domains.iter().zip(&b.domains) {
            assert_eq!(x.train.to_bytes(), y.train.to_bytes());
            assert_eq!(x.val.to_bytes(), y.val.to_bytes());
        }
        assert_eq!(a.manifest(), b.manifest());
        assert_ne!(named_benchmark("small", 12).unwrap().domains[0].train, a.domains[0].train);
    }

    #[test]
    fn train_and_val_use_disjoint_streams() {
        let b = named_benchmark("small", 13).unwrap();
        let d = &b.domains[0];
        for i in 0..d.val.len() {
            let v = d.val.labels.sample(i).unwrap();
            for j in 0..d.train.len() {
                assert_ne!(v, d.train.labels.sample(j).unwrap());
            }
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let s = DomainSpec::identity("S", 0);
        let s2 = DomainSpec::identity("S", 1);
        let t = DomainSpec::identity("T", 2);
        let sizes = benchmark_sizes("small").unwrap();
        assert!(build_benchmark("x", 1, &[s, s2, t], sizes).is_err());
        assert!(matches!(benchmark_sizes("huge"), Err(Error::Usage(_))));
    }

    #[test]
    fn dataset_round_trip_and_corruption() {
        let b = named_benchmark("small", 14).unwrap();
        let ds = &b.domains[1].val;
        let bytes = ds.to_bytes();
        assert_eq!(&SceneDataset::from_bytes(&bytes).unwrap(), ds);
        assert!(SceneDataset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(SceneDataset::from_bytes(&bad).is_err());
    }

    #[test]
    fn default_benchmark_has_a_real_gap() {
        let b = named_benchmark("default", 1).unwrap();
        let probe = PixelProbe::fit(&b.domain("S").unwrap().train);
        let s_err = probe.error_rate(&b.domain("S").unwrap().val);
        let t_err = probe.error_rate(&b.domain("T").unwrap().val);
        assert!(s_err < 0.02, "S error {s_err}");
        assert!(t_err >= 0.15, "T error {t_err}");
    }

    #[test]
    fn every_class_appears_in_training_labels() {
        let b = named_benchmark("small", 15).unwrap();
        for d in &b.domains {
            for k in 0..5u8 {
                assert!(d.train.labels.data().contains(&k));
            }
        }
    }

    #[test]
    fn larger_gain_gap_never_shrinks_mean_distance() {
        let scene_rng = |i| stream(16, 100 + i);
        let protos = class_prototypes(&mut stream(16, 0), 5);
        let scenes: Vec<_> = (0..50u64).map(|i| generate_scene(&mut scene_rng(i), 16, 16, 5).unwrap()).collect();
        let mean_of = |spec: &DomainSpec| {
            let mut m = [0.0; 3];
            let mut n = 0.0;
            for (i, s) in scenes.iter().enumerate() {
                let img = render_domain(s, &protos, spec, &mut stream(16, 500 + i as u64)).unwrap();
                img.data().chunks(3).for_each(|px| (0..3).for_each(|c| m[c] += px[c]));
                n += (img.data().len() / 3) as f64;
            }
            m.map(|v| v / n)
        };
        let base = DomainSpec::identity("S", 0);
        let m0 = mean_of(&base);
        let mut prev = 0.0;
        for step in 0..6 {
            let g = 1.0 + 0.1 * step as f64;
            let spec = DomainSpec { channel_gain: [g; 3], channel_bias: [0.03 * step as f64; 3], ..base.clone() };
            let m = mean_of(&spec);
            let d: f64 = m.iter().zip(&m0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(d >= prev, "step {step}");
            prev = d;
        }
    }
}
