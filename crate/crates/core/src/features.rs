//! Per-video feature sequences, video-level pooling, the on-disk feature and
//! manifest formats, and the synthetic dataset generator.
//!
//! Feature file layout (little-endian):
//!
//! ```text
//! "HVFT"            4 bytes
//! version           u32 (= 1)
//! T                 u32, number of frames
//! dim               u32, feature dimension
//! stream            u8 (0 = spatial, 1 = motion)
//! frames            T * dim f32, row-major by frame
//! ```
//!
//! The manifest is TOML: a header with `num_classes` and `class_names`, then
//! one `[[videos]]` record per video with `id`, `split`, `labels` (class ids)
//! and the two feature paths, relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{self, Matrix, RngSource};

pub const FEATURE_MAGIC: &[u8; 4] = b"HVFT";
pub const FEATURE_VERSION: u32 = 1;
const FEATURE_HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Spatial,
    Motion,
}

impl Stream {
    fn tag(self) -> u8 {
        match self {
            Stream::Spatial => 0,
            Stream::Motion => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Stream> {
        match tag {
            0 => Some(Stream::Spatial),
            1 => Some(Stream::Motion),
            _ => None,
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stream::Spatial => "spatial",
            Stream::Motion => "motion",
        })
    }
}

/// Time-ordered frame features of one stream of one video. Frames are the
/// rows of `frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    stream: Stream,
    frames: Matrix,
}

impl FeatureSequence {
    pub fn new(stream: Stream, frames: Matrix) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::Argument("feature sequence needs at least one frame".into()));
        }
        if frames.cols() == 0 {
            return Err(Error::Argument("feature dimension must be positive".into()));
        }
        Ok(FeatureSequence { stream, frames })
    }

    pub fn from_frames(stream: Stream, frames: &[Vec<f64>]) -> Result<Self> {
        FeatureSequence::new(stream, Matrix::from_rows(frames)?)
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(move |t| self.frame(t))
    }

    /// Copy with frames reordered so that frame `t` is the old frame `order[t]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = order.iter().map(|&t| self.frame(t).to_vec()).collect();
        FeatureSequence::from_frames(self.stream, &rows)
    }
}

/// Frame mean of a sequence.
pub fn average_pool(seq: &FeatureSequence) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(Error::Argument("cannot pool an empty sequence".into()));
    }
    let mut acc = vec![0.0; seq.dim()];
    for frame in seq.iter() {
        for (a, v) in acc.iter_mut().zip(frame) {
            *a += v;
        }
    }
    let t = seq.len() as f64;
    acc.iter_mut().for_each(|a| *a /= t);
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub split: Split,
    pub spatial: FeatureSequence,
    pub motion: FeatureSequence,
    /// Multi-hot label over the classes.
    pub label: Vec<bool>,
}

impl VideoSample {
    pub fn label_vector(&self) -> Vec<f64> {
        self.label.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// The class id when the label has exactly one positive.
    pub fn class_index(&self) -> Option<usize> {
        let mut pos = self.label.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i);
        match (pos.next(), pos.next()) {
            (Some(c), None) => Some(c),
            _ => None,
        }
    }

    pub fn stream(&self, stream: Stream) -> &FeatureSequence {
        match stream {
            Stream::Spatial => &self.spatial,
            Stream::Motion => &self.motion,
        }
    }

    pub fn pooled(&self) -> Result<PooledSample> {
        Ok(PooledSample {
            id: self.id.clone(),
            spatial: average_pool(&self.spatial)?,
            motion: average_pool(&self.motion)?,
            label: self.label_vector(),
        })
    }
}

/// Video-level input to the fusion network.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSample {
    pub id: String,
    pub spatial: Vec<f64>,
    pub motion: Vec<f64>,
    pub label: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub samples: Vec<VideoSample>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self, split: Split) -> Vec<&VideoSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn spatial_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.spatial.dim())
    }

    pub fn motion_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.motion.dim())
    }
}

pub fn pool_all<'a>(samples: impl IntoIterator<Item = &'a VideoSample>) -> Result<Vec<PooledSample>> {
    samples.into_iter().map(VideoSample::pooled).collect()
}

/// Writes a feature file. Values are stored as `f32`.
pub fn write_feature_file(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let mut buf = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * seq.len() * seq.dim());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    buf.push(seq.stream().tag());
    for v in seq.frames().data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a feature file. `video` only labels diagnostics.
pub fn read_feature_file(path: &Path, video: &str) -> Result<FeatureSequence> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile {
                video: video.to_string(),
                path: path.to_path_buf(),
            })
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            video: video.to_string(),
            path: path.to_path_buf(),
            expected: "HVFT",
        });
    }
    let bad = |msg: String| Error::format(path, format!("video `{video}`: {msg}"));
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(bad("truncated header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FEATURE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let t = u32_at(8) as usize;
    let dim = u32_at(12) as usize;
    let stream = Stream::from_tag(bytes[16]).ok_or_else(|| bad(format!("unknown stream tag {}", bytes[16])))?;
    if t == 0 || dim == 0 {
        return Err(bad(format!("empty sequence (T={t}, dim={dim})")));
    }
    let expected = t
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(FEATURE_HEADER_LEN))
        .ok_or_else(|| bad("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut data = Vec::with_capacity(t * dim);
    for chunk in bytes[FEATURE_HEADER_LEN..].chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(bad("non-finite feature value".into()));
        }
        data.push(v as f64);
    }
    FeatureSequence::new(stream, Matrix::from_vec(t, dim, data)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    num_classes: usize,
    #[serde(default)]
    class_names: Vec<String>,
    #[serde(default)]
    videos: Vec<ManifestRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    id: String,
    split: Split,
    labels: Vec<i64>,
    spatial: PathBuf,
    motion: PathBuf,
}

/// Loads every video listed in a manifest, validating labels and requiring a
/// single spatial and a single motion dimension across the corpus.
pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    if text.trim().is_empty() {
        log::warn!("{}: empty manifest, no videos loaded", manifest.display());
        return Ok(Dataset::default());
    }
    let file: ManifestFile = toml::from_str(&text).map_err(|e| Error::format(manifest, e.to_string()))?;
    if file.num_classes < 2 {
        return Err(Error::format(manifest, "num_classes must be at least 2"));
    }
    let class_names = if file.class_names.is_empty() {
        (0..file.num_classes).map(|c| format!("class{c}")).collect()
    } else if file.class_names.len() == file.num_classes {
        file.class_names
    } else {
        return Err(Error::format(
            manifest,
            format!("{} class names for {} classes", file.class_names.len(), file.num_classes),
        ));
    };
    if file.videos.is_empty() {
        log::warn!("{}: manifest lists no videos", manifest.display());
    }

    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = HashSet::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut samples = Vec::with_capacity(file.videos.len());
    for rec in file.videos {
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Data(format!("duplicate video id `{}`", rec.id)));
        }
        let mut label = vec![false; file.num_classes];
        for &l in &rec.labels {
            if l < 0 || l as usize >= file.num_classes {
                return Err(Error::BadLabel {
                    video: rec.id,
                    label: l,
                    classes: file.num_classes,
                });
            }
            label[l as usize] = true;
        }
        if rec.split == Split::Train && !label.iter().any(|&b| b) {
            return Err(Error::Data(format!("training video `{}` has no positive label", rec.id)));
        }
        let spatial = read_feature_file(&base.join(&rec.spatial), &rec.id)?;
        let motion = read_feature_file(&base.join(&rec.motion), &rec.id)?;
        for (seq, want) in [(&spatial, Stream::Spatial), (&motion, Stream::Motion)] {
            if seq.stream() != want {
                return Err(Error::format(
                    base.join(if want == Stream::Spatial { &rec.spatial } else { &rec.motion }),
                    format!("video `{}`: expected a {want} stream, file is tagged {}", rec.id, seq.stream()),
                ));
            }
        }
        let (ds, dm) = *dims.get_or_insert((spatial.dim(), motion.dim()));
        if spatial.dim() != ds {
            return Err(Error::DimMismatch {
                video: rec.id,
                what: "spatial",
                expected: ds,
                found: spatial.dim(),
            });
        }
        if motion.dim() != dm {
            return Err(Error::DimMismatch {
                video: rec.id,
                what: "motion",
                expected: dm,
                found: motion.dim(),
            });
        }
        samples.push(VideoSample {
            id: rec.id,
            split: rec.split,
            spatial,
            motion,
            label,
        });
    }
    Ok(Dataset { class_names, samples })
}

/// Writes `features/<id>.{spatial,motion}.hvft` and `manifest.toml` under
/// `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut videos = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let sp = PathBuf::from("features").join(format!("{}.spatial.hvft", s.id));
        let mo = PathBuf::from("features").join(format!("{}.motion.hvft", s.id));
        write_feature_file(&dir.join(&sp), &s.spatial)?;
        write_feature_file(&dir.join(&mo), &s.motion)?;
        videos.push(ManifestRecord {
            id: s.id.clone(),
            split: s.split,
            labels: s.label.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i as i64).collect(),
            spatial: sp,
            motion: mo,
        });
    }
    let file = ManifestFile {
        num_classes: dataset.num_classes(),
        class_names: dataset.class_names.clone(),
        videos,
    };
    let text = toml::to_string(&file).map_err(|e| Error::Data(e.to_string()))?;
    let path = dir.join("manifest.toml");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Layout for an upstream CNN feature dump: one `HVFT` file per stream per
/// video, frames in temporal order, produced by whatever extractor is used.
/// This helper only wraps frames that already exist in memory.
pub fn sequence_from_cnn_frames(stream: Stream, frames: &[Vec<f32>]) -> Result<FeatureSequence> {
    let rows: Vec<Vec<f64>> = frames.iter().map(|f| f.iter().map(|&v| v as f64).collect()).collect();
    FeatureSequence::from_frames(stream, &rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    /// Class is encoded only in the order of shared segment prototypes, so
    /// pooled features carry no class information.
    Temporal,
    /// Class is encoded in video-level means: a block of dimensions shared
    /// (identically) by both streams, a stream-unique block, and pure noise
    /// dimensions.
    Correlation,
    /// Spatial stream as in `Correlation`, motion stream as in `Temporal`.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub mode: SynthMode,
    pub classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub spatial_dim: usize,
    pub motion_dim: usize,
    /// Segments per sequence in temporal streams; 0 picks the smallest count
    /// whose permutations cover every class.
    pub segments: usize,
    /// Fraction of videos whose segment order is drawn from a random class
    /// instead of the label.
    pub order_noise: f64,
    /// Dimensions carrying the class signal identically in both streams.
    pub shared_dims: usize,
    /// Per-stream dimensions carrying stream-specific class signal.
    pub unique_dims: usize,
    /// Spread of class centroids on signal dimensions.
    pub signal_scale: f64,
    /// Video-level noise on signal dimensions.
    pub noise: f64,
    /// Video-level spread of the noise dimensions.
    pub noise_dim_scale: f64,
    /// Per-frame jitter.
    pub frame_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            mode: SynthMode::Temporal,
            classes: 2,
            train_per_class: 50,
            val_per_class: 25,
            test_per_class: 100,
            t_min: 6,
            t_max: 10,
            spatial_dim: 8,
            motion_dim: 8,
            segments: 0,
            order_noise: 0.0,
            shared_dims: 2,
            unique_dims: 2,
            signal_scale: 1.0,
            noise: 0.5,
            noise_dim_scale: 1.0,
            frame_noise: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn segment_count(&self) -> usize {
        if self.segments > 0 {
            return self.segments;
        }
        let mut s = 2;
        while factorial(s) < self.classes {
            s += 1;
        }
        s
    }

    fn has_temporal_stream(&self) -> bool {
        matches!(self.mode, SynthMode::Temporal | SynthMode::Mixed)
    }

    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(Error::Argument(m));
        if self.classes < 2 {
            return arg("synthetic data needs at least 2 classes".into());
        }
        if self.spatial_dim < 2 || self.motion_dim < 2 {
            return arg("feature dimensions must be at least 2".into());
        }
        if self.t_min < 1 || self.t_min > self.t_max {
            return arg(format!("invalid length range [{}, {}]", self.t_min, self.t_max));
        }
        if !(0.0..=1.0).contains(&self.order_noise) {
            return arg("order_noise must lie in [0, 1]".into());
        }
        for (name, v) in [
            ("signal_scale", self.signal_scale),
            ("noise", self.noise),
            ("noise_dim_scale", self.noise_dim_scale),
            ("frame_noise", self.frame_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return arg(format!("{name} must be finite and non-negative"));
            }
        }
        if self.has_temporal_stream() {
            let s = self.segment_count();
            if s < 2 {
                return arg("temporal streams need at least 2 segments".into());
            }
            if factorial(s) < self.classes {
                return arg(format!("{} classes exceed the {} orderings of {s} segments", self.classes, factorial(s)));
            }
            if self.t_min < 2 || self.t_min < s {
                return arg(format!("t_min {} is shorter than the {s} segments", self.t_min));
            }
        }
        if matches!(self.mode, SynthMode::Correlation | SynthMode::Mixed) {
            let need = self.shared_dims + self.unique_dims;
            if need == 0 {
                return arg("correlation streams need at least one signal dimension".into());
            }
            if need > self.spatial_dim || (self.mode == SynthMode::Correlation && need > self.motion_dim) {
                return arg(format!("{need} signal dimensions do not fit the feature width"));
            }
        }
        Ok(())
    }
}

fn factorial(n: usize) -> usize {
    (1..=n).fold(1usize, |acc, k| acc.saturating_mul(k))
}

/// First `count` permutations of `0..n` in lexicographic order.
fn permutations(n: usize, count: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(count);
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        out.push(p.clone());
        if out.len() == count {
            return out;
        }
        // next lexicographic permutation
        let Some(i) = (0..n - 1).rev().find(|&i| p[i] < p[i + 1]) else {
            return out;
        };
        let j = (i + 1..n).rev().find(|&j| p[j] > p[i]).unwrap();
        p.swap(i, j);
        p[i + 1..].reverse();
    }
}

fn gaussian_vec(rng: &mut RngSource, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.normal()).collect()
}

/// Centers `vs` on their mean and rescales each to norm `scale·√len`, so the
/// separation between classes varies less from seed to seed.
fn centered_spread(mut vs: Vec<Vec<f64>>, scale: f64) -> Vec<Vec<f64>> {
    let n = vs.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..n).map(|j| vs.iter().map(|v| v[j]).sum::<f64>() / vs.len() as f64).collect();
    for v in &mut vs {
        v.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m);
        let norm = numcore::norm2(v);
        if norm > 0.0 {
            let k = scale * (n as f64).sqrt() / norm;
            v.iter_mut().for_each(|x| *x *= k);
        }
    }
    vs
}

fn to_f32_precision(v: f64) -> f64 {
    v as f32 as f64
}

struct TemporalStream {
    prototypes: Vec<Vec<f64>>,
    orders: Vec<Vec<usize>>,
}

impl TemporalStream {
    fn new(spec: &SynthSpec, dim: usize, rng: &mut RngSource) -> Self {
        let s = spec.segment_count();
        TemporalStream {
            prototypes: centered_spread((0..s).map(|_| gaussian_vec(rng, dim, 1.0)).collect(), 1.0),
            orders: permutations(s, spec.classes),
        }
    }

    fn frames(&self, spec: &SynthSpec, class: usize, t: usize, rng: &mut RngSource) -> Vec<Vec<f64>> {
        let s = self.prototypes.len();
        let order_class = if spec.order_noise > 0.0 && rng.uniform(0.0, 1.0) < spec.order_noise {
            rng.below(spec.classes)
        } else {
            class
        };
        let order = &self.orders[order_class];
        // exchangeable segment lengths, so pooled features do not depend on the order
        let mut lengths = vec![t / s; s];
        let mut idx: Vec<usize> = (0..s).collect();
        rng.shuffle(&mut idx);
        for &k in idx.iter().take(t % s) {
            lengths[k] += 1;
        }
        let mut frames = Vec::with_capacity(t);
        for (seg, &len) in lengths.iter().enumerate() {
            let proto = &self.prototypes[order[seg]];
            for _ in 0..len {
                frames.push(proto.iter().map(|&p| p + spec.frame_noise * rng.normal()).collect());
            }
        }
        frames
    }
}

struct CorrelationStreams {
    shared: Vec<Vec<f64>>,
    unique_spatial: Vec<Vec<f64>>,
    unique_motion: Vec<Vec<f64>>,
}

impl CorrelationStreams {
    fn new(spec: &SynthSpec, rng: &mut RngSource) -> Self {
        let centroids = |rng: &mut RngSource, n: usize| -> Vec<Vec<f64>> {
            centered_spread((0..spec.classes).map(|_| gaussian_vec(rng, n, 1.0)).collect(), spec.signal_scale)
        };
        CorrelationStreams {
            shared: centroids(rng, spec.shared_dims),
            unique_spatial: centroids(rng, spec.unique_dims),
            unique_motion: centroids(rng, spec.unique_dims),
        }
    }

    /// Video-level latent for one stream given the shared block already drawn.
    fn latent(&self, spec: &SynthSpec, unique: &[f64], shared: &[f64], dim: usize, rng: &mut RngSource) -> Vec<f64> {
        let mut z = Vec::with_capacity(dim);
        z.extend_from_slice(shared);
        z.extend(unique.iter().map(|&u| u + spec.noise * rng.normal()));
        while z.len() < dim {
            z.push(spec.noise_dim_scale * rng.normal());
        }
        z
    }
}

fn jitter_frames(spec: &SynthSpec, latent: &[f64], t: usize, rng: &mut RngSource) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| latent.iter().map(|&z| z + spec.frame_noise * rng.normal()).collect())
        .collect()
}

fn rounded_sequence(stream: Stream, frames: Vec<Vec<f64>>) -> Result<FeatureSequence> {
    let frames: Vec<Vec<f64>> = frames
        .into_iter()
        .map(|f| f.into_iter().map(to_f32_precision).collect())
        .collect();
    FeatureSequence::from_frames(stream, &frames)
}

/// Generates train, validation and test splits. Every value is rounded to
/// `f32` precision so a dataset survives a write/load cycle bit-exactly.
pub fn synthesize(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut root = RngSource::new(spec.seed);
    let mut model_rng = root.fork(1);
    let (spatial_temporal, motion_temporal, correlation) = match spec.mode {
        SynthMode::Temporal => (
            Some(TemporalStream::new(spec, spec.spatial_dim, &mut model_rng)),
            Some(TemporalStream::new(spec, spec.motion_dim, &mut model_rng)),
            None,
        ),
        SynthMode::Correlation => (None, None, Some(CorrelationStreams::new(spec, &mut model_rng))),
        SynthMode::Mixed => (
            None,
            Some(TemporalStream::new(spec, spec.motion_dim, &mut model_rng)),
            Some(CorrelationStreams::new(spec, &mut model_rng)),
        ),
    };

    let mut samples = Vec::new();
    for (tag, split, per_class) in [
        (2, Split::Train, spec.train_per_class),
        (3, Split::Val, spec.val_per_class),
        (4, Split::Test, spec.test_per_class),
    ] {
        let mut rng = root.fork(tag);
        for class in 0..spec.classes {
            for i in 0..per_class {
                let t = rng.int_inclusive(spec.t_min, spec.t_max);
                let (spatial, motion) = match (&spatial_temporal, &motion_temporal, &correlation) {
                    (Some(sp), Some(mo), _) => (sp.frames(spec, class, t, &mut rng), mo.frames(spec, class, t, &mut rng)),
                    (None, mo, Some(corr)) => {
                        let shared: Vec<f64> = corr.shared[class].iter().map(|&c| c + spec.noise * rng.normal()).collect();
                        let zs = corr.latent(spec, &corr.unique_spatial[class], &shared, spec.spatial_dim, &mut rng);
                        let sp = jitter_frames(spec, &zs, t, &mut rng);
                        let mo = match mo {
                            Some(mo) => mo.frames(spec, class, t, &mut rng),
                            None => {
                                let zm = corr.latent(spec, &corr.unique_motion[class], &shared, spec.motion_dim, &mut rng);
                                jitter_frames(spec, &zm, t, &mut rng)
                            }
                        };
                        (sp, mo)
                    }
                    _ => unreachable!("every mode defines both streams"),
                };
                let mut label = vec![false; spec.classes];
                label[class] = true;
                samples.push(VideoSample {
                    id: format!("{split}-c{class:02}-{i:05}"),
                    split,
                    spatial: rounded_sequence(Stream::Spatial, spatial)?,
                    motion: rounded_sequence(Stream::Motion, motion)?,
                    label,
                });
            }
        }
    }
    Ok(Dataset {
        class_names: (0..spec.classes).map(|c| format!("class{c}")).collect(),
        samples,
    })
}
