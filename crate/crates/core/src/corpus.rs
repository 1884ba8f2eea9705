//! Training corpora: normalized STFT frames with chroma labels and
//! clip-level train/validation/test splits.
//!
//! # File format (`.tcv`)
//!
//! ```text
//! "TCV1"                      magic, the digit is the format version
//! u32 LE                      length of the JSON metadata header
//! [u8]                        UTF-8 JSON metadata
//! [f32 LE; M * 2049]          normalized magnitudes, frame-major
//! [f32 LE; M]                 per-frame peaks
//! [u8; M]                     chroma class, 255 = silent
//! [u8; M]                     split: 0 train, 1 validation, 2 test
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chroma::{ChromaAnalyzer, ChromaVector, PitchClass};
use crate::dsp::{frame_count, normalize_frame, stft, AudioBuffer, SpectralFrame};
use crate::{wav, Error, Result, FFT_SIZE, HOP_SIZE, NUM_BINS, NUM_CLASSES, SAMPLE_RATE};

const MAGIC_PREFIX: &[u8; 3] = b"TCV";
pub const FORMAT_VERSION: u32 = 1;
const SILENT_CODE: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[serde(alias = "val")]
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

/// What is appended to each magnitude frame at model input time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    None,
    #[default]
    Chroma,
    /// Frame minus the previous frame of the same clip (zero for a clip's
    /// first frame), clipped to `[-1, 1]`.
    FirstOrderDiff,
}

impl Augmentation {
    pub fn extra_dims(self) -> usize {
        match self {
            Augmentation::None => 0,
            Augmentation::Chroma => NUM_CLASSES,
            Augmentation::FirstOrderDiff => NUM_BINS,
        }
    }

    pub fn input_dim(self) -> usize {
        NUM_BINS + self.extra_dims()
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Augmentation::None),
            "chroma" => Ok(Augmentation::Chroma),
            "first_order_diff" | "diff" => Ok(Augmentation::FirstOrderDiff),
            other => Err(Error::InvalidArgument(format!("unknown augmentation '{other}'"))),
        }
    }
}

/// One manifest entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub path: PathBuf,
    pub split: Split,
    pub clip_id: String,
}

/// A clip already decoded to audio.
#[derive(Debug, Clone)]
pub struct ClipAudio {
    pub clip_id: String,
    pub split: Split,
    pub audio: AudioBuffer,
    pub source: Option<PathBuf>,
}

/// Contiguous frame range contributed by one clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRange {
    pub clip_id: String,
    pub split: Split,
    pub start: usize,
    pub len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetadata {
    pub version: u32,
    pub frames: usize,
    pub bins: usize,
    pub fft_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub augmentation: Augmentation,
    pub build_seed: u64,
    /// Silent frames are kept with an all-zero chroma vector unless this
    /// is set.
    pub silent_dropped: bool,
    pub silent_frames: usize,
    pub clips: Vec<ClipRange>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    frames: Vec<SpectralFrame>,
    chroma: Vec<ChromaVector>,
    splits: Vec<Split>,
    metadata: CorpusMetadata,
}

/// Options for [`build_corpus`].
#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    pub augmentation: Augmentation,
    pub drop_silent: bool,
    pub seed: u64,
    pub resample: bool,
}

struct ClipFrames {
    frames: Vec<SpectralFrame>,
    chroma: Vec<ChromaVector>,
}

fn analyze_clip(clip: &ClipAudio, analyzer: &ChromaAnalyzer) -> Result<ClipFrames> {
    if frame_count(clip.audio.len(), FFT_SIZE, HOP_SIZE) == 0 {
        return Ok(ClipFrames { frames: Vec::new(), chroma: Vec::new() });
    }
    let clip_err = |e: Error| Error::Clip {
        path: clip.source.clone().unwrap_or_else(|| PathBuf::from(&clip.clip_id)),
        message: e.to_string(),
    };
    let stft_frames = stft(&clip.audio, FFT_SIZE, HOP_SIZE).map_err(clip_err)?;
    let mut frames = Vec::with_capacity(stft_frames.len());
    let mut chroma = Vec::with_capacity(stft_frames.len());
    for f in &stft_frames {
        chroma.push(analyzer.classify(&f.magnitudes).map_err(clip_err)?);
        frames.push(normalize_frame(&f.magnitudes).map_err(clip_err)?);
    }
    Ok(ClipFrames { frames, chroma })
}

/// Builds a corpus from in-memory clips. Output is ordered by `clip_id`,
/// then frame index.
pub fn build_corpus_from_audio(mut clips: Vec<ClipAudio>, options: BuildOptions) -> Result<Corpus> {
    if !clips.iter().any(|c| c.split == Split::Train) {
        return Err(Error::Config("corpus needs at least one train clip".into()));
    }
    clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    if let Some(w) = clips.windows(2).find(|w| w[0].clip_id == w[1].clip_id) {
        return Err(Error::Config(format!("duplicate clip_id '{}'", w[0].clip_id)));
    }
    for c in &clips {
        if c.audio.sample_rate() != SAMPLE_RATE {
            return Err(Error::Clip {
                path: c.source.clone().unwrap_or_else(|| PathBuf::from(&c.clip_id)),
                message: format!("sample rate {} Hz, expected {SAMPLE_RATE}", c.audio.sample_rate()),
            });
        }
    }

    let analyzer = ChromaAnalyzer::new(SAMPLE_RATE, FFT_SIZE);
    let analyzed: Vec<ClipFrames> = clips
        .par_iter()
        .map(|c| analyze_clip(c, &analyzer))
        .collect::<Result<_>>()?;

    let mut frames = Vec::new();
    let mut chroma = Vec::new();
    let mut splits = Vec::new();
    let mut ranges = Vec::new();
    let mut silent = 0;
    for (clip, a) in clips.into_iter().zip(analyzed) {
        let start = frames.len();
        for (f, c) in a.frames.into_iter().zip(a.chroma) {
            if f.is_silent() {
                silent += 1;
                if options.drop_silent {
                    continue;
                }
            }
            frames.push(f);
            chroma.push(c);
            splits.push(clip.split);
        }
        ranges.push(ClipRange {
            clip_id: clip.clip_id,
            split: clip.split,
            start,
            len: frames.len() - start,
            source: clip.source,
        });
    }
    if frames.is_empty() {
        return Err(Error::EmptyCorpus("no clip produced a usable frame".into()));
    }
    let metadata = CorpusMetadata {
        version: FORMAT_VERSION,
        frames: frames.len(),
        bins: NUM_BINS,
        fft_size: FFT_SIZE,
        hop: HOP_SIZE,
        sample_rate: SAMPLE_RATE,
        augmentation: options.augmentation,
        build_seed: options.seed,
        silent_dropped: options.drop_silent,
        silent_frames: silent,
        clips: ranges,
    };
    Ok(Corpus { frames, chroma, splits, metadata })
}

/// Reads every clip of a manifest and builds the corpus.
pub fn build_corpus(clips: &[ClipSpec], options: BuildOptions) -> Result<Corpus> {
    let audio: Vec<ClipAudio> = clips
        .par_iter()
        .map(|c| {
            Ok(ClipAudio {
                clip_id: c.clip_id.clone(),
                split: c.split,
                audio: wav::read_wav(&c.path, options.resample)?,
                source: Some(c.path.clone()),
            })
        })
        .collect::<Result<_>>()?;
    build_corpus_from_audio(audio, options)
}

/// Reads a JSON manifest; relative paths resolve against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ClipSpec>> {
    let text = std::fs::read_to_string(path)?;
    let mut clips: Vec<ClipSpec> = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = BTreeSet::new();
    for c in &mut clips {
        if !seen.insert(c.clip_id.clone()) {
            return Err(Error::Config(format!("duplicate clip_id '{}' in manifest", c.clip_id)));
        }
        if c.path.is_relative() {
            c.path = base.join(&c.path);
        }
    }
    Ok(clips)
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[SpectralFrame] {
        &self.frames
    }

    pub fn chroma(&self) -> &[ChromaVector] {
        &self.chroma
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn metadata(&self) -> &CorpusMetadata {
        &self.metadata
    }

    pub fn augmentation(&self) -> Augmentation {
        self.metadata.augmentation
    }

    /// Frame indices belonging to `split`, in corpus order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Pitch classes labelling at least one non-silent frame of `split`.
    pub fn classes_present(&self, split: Split) -> BTreeSet<PitchClass> {
        self.indices(split).into_iter().filter_map(|i| self.chroma[i].class()).collect()
    }

    /// Clip ids per split.
    pub fn clip_ids_by_split(&self) -> BTreeMap<Split, BTreeSet<String>> {
        let mut map: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
        for r in &self.metadata.clips {
            map.entry(r.split).or_default().insert(r.clip_id.clone());
        }
        map
    }

    /// True when no frame precedes `index` within its clip.
    pub fn is_clip_start(&self, index: usize) -> bool {
        self.metadata.clips.iter().any(|r| r.start == index && r.len > 0)
    }

    /// Writes one model input row for frame `index`.
    pub fn write_input(&self, index: usize, augmentation: Augmentation, out: &mut [f32]) {
        let frame = self.frames[index].magnitudes();
        out[..NUM_BINS].copy_from_slice(frame);
        match augmentation {
            Augmentation::None => {}
            Augmentation::Chroma => self.chroma[index].write_onehot(&mut out[NUM_BINS..]),
            Augmentation::FirstOrderDiff => {
                let dst = &mut out[NUM_BINS..2 * NUM_BINS];
                if self.is_clip_start(index) {
                    dst.fill(0.0);
                } else {
                    let prev = self.frames[index - 1].magnitudes();
                    for ((d, &a), &b) in dst.iter_mut().zip(frame).zip(prev) {
                        *d = (a - b).clamp(-1.0, 1.0);
                    }
                }
            }
        }
    }

    /// A copy without silent frames, as requested by `--drop-silent` at
    /// training time.
    pub fn without_silent(&self) -> Corpus {
        let mut out = Corpus {
            frames: Vec::new(),
            chroma: Vec::new(),
            splits: Vec::new(),
            metadata: self.metadata.clone(),
        };
        out.metadata.clips.clear();
        for r in &self.metadata.clips {
            let start = out.frames.len();
            for i in r.start..r.start + r.len {
                if !self.frames[i].is_silent() {
                    out.frames.push(self.frames[i].clone());
                    out.chroma.push(self.chroma[i]);
                    out.splits.push(self.splits[i]);
                }
            }
            out.metadata.clips.push(ClipRange { start, len: out.frames.len() - start, ..r.clone() });
        }
        out.metadata.frames = out.frames.len();
        out.metadata.silent_dropped = true;
        out
    }

    /// SHA-256 of the serialized corpus.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        // Writing to a hasher cannot fail.
        self.write_to(HashWriter(&mut hasher)).expect("hash write");
        hex::encode(hasher.finalize())
    }

    fn check_integrity(&self) -> Result<()> {
        let by_split = self.clip_ids_by_split();
        for (a, ids_a) in &by_split {
            for (b, ids_b) in by_split.range(*a..).skip(1) {
                if let Some(id) = ids_a.intersection(ids_b).next() {
                    return Err(Error::Corrupt(format!("clip '{id}' appears in both {a} and {b}")));
                }
            }
        }
        let mut next = 0;
        for r in &self.metadata.clips {
            if r.start != next {
                return Err(Error::Corrupt(format!("clip '{}' range does not follow its predecessor", r.clip_id)));
            }
            next += r.len;
            if self.splits[r.start..r.start + r.len].iter().any(|&s| s != r.split) {
                return Err(Error::Corrupt(format!("frames of clip '{}' carry another split", r.clip_id)));
            }
        }
        if next != self.len() {
            return Err(Error::Corrupt("clip ranges do not cover every frame".into()));
        }
        Ok(())
    }

    fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.metadata)?;
        w.write_all(MAGIC_PREFIX)?;
        w.write_all(FORMAT_VERSION.to_string().as_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(NUM_BINS * 4);
        for f in &self.frames {
            buf.clear();
            for m in f.magnitudes() {
                buf.extend_from_slice(&m.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        for f in &self.frames {
            w.write_all(&f.peak().to_le_bytes())?;
        }
        let chroma: Vec<u8> = self
            .chroma
            .iter()
            .map(|c| c.class().map_or(SILENT_CODE, |p| p.index() as u8))
            .collect();
        w.write_all(&chroma)?;
        let splits: Vec<u8> = self.splits.iter().map(|s| s.code()).collect();
        w.write_all(&splits)?;
        w.flush()?;
        Ok(())
    }
}

struct HashWriter<'a>(&'a mut Sha256);

impl Write for HashWriter<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    corpus.write_to(BufWriter::new(File::create(path)?))
}

fn read_exact_or_corrupt<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Corrupt(format!("truncated corpus while reading {what}")),
        _ => Error::Io(e),
    })
}

/// Reads only the magic and metadata header.
pub fn read_corpus_header<R: Read>(r: &mut R) -> Result<CorpusMetadata> {
    let mut magic = [0u8; 4];
    read_exact_or_corrupt(r, &mut magic, "magic")?;
    if &magic[..3] != MAGIC_PREFIX {
        return Err(Error::Corrupt("not a corpus file (bad magic)".into()));
    }
    if magic[3] != b'0' + FORMAT_VERSION as u8 {
        return Err(Error::UnsupportedVersion {
            found: String::from_utf8_lossy(&magic).into_owned(),
            expected: format!("TCV{FORMAT_VERSION}"),
        });
    }
    let mut len = [0u8; 4];
    read_exact_or_corrupt(r, &mut len, "header length")?;
    let len = u32::from_le_bytes(len) as usize;
    if len > 64 << 20 {
        return Err(Error::Corrupt(format!("implausible header length {len}")));
    }
    let mut header = vec![0u8; len];
    read_exact_or_corrupt(r, &mut header, "metadata header")?;
    let meta: CorpusMetadata =
        serde_json::from_slice(&header).map_err(|e| Error::Corrupt(format!("metadata header: {e}")))?;
    if meta.version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: meta.version.to_string(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    if meta.bins != NUM_BINS || meta.fft_size != FFT_SIZE || meta.hop != HOP_SIZE {
        return Err(Error::Corrupt(format!(
            "unsupported geometry: {} bins, fft {}, hop {}",
            meta.bins, meta.fft_size, meta.hop
        )));
    }
    Ok(meta)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let mut r = BufReader::new(File::open(path)?);
    let metadata = read_corpus_header(&mut r)?;
    let m = metadata.frames;

    let mut frames = Vec::with_capacity(m);
    let mut raw = vec![0u8; NUM_BINS * 4];
    let mut mags = Vec::with_capacity(m);
    for _ in 0..m {
        read_exact_or_corrupt(&mut r, &mut raw, "frames")?;
        let v: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        mags.push(v);
    }
    let mut peaks = vec![0u8; m * 4];
    read_exact_or_corrupt(&mut r, &mut peaks, "peaks")?;
    for (i, (mag, p)) in mags.into_iter().zip(peaks.chunks_exact(4)).enumerate() {
        let peak = f32::from_le_bytes(p.try_into().unwrap());
        frames.push(SpectralFrame::from_parts(mag, peak).map_err(|e| Error::Corrupt(format!("frame {i}: {e}")))?);
    }
    let mut codes = vec![0u8; m];
    read_exact_or_corrupt(&mut r, &mut codes, "chroma labels")?;
    let chroma = codes
        .iter()
        .map(|&c| match c {
            SILENT_CODE => Ok(ChromaVector::silent()),
            c => PitchClass::new(c as usize)
                .map(ChromaVector::from)
                .map_err(|_| Error::Corrupt(format!("chroma code {c}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    read_exact_or_corrupt(&mut r, &mut codes, "split labels")?;
    let splits = codes
        .iter()
        .map(|&c| Split::from_code(c).ok_or_else(|| Error::Corrupt(format!("split code {c}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Corrupt("trailing bytes after split labels".into()));
    }
    let corpus = Corpus { frames, chroma, splits, metadata };
    corpus.check_integrity()?;
    Ok(corpus)
}
