//! Latent-space characterization: corpus embeddings and exhaustive mesh
//! sampling of bounded latent spaces.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chroma::{ChromaAnalyzer, ChromaVector, PitchClass, CLASS_NAMES};
use crate::corpus::{Corpus, Split};
use crate::model::{Autoencoder, DecodeScratch};
use crate::train::embed_indices;
use crate::{Error, Result, FFT_SIZE, NUM_BINS, NUM_CLASSES, SAMPLE_RATE};

/// Grid points decoded per batch during mesh sampling.
const MESH_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub dim: usize,
    /// Row-major `len × dim`.
    pub points: Vec<f32>,
    pub classes: Vec<PitchClass>,
    pub splits: Vec<Split>,
    /// Per-dimension `(min, max)` over the points.
    pub bounds: Vec<(f32, f32)>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f32] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header: Vec<String> = (0..self.dim).map(|i| format!("dim_{i}")).collect();
        header.push("note_class".into());
        header.push("split".into());
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let coords: Vec<String> = self.point(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{},{}", coords.join(","), self.classes[i].index(), self.splits[i])?;
        }
        Ok(())
    }

    /// Scatter plot colored by note class. Only defined for `dim == 2`.
    pub fn to_svg(&self) -> Result<String> {
        if self.dim != 2 {
            return Err(Error::InvalidArgument(format!("scatter plots need 2 dimensions, embedding has {}", self.dim)));
        }
        let (size, margin) = (640.0f32, 48.0f32);
        let span = |(lo, hi): (f32, f32)| if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let (x0, x1) = span(self.bounds.first().copied().unwrap_or((0.0, 1.0)));
        let (y0, y1) = span(self.bounds.get(1).copied().unwrap_or((0.0, 1.0)));
        let plot = size - 2.0 * margin;
        let px = |v: f32| margin + (v - x0) / (x1 - x0) * plot;
        let py = |v: f32| size - margin - (v - y0) / (y1 - y0) * plot;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            w = size + 120.0,
            h = size
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{margin}" y="{margin}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
        );
        for (v, x, y, anchor) in [
            (x0, px(x0), size - margin + 16.0, "start"),
            (x1, px(x1), size - margin + 16.0, "end"),
        ] {
            let _ = writeln!(s, r#"<text x="{x}" y="{y}" font-size="11" text-anchor="{anchor}">{v:.3}</text>"#);
        }
        for (v, y) in [(y0, py(y0)), (y1, py(y1) + 10.0)] {
            let _ = writeln!(s, r#"<text x="{}" y="{y}" font-size="11" text-anchor="end">{v:.3}</text>"#, margin - 4.0);
        }
        for i in 0..self.len() {
            let p = self.point(i);
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}" fill-opacity="0.7"/>"#,
                px(p[0]),
                py(p[1]),
                class_color(self.classes[i])
            );
        }
        let present: BTreeSet<PitchClass> = self.classes.iter().copied().collect();
        for (row, c) in present.iter().enumerate() {
            let y = margin + 16.0 * row as f32;
            let _ = writeln!(
                s,
                r#"<circle cx="{}" cy="{}" r="5" fill="{}"/><text x="{}" y="{}" font-size="12">{}</text>"#,
                size + 10.0,
                y,
                class_color(*c),
                size + 20.0,
                y + 4.0,
                c.name()
            );
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}

fn class_color(c: PitchClass) -> String {
    format!("hsl({}, 70%, 45%)", c.index() * 30)
}

/// Encodes every non-silent frame of `split` (all splits when `None`).
pub fn embed_corpus(model: &Autoencoder, corpus: &Corpus, split: Option<Split>) -> Result<EmbeddingSet> {
    let idx: Vec<usize> = (0..corpus.len())
        .filter(|&i| split.is_none_or(|s| corpus.splits()[i] == s))
        .filter(|&i| !corpus.frames()[i].is_silent())
        .collect();
    let dim = model.bottleneck_width();
    let points = embed_indices(model, corpus, &idx)?;
    let mut bounds = vec![(f32::INFINITY, f32::NEG_INFINITY); dim];
    for row in points.chunks_exact(dim) {
        for (b, &v) in bounds.iter_mut().zip(row) {
            *b = (b.0.min(v), b.1.max(v));
        }
    }
    Ok(EmbeddingSet {
        dim,
        points,
        classes: idx.iter().map(|&i| corpus.chroma()[i].class().expect("non-silent frame")).collect(),
        splits: idx.iter().map(|&i| corpus.splits()[i]).collect(),
        bounds,
    })
}

/// Writes the CSV and, for 2-D sets when `svg` is given, the scatter plot.
/// Returns whether an image was written.
pub fn export_embedding(set: &EmbeddingSet, csv: &Path, svg: Option<&Path>) -> Result<bool> {
    set.write_csv(std::io::BufWriter::new(std::fs::File::create(csv)?))?;
    match svg {
        Some(path) if set.dim == 2 => {
            std::fs::write(path, set.to_svg()?)?;
            Ok(true)
        }
        _ => Ok(false),
    }
}

/// Coordinates of grid point `index` of a `mesh_length^d` grid spanning
/// `[0, 1]` inclusive; dimension 0 varies fastest.
pub fn mesh_point(index: usize, dim: usize, mesh_length: usize, out: &mut [f32]) {
    let step = 1.0 / (mesh_length - 1) as f64;
    let mut rest = index;
    for o in out.iter_mut().take(dim) {
        *o = ((rest % mesh_length) as f64 * step) as f32;
        rest /= mesh_length;
    }
}

pub fn mesh_size(dim: usize, mesh_length: usize) -> Result<usize> {
    u32::try_from(dim)
        .ok()
        .and_then(|d| mesh_length.checked_pow(d))
        .filter(|&n| n <= 1 << 32)
        .ok_or_else(|| Error::InvalidArgument(format!("a {mesh_length}^{dim} mesh is too large")))
}

/// All grid points, row-major.
pub fn mesh_grid(dim: usize, mesh_length: usize) -> Result<Vec<f32>> {
    if mesh_length < 2 {
        return Err(Error::InvalidArgument(format!("mesh length must be at least 2, got {mesh_length}")));
    }
    let n = mesh_size(dim, mesh_length)?;
    let mut grid = vec![0.0f32; n * dim];
    for (i, row) in grid.chunks_exact_mut(dim).enumerate() {
        mesh_point(i, dim, mesh_length, row);
    }
    Ok(grid)
}

fn check_meshable(model: &Autoencoder, mesh_length: usize) -> Result<()> {
    let cfg = model.config();
    if !cfg.chroma_skip {
        return Err(Error::UnsupportedModel("mesh sampling needs a chroma skip connection".into()));
    }
    if !cfg.is_bounded() {
        return Err(Error::UnsupportedModel("mesh sampling needs a sigmoid (bounded) bottleneck".into()));
    }
    if cfg.frame_bins != NUM_BINS {
        return Err(Error::UnsupportedModel(format!("model decodes {} bins, expected {NUM_BINS}", cfg.frame_bins)));
    }
    if mesh_length < 2 {
        return Err(Error::InvalidArgument(format!("mesh length must be at least 2, got {mesh_length}")));
    }
    Ok(())
}

/// Fraction of grid points whose decoded spectrum, conditioned on `class`,
/// classifies back to `class`. Silent outputs count as mismatches.
pub fn mesh_sample(model: &Autoencoder, mesh_length: usize, class: PitchClass) -> Result<f64> {
    check_meshable(model, mesh_length)?;
    let d = model.bottleneck_width();
    let total = mesh_size(d, mesh_length)?;
    let analyzer = ChromaAnalyzer::new(SAMPLE_RATE, FFT_SIZE);
    let onehot = ChromaVector::from(class).onehot();
    let chunks = total.div_ceil(MESH_CHUNK);
    let matches: usize = (0..chunks)
        .into_par_iter()
        .map_init(
            || (DecodeScratch::default(), Vec::new(), Vec::new()),
            |(scratch, latent, chroma), c| -> Result<usize> {
                let start = c * MESH_CHUNK;
                let n = MESH_CHUNK.min(total - start);
                latent.resize(n * d, 0.0f32);
                for (r, row) in latent.chunks_exact_mut(d).enumerate() {
                    mesh_point(start + r, d, mesh_length, row);
                }
                chroma.clear();
                for _ in 0..n {
                    chroma.extend_from_slice(&onehot);
                }
                let out = model.decode_rows_with(latent, chroma, n, scratch)?;
                let mut hits = 0;
                for frame in out.chunks_exact(NUM_BINS) {
                    if analyzer.classify(frame)?.class() == Some(class) {
                        hits += 1;
                    }
                }
                Ok(hits)
            },
        )
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(matches as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshReport {
    pub bottleneck: usize,
    pub mesh_length: usize,
    pub samples_per_class: usize,
    /// Match fraction per pitch class; `None` for classes absent from the
    /// training data.
    pub fractions: [Option<f64>; NUM_CLASSES],
}

impl MeshReport {
    pub fn present(&self) -> impl Iterator<Item = (PitchClass, f64)> + '_ {
        PitchClass::all().filter_map(|c| self.fractions[c.index()].map(|f| (c, f)))
    }

    /// One row per class; absent classes show `--`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "class,name,match_fraction,samples")?;
        for (i, f) in self.fractions.iter().enumerate() {
            match f {
                Some(f) => writeln!(w, "{i},{},{f:.6},{}", CLASS_NAMES[i], self.samples_per_class)?,
                None => writeln!(w, "{i},{},--,0", CLASS_NAMES[i])?,
            }
        }
        Ok(())
    }
}

/// Runs [`mesh_sample`] for each class in `classes`.
pub fn sampling_report(model: &Autoencoder, classes: &BTreeSet<PitchClass>, mesh_length: usize) -> Result<MeshReport> {
    check_meshable(model, mesh_length)?;
    let d = model.bottleneck_width();
    let mut fractions = [None; NUM_CLASSES];
    for &c in classes {
        fractions[c.index()] = Some(mesh_sample(model, mesh_length, c)?);
    }
    Ok(MeshReport { bottleneck: d, mesh_length, samples_per_class: mesh_size(d, mesh_length)?, fractions })
}

/// [`sampling_report`] over the classes of the corpus's training split.
pub fn sampling_report_for_corpus(model: &Autoencoder, corpus: &Corpus, mesh_length: usize) -> Result<MeshReport> {
    sampling_report(model, &corpus.classes_present(Split::Train), mesh_length)
}

/// Fraction of non-silent frames of `split` whose reconstruction,
/// conditioned on the frame's own chroma, classifies to that chroma.
pub fn reconstruction_accuracy(model: &Autoencoder, corpus: &Corpus, split: Split) -> Result<f64> {
    let set = embed_corpus(model, corpus, Some(split))?;
    if set.is_empty() {
        return Err(Error::InvalidArgument(format!("{split} split has no non-silent frames")));
    }
    let analyzer = ChromaAnalyzer::new(SAMPLE_RATE, FFT_SIZE);
    let mut hits = 0;
    for i in 0..set.len() {
        let out = model.decode(set.point(i), set.classes[i].into())?;
        if analyzer.classify(&out)?.class() == Some(set.classes[i]) {
            hits += 1;
        }
    }
    Ok(hits as f64 / set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Augmentation;
    use crate::model::{build_model, ModelConfig};
    use crate::nn::Activation;
    use crate::synthetic::SyntheticSpec;

    fn model(skip: bool, act: Activation, d: usize) -> Autoencoder {
        let mut cfg = ModelConfig::new(d, act, Augmentation::Chroma, skip);
        cfg.encoder_widths = vec![16];
        build_model(cfg, 3).unwrap()
    }

    #[test]
    fn grid_coverage() {
        for (d, l) in [(1, 2), (2, 5), (3, 4)] {
            let g = mesh_grid(d, l).unwrap();
            let rows: Vec<Vec<u32>> = g.chunks_exact(d).map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
            let distinct: BTreeSet<_> = rows.iter().cloned().collect();
            assert_eq!(distinct.len(), l.pow(d as u32));
            for k in 0..d {
                let col: Vec<f32> = g.chunks_exact(d).map(|r| r[k]).collect();
                assert_eq!(col.iter().cloned().fold(f32::INFINITY, f32::min), 0.0);
                assert_eq!(col.iter().cloned().fold(f32::NEG_INFINITY, f32::max), 1.0);
            }
        }
        assert_eq!(mesh_size(2, 350).unwrap(), 122_500);
        assert_eq!(mesh_size(8, 5).unwrap(), 390_625);
        assert!(mesh_grid(2, 1).is_err());
    }

    #[test]
    fn unsupported_models() {
        let e = mesh_sample(&model(false, Activation::Sigmoid, 2), 4, PitchClass::C);
        assert!(matches!(e, Err(Error::UnsupportedModel(_))));
        let e = mesh_sample(&model(true, Activation::LeakyRelu, 2), 4, PitchClass::C);
        assert!(matches!(e, Err(Error::UnsupportedModel(_))));
        let e = mesh_sample(&model(true, Activation::Sigmoid, 2), 1, PitchClass::C);
        assert!(matches!(e, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn report_structure_and_determinism() {
        let m = model(true, Activation::Sigmoid, 3);
        let classes: BTreeSet<_> = [0, 4, 7].into_iter().map(|c| PitchClass::new(c).unwrap()).collect();
        let r = sampling_report(&m, &classes, 6).unwrap();
        assert_eq!(r.samples_per_class, 216);
        assert_eq!(r.present().count(), 3);
        assert!(r.present().all(|(_, f)| (0.0..=1.0).contains(&f)));
        assert_eq!(r, sampling_report(&m, &classes, 6).unwrap());
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert_eq!(csv.lines().count(), 13);
        assert_eq!(csv.lines().filter(|l| l.contains(",--,")).count(), 9);
        // Counting by hand through the public single-frame decode agrees.
        let analyzer = ChromaAnalyzer::new(SAMPLE_RATE, FFT_SIZE);
        let g = mesh_grid(3, 6).unwrap();
        let hits = g
            .chunks_exact(3)
            .filter(|z| analyzer.classify(&m.decode(z, PitchClass::new(4).unwrap().into()).unwrap()).unwrap().class() == PitchClass::new(4).ok())
            .count();
        assert!((r.fractions[4].unwrap() - hits as f64 / 216.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_export() {
        let mut spec = SyntheticSpec::c_major(1).with_notes(&[60, 67]);
        spec.seconds = 0.2;
        let corpus = spec.build(Augmentation::Chroma).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (d, act) in [(2, Activation::Sigmoid), (3, Activation::LeakyRelu)] {
            let m = model(true, act, d);
            let set = embed_corpus(&m, &corpus, Some(Split::Train)).unwrap();
            let nonsilent = corpus.indices(Split::Train).iter().filter(|&&i| !corpus.frames()[i].is_silent()).count();
            assert_eq!(set.len(), nonsilent);
            if act == Activation::Sigmoid {
                assert!(set.points.iter().all(|&v| v > 0.0 && v < 1.0));
            }
            assert!(set.bounds.iter().all(|(lo, hi)| lo <= hi));
            let csv = dir.path().join(format!("e{d}.csv"));
            let svg = dir.path().join(format!("e{d}.svg"));
            let wrote = export_embedding(&set, &csv, Some(&svg)).unwrap();
            assert_eq!(wrote, d == 2);
            assert_eq!(svg.exists(), d == 2);
            let text = std::fs::read_to_string(&csv).unwrap();
            let header = text.lines().next().unwrap();
            assert_eq!(header.split(',').count(), d + 2);
            assert!(header.starts_with("dim_0,"));
            assert_eq!(text.lines().count() - 1, set.len());
        }
    }
}
