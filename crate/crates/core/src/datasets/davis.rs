use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use ndarray::Array3;

use super::{read_flo, DataError, Domain, FrameSample, Split};
use crate::nn::Map;

/// One frame of an ingested sequence. `frame_index` is always ≥ 1; the mask
/// path is present only for frames that carry an annotation.
#[derive(Debug, Clone)]
pub struct FrameEntry {
    pub frame_index: usize,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub flow: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SequenceEntry {
    pub id: String,
    /// Whether the sequence has an annotation directory at all.
    pub labeled: bool,
    pub frames: Vec<FrameEntry>,
}

/// An ingested DAVIS-style directory: `JPEGImages/<seq>/%05d.jpg`,
/// `Annotations/<seq>/%05d.png` (optional per sequence, subsets allowed),
/// `Flow/<seq>/%05d.flo` (optional), with sequence membership declared in
/// `ImageSets/{train,test}.txt`.
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    pub root: PathBuf,
    pub split: Split,
    pub sequences: Vec<SequenceEntry>,
}

/// Reads the directory structure (not the pixels) for one split. Frame 0 of
/// every sequence is excluded: a sample needs flow, and flow needs a
/// predecessor frame.
pub fn load_davis_layout(root: &Path, split: Split) -> Result<DatasetHandle, DataError> {
    let sets = root.join("ImageSets");
    let mut list = sets.join(format!("{}.txt", split.file_stem()));
    if !list.is_file() && split == Split::Test {
        // DAVIS publishes val.txt; accept it as the test list.
        let val = sets.join("val.txt");
        if val.is_file() {
            list = val;
        }
    }
    if !list.is_file() {
        return Err(DataError::LayoutError(format!(
            "ImageSets/{}.txt under {}",
            split.file_stem(),
            root.display()
        )));
    }
    let body = fs::read_to_string(&list).map_err(|e| DataError::io(&list, e))?;
    let ids: Vec<String> = body
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();

    let mut sequences = Vec::with_capacity(ids.len());
    for id in ids {
        sequences.push(load_sequence(root, &id)?);
    }
    Ok(DatasetHandle { root: root.to_path_buf(), split, sequences })
}

fn load_sequence(root: &Path, id: &str) -> Result<SequenceEntry, DataError> {
    let img_dir = root.join("JPEGImages").join(id);
    if !img_dir.is_dir() {
        return Err(DataError::LayoutError(format!("JPEGImages/{id}")));
    }
    let images = indexed_files(&img_dir, &["jpg", "jpeg", "png"])?;
    if images.is_empty() {
        return Err(DataError::LayoutError(format!("JPEGImages/{id} contains no frames")));
    }

    let ann_dir = root.join("Annotations").join(id);
    let labeled = ann_dir.is_dir();
    let masks = if labeled { indexed_files(&ann_dir, &["png"])? } else { Vec::new() };
    for (idx, path) in &masks {
        if !images.iter().any(|(i, _)| i == idx) {
            return Err(DataError::CountMismatch {
                sequence: id.to_string(),
                detail: format!(
                    "annotation {} has no matching image frame",
                    path.file_name().unwrap_or_default().to_string_lossy()
                ),
            });
        }
    }

    let flow_dir = root.join("Flow").join(id);
    let flows = if flow_dir.is_dir() { indexed_files(&flow_dir, &["flo"])? } else { Vec::new() };

    let mut frames = Vec::new();
    for (idx, image) in &images {
        if *idx == 0 || !images.iter().any(|(i, _)| *i == idx - 1) {
            continue; // no predecessor frame, no flow pairing
        }
        frames.push(FrameEntry {
            frame_index: *idx,
            image: image.clone(),
            mask: masks.iter().find(|(i, _)| i == idx).map(|(_, p)| p.clone()),
            flow: flows.iter().find(|(i, _)| i == idx).map(|(_, p)| p.clone()),
        });
    }
    Ok(SequenceEntry { id: id.to_string(), labeled, frames })
}

/// Lists `<index>.<ext>` files sorted by numeric index.
fn indexed_files(dir: &Path, exts: &[&str]) -> Result<Vec<(usize, PathBuf)>, DataError> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| DataError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| DataError::io(dir, e))?;
        let path = entry.path();
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else { continue };
        if !exts.iter().any(|x| x.eq_ignore_ascii_case(ext)) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let idx: usize = stem.parse().map_err(|_| {
            DataError::Malformed(format!("non-numeric frame name {}", path.display()))
        })?;
        out.push((idx, path));
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out)
}

impl DatasetHandle {
    /// Total usable frames across sequences.
    pub fn count_samples(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }

    /// Loads one frame with its mask (when annotated). The domain tag
    /// follows the annotation state of the sequence.
    pub fn load_sample(&self, seq: usize, frame: usize) -> Result<FrameSample, DataError> {
        let sequence = &self.sequences[seq];
        let entry = &sequence.frames[frame];
        let mask = match &entry.mask {
            Some(path) => Some(read_mask(path)?),
            None => None,
        };
        let domain = if sequence.labeled { Domain::Source } else { Domain::Target };
        self.assemble(sequence, entry, mask, domain)
    }

    /// Loads one frame while guaranteeing the annotation file is never
    /// opened — the unlabeled path used by domain adaptation, where target
    /// labels must not leak into training.
    pub fn load_sample_unlabeled(
        &self,
        seq: usize,
        frame: usize,
    ) -> Result<FrameSample, DataError> {
        let sequence = &self.sequences[seq];
        let entry = &sequence.frames[frame];
        self.assemble(sequence, entry, None, Domain::Target)
    }

    fn assemble(
        &self,
        sequence: &SequenceEntry,
        entry: &FrameEntry,
        mask: Option<Map<f32>>,
        domain: Domain,
    ) -> Result<FrameSample, DataError> {
        let image = read_image(&entry.image)?;
        let flow_path = entry.flow.as_ref().ok_or_else(|| {
            DataError::LayoutError(format!(
                "Flow/{}/{:05}.flo",
                sequence.id, entry.frame_index
            ))
        })?;
        let flow = read_flo(flow_path)?;
        let sample = FrameSample {
            image,
            flow,
            mask,
            sequence_id: sequence.id.clone(),
            frame_index: entry.frame_index,
            domain,
        };
        sample.validate()?;
        Ok(sample)
    }
}

/// Decodes an RGB image file into an `(h, w, 3)` map in [0, 1].
pub(crate) fn read_image(path: &Path) -> Result<Map<f32>, DataError> {
    let img = image::open(path).map_err(|e| DataError::codec(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let mut map = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for ch in 0..3 {
            map[(y as usize, x as usize, ch)] = px.0[ch] as f32 / 255.0;
        }
    }
    Ok(map)
}

/// Decodes a {0, 255} mask PNG into an `(h, w, 1)` map of exact 0/1 values.
pub(crate) fn read_mask(path: &Path) -> Result<Map<f32>, DataError> {
    let img = image::open(path).map_err(|e| DataError::codec(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    let mut map = Array3::zeros((h as usize, w as usize, 1));
    for (x, y, px) in img.enumerate_pixels() {
        map[(y as usize, x as usize, 0)] = if px.0[0] > 127 { 1.0 } else { 0.0 };
    }
    Ok(map)
}

/// Encodes an `(h, w, 3)` map in [0, 1] as a quality-95 JPEG.
pub(crate) fn write_jpeg(map: &Map<f32>, path: &Path) -> Result<(), DataError> {
    let (h, w, _) = map.dim();
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| {
            (map[(y as usize, x as usize, ch)].clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    });
    let file = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let encoder = JpegEncoder::new_with_quality(BufWriter::new(file), 95);
    img.write_with_encoder(encoder).map_err(|e| DataError::codec(path, e))
}

/// Encodes an `(h, w, 1)` binary mask as a {0, 255} grayscale PNG.
pub(crate) fn write_mask_png(mask: &Map<f32>, path: &Path) -> Result<(), DataError> {
    let (h, w, _) = mask.dim();
    let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask[(y as usize, x as usize, 0)] > 0.5 { 255u8 } else { 0 }])
    });
    img.save(path).map_err(|e| DataError::codec(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{materialize_sequences, SyntheticSpec};

    fn materialized(n_train: usize, n_test: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        for i in 0..n_train {
            let spec = SyntheticSpec { seed: 100 + i as u64, frames: 5, ..Default::default() };
            entries.push((Split::Train, spec));
        }
        for i in 0..n_test {
            let spec = SyntheticSpec { seed: 200 + i as u64, frames: 5, ..Default::default() };
            entries.push((Split::Test, spec));
        }
        materialize_sequences(dir.path(), &entries).unwrap();
        dir
    }

    #[test]
    fn loads_materialized_layout_with_frame_zero_excluded() {
        let dir = materialized(2, 1);
        let handle = load_davis_layout(dir.path(), Split::Train).unwrap();
        assert_eq!(handle.sequences.len(), 2);
        // 5 rendered frames -> 4 usable samples per sequence.
        assert_eq!(handle.count_samples(), 8);
        for seq in &handle.sequences {
            assert!(seq.labeled);
            assert_eq!(seq.frames[0].frame_index, 1);
        }
        let sample = handle.load_sample(0, 0).unwrap();
        sample.validate().unwrap();
        assert_eq!(sample.domain, Domain::Source);
        assert!(sample.mask.is_some());

        let test = load_davis_layout(dir.path(), Split::Test).unwrap();
        assert_eq!(test.sequences.len(), 1);
        let train_ids: Vec<_> = handle.sequences.iter().map(|s| &s.id).collect();
        assert!(test.sequences.iter().all(|s| !train_ids.contains(&&s.id)));
    }

    #[test]
    fn missing_imagesets_is_a_layout_error() {
        let dir = tempfile::tempdir().unwrap();
        match load_davis_layout(dir.path(), Split::Train) {
            Err(DataError::LayoutError(what)) => assert!(what.contains("ImageSets/train.txt")),
            other => panic!("expected LayoutError, got {other:?}"),
        }
    }

    #[test]
    fn sequence_without_annotations_is_target_style() {
        let dir = materialized(1, 0);
        let handle = load_davis_layout(dir.path(), Split::Train).unwrap();
        let id = handle.sequences[0].id.clone();
        fs::remove_dir_all(dir.path().join("Annotations").join(&id)).unwrap();

        let handle = load_davis_layout(dir.path(), Split::Train).unwrap();
        assert!(!handle.sequences[0].labeled);
        let sample = handle.load_sample(0, 1).unwrap();
        assert_eq!(sample.domain, Domain::Target);
        assert!(sample.mask.is_none());
    }

    #[test]
    fn orphan_annotation_is_a_count_mismatch() {
        let dir = materialized(1, 0);
        let handle = load_davis_layout(dir.path(), Split::Train).unwrap();
        let id = handle.sequences[0].id.clone();
        let orphan = dir.path().join("Annotations").join(&id).join("00099.png");
        let real = dir.path().join("Annotations").join(&id).join("00001.png");
        fs::copy(real, orphan).unwrap();
        match load_davis_layout(dir.path(), Split::Train) {
            Err(DataError::CountMismatch { sequence, detail }) => {
                assert_eq!(sequence, id);
                assert!(detail.contains("00099"));
            }
            other => panic!("expected CountMismatch, got {other:?}"),
        }
    }

    #[test]
    fn subset_annotations_load_with_gaps() {
        let dir = materialized(1, 0);
        let handle = load_davis_layout(dir.path(), Split::Train).unwrap();
        let id = handle.sequences[0].id.clone();
        fs::remove_file(dir.path().join("Annotations").join(&id).join("00002.png")).unwrap();

        let handle = load_davis_layout(dir.path(), Split::Train).unwrap();
        let seq = &handle.sequences[0];
        assert!(seq.labeled);
        assert_eq!(seq.frames.len(), 4, "all frames loadable");
        let unannotated = seq.frames.iter().find(|f| f.frame_index == 2).unwrap();
        assert!(unannotated.mask.is_none());
        let annotated = seq.frames.iter().find(|f| f.frame_index == 3).unwrap();
        assert!(annotated.mask.is_some());
    }

    #[test]
    fn unlabeled_loading_never_opens_annotation_files() {
        let dir = materialized(1, 0);
        let handle = load_davis_layout(dir.path(), Split::Train).unwrap();
        let id = handle.sequences[0].id.clone();
        // Poison every annotation: any attempt to decode one now fails.
        for t in 0..5 {
            fs::write(
                dir.path().join("Annotations").join(&id).join(format!("{t:05}.png")),
                b"not a png",
            )
            .unwrap();
        }
        let handle = load_davis_layout(dir.path(), Split::Train).unwrap();
        for f in 0..handle.sequences[0].frames.len() {
            let sample = handle.load_sample_unlabeled(0, f).unwrap();
            assert!(sample.mask.is_none());
            assert_eq!(sample.domain, Domain::Target);
        }
        // The labeled path *does* read them, and fails loudly.
        assert!(handle.load_sample(0, 0).is_err());
    }

    #[test]
    fn missing_flow_surfaces_at_load_time() {
        let dir = materialized(1, 0);
        let handle = load_davis_layout(dir.path(), Split::Train).unwrap();
        let id = handle.sequences[0].id.clone();
        fs::remove_dir_all(dir.path().join("Flow").join(&id)).unwrap();
        let handle = load_davis_layout(dir.path(), Split::Train).unwrap();
        match handle.load_sample(0, 0) {
            Err(DataError::LayoutError(what)) => assert!(what.contains("Flow/")),
            other => panic!("expected LayoutError, got {other:?}"),
        }
    }
}
