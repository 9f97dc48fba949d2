//! File formats at the pipeline boundary: the binary feature format, the
//! annotation CSV and the task manifest.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{ClipSpan, GroundTruth, Segment, TaskManifest, VideoFeatures};

pub(crate) const FEATURE_MAGIC: &[u8; 4] = b"UGF1";
pub(crate) const FEATURE_VERSION: u32 = 1;

pub(crate) fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Dimension(format!("truncated file while reading {what}")))
}

pub(crate) fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32(r: &mut impl Read, what: &str) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(f32::from_le_bytes(b))
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format(format!("{what}: file too short for magic")))?;
    if &b != magic {
        return Err(Error::Format(format!(
            "{what}: bad magic {:?}, expected {:?}",
            b,
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub(crate) fn expect_eof(r: &mut impl Read, what: &str) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(Error::Format(format!("{what}: trailing bytes after payload"))),
    }
}

/// Serialize features to the binary clip-feature format:
/// magic `UGF1`, version, id length + UTF-8 id, `m`, `fps`, `d`, `z`,
/// `z` span records of `(start, end)` u32 pairs, then `z*d` f32 LE values.
pub fn write_features(vf: &VideoFeatures, path: &Path) -> Result<()> {
    vf.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    let id = vf.video_id.as_bytes();
    w.write_all(&(id.len() as u32).to_le_bytes())?;
    w.write_all(id)?;
    w.write_all(&vf.m.to_le_bytes())?;
    w.write_all(&vf.fps.to_le_bytes())?;
    w.write_all(&vf.d.to_le_bytes())?;
    w.write_all(&(vf.spans.len() as u32).to_le_bytes())?;
    for span in &vf.spans {
        w.write_all(&span.start_frame.to_le_bytes())?;
        w.write_all(&span.end_frame.to_le_bytes())?;
    }
    for x in &vf.embeddings {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<VideoFeatures> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, FEATURE_MAGIC, "feature file")?;
    let version = read_u32(&mut r, "version")?;
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!("feature file: unsupported version {version}")));
    }
    let id_len = read_u32(&mut r, "id length")? as usize;
    let mut id_bytes = vec![0u8; id_len];
    read_exact_or(&mut r, &mut id_bytes, "video id")?;
    let video_id = String::from_utf8(id_bytes)
        .map_err(|_| Error::Format("feature file: video id is not UTF-8".into()))?;
    let m = read_u32(&mut r, "frame count")?;
    let fps = read_f32(&mut r, "fps")?;
    let d = read_u32(&mut r, "embedding dimension")?;
    let z = read_u32(&mut r, "clip count")?;
    if d < 1 {
        return Err(Error::Format("feature file: d must be >= 1".into()));
    }
    if z < 1 {
        return Err(Error::Format("feature file: z must be >= 1".into()));
    }
    let mut spans = Vec::with_capacity(z as usize);
    for i in 0..z {
        let start = read_u32(&mut r, "span start")?;
        let end = read_u32(&mut r, "span end")?;
        if start >= end {
            return Err(Error::Format(format!(
                "feature file: span {i} [{start}, {end}) is empty or reversed"
            )));
        }
        spans.push(ClipSpan::new(i, start, end));
    }
    let count = z as usize * d as usize;
    let mut embeddings = Vec::with_capacity(count);
    for _ in 0..count {
        embeddings.push(read_f32(&mut r, "embedding payload")?);
    }
    expect_eof(&mut r, "feature file")?;
    let vf = VideoFeatures { video_id, m, fps, d, spans, embeddings };
    vf.validate()?;
    Ok(vf)
}

/// Parse the annotation CSV (`start_frame,end_frame,keystep_id,keystep_name`).
/// An empty file yields zero segments, meaning all frames are background.
pub fn load_annotations(path: &Path) -> Result<GroundTruth> {
    let video_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let raw = fs::read_to_string(path)?;
    let mut gt = GroundTruth { video_id, segments: Vec::new() };
    if raw.trim().is_empty() {
        return Ok(gt);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::Format(format!("annotation csv: {e}")))?;
        let expected = ["start_frame", "end_frame", "keystep_id", "keystep_name"];
        if headers.len() != expected.len()
            || headers.iter().zip(expected.iter()).any(|(h, e)| h != *e)
        {
            return Err(Error::Format(format!(
                "annotation csv: header {:?}, expected {:?}",
                headers, expected
            )));
        }
    }
    for record in reader.records() {
        let record = record.map_err(|e| Error::Format(format!("annotation csv: {e}")))?;
        let field = |i: usize| -> Result<u32> {
            record[i]
                .parse::<u32>()
                .map_err(|_| Error::Format(format!("annotation csv: bad integer {:?}", &record[i])))
        };
        gt.segments.push(Segment {
            start_frame: field(0)?,
            end_frame: field(1)?,
            keystep_id: field(2)?,
            keystep_name: record[3].to_string(),
        });
    }
    gt.normalize()?;
    Ok(gt)
}

pub fn write_annotations(gt: &GroundTruth, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(["start_frame", "end_frame", "keystep_id", "keystep_name"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for seg in &gt.segments {
        w.write_record([
            seg.start_frame.to_string(),
            seg.end_frame.to_string(),
            seg.keystep_id.to_string(),
            seg.keystep_name.clone(),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Load and validate a task manifest from TOML.
pub fn load_manifest(path: &Path) -> Result<TaskManifest> {
    let raw = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
    let manifest: TaskManifest =
        toml::from_str(&raw).map_err(|e| Error::Config(format!("manifest parse: {e}")))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &TaskManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let raw = toml::to_string_pretty(manifest)
        .map_err(|e| Error::Config(format!("manifest serialize: {e}")))?;
    fs::write(path, raw)?;
    Ok(())
}

/// Resolve a manifest-relative path against the manifest's directory.
pub fn resolve_path(manifest_path: &Path, entry: &Path) -> std::path::PathBuf {
    if entry.is_absolute() {
        entry.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(entry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SamplerConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_features(seed: u64) -> VideoFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(1..16u32);
        let z = rng.random_range(1..12u32);
        let psi = rng.random_range(1..6u32);
        let omega = rng.random_range(1..6u32);
        let sigma = rng.random_range(1..3u32);
        let m = (z - 1) * omega * sigma + psi * sigma + rng.random_range(0..4u32);
        let cfg = SamplerConfig { sigma, omega, psi };
        let spans = crate::types::compute_clip_spans(m, &cfg).unwrap();
        let z = spans.len().min(z as usize);
        let spans = spans[..z].to_vec();
        let mut embeddings = Vec::with_capacity(z * d as usize);
        for _ in 0..z * d as usize {
            embeddings.push(rng.random_range(-1.0f32..1.0) + 0.001);
        }
        VideoFeatures {
            video_id: format!("vid-{seed}"),
            m,
            fps: 30.0,
            d,
            spans,
            embeddings,
        }
    }

    #[test]
    fn feature_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for seed in 0..100u64 {
            let vf = sample_features(seed);
            let path = dir.path().join(format!("{seed}.ugf"));
            write_features(&vf, &path).unwrap();
            let loaded = load_features(&path).unwrap();
            assert_eq!(loaded, vf);
            // rewriting the loaded value reproduces identical bytes
            let path2 = dir.path().join(format!("{seed}-b.ugf"));
            write_features(&loaded, &path2).unwrap();
            assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
        }
    }

    #[test]
    fn truncated_payload_is_dimension_error() {
        let dir = tempfile::tempdir().unwrap();
        let vf = sample_features(7);
        let path = dir.path().join("t.ugf");
        write_features(&vf, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_features(&path), Err(Error::Dimension(_))));
    }

    #[test]
    fn trailing_bytes_are_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let vf = sample_features(8);
        let path = dir.path().join("t.ugf");
        write_features(&vf, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.push(0);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_features(&path), Err(Error::Format(_))));
    }

    #[test]
    fn zero_dim_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.ugf");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(FEATURE_MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'v');
        bytes.extend_from_slice(&10u32.to_le_bytes()); // m
        bytes.extend_from_slice(&30.0f32.to_le_bytes()); // fps
        bytes.extend_from_slice(&0u32.to_le_bytes()); // d = 0
        bytes.extend_from_slice(&1u32.to_le_bytes()); // z
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_features(&path), Err(Error::Format(_))));
    }

    #[test]
    fn zero_row_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut vf = sample_features(9);
        let d = vf.d as usize;
        for x in &mut vf.embeddings[..d] {
            *x = 0.0;
        }
        let path = dir.path().join("zr.ugf");
        // bypass write-side validation by writing manually
        let res = write_features(&vf, &path);
        assert!(matches!(res, Err(Error::ZeroVector(0))));
    }

    #[test]
    fn annotations_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        fs::write(
            &path,
            "start_frame,end_frame,keystep_id,keystep_name\n0,50,1,pour\n50,80,2,stir, fast\n",
        )
        .unwrap();
        // unquoted comma in the name makes the row 5 fields wide
        assert!(load_annotations(&path).is_err());

        fs::write(
            &path,
            "start_frame,end_frame,keystep_id,keystep_name\n0,50,1,pour\n50,80,2,\"stir, fast\"\n",
        )
        .unwrap();
        let gt = load_annotations(&path).unwrap();
        assert_eq!(gt.segments.len(), 2);
        assert_eq!(gt.segments[1].keystep_name, "stir, fast");
        let labels = gt.frame_labels(100);
        assert!(labels[80..].iter().all(|&l| l == 0));

        let out = dir.path().join("b.csv");
        write_annotations(&gt, &out).unwrap();
        assert_eq!(load_annotations(&out).unwrap().segments, gt.segments);
    }

    #[test]
    fn annotations_overlap_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        fs::write(
            &path,
            "start_frame,end_frame,keystep_id,keystep_name\n0,50,1,a\n40,80,2,b\n",
        )
        .unwrap();
        assert!(matches!(load_annotations(&path), Err(Error::Overlap(_))));

        fs::write(&path, "").unwrap();
        assert_eq!(load_annotations(&path).unwrap().segments.len(), 0);
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = TaskManifest {
            task_name: "demo".into(),
            k: 4,
            egocentric: true,
            sampler: SamplerConfig { sigma: 1, omega: 10, psi: 10 },
            videos: vec![
                crate::types::ManifestEntry {
                    features: "a.ugf".into(),
                    annotations: Some("a.csv".into()),
                    mask: Some("a.ugm".into()),
                },
                crate::types::ManifestEntry {
                    features: "b.ugf".into(),
                    annotations: None,
                    mask: None,
                },
            ],
        };
        let path = dir.path().join("manifest.toml");
        write_manifest(&manifest, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), manifest);
    }
}
