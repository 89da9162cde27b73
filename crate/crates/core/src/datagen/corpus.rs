//! On-disk corpus layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<sample_id>/sample.json
//! <root>/<sample_id>/image_<m>.f32   H·W little-endian f32, row-major
//! <root>/<sample_id>/label.u8        H·W class indices
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::presence::{sample_presence, MissingProtocol, PresenceMatrix};
use super::scene::{render_sample, ModalitySample, SceneSpec};
use crate::error::{Error, Result};

pub const CORPUS_FORMAT: &str = "dmaf-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub n_samples: usize,
    pub n_modalities: usize,
    pub n_classes: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub protocol: MissingProtocol,
    pub scene: SceneSpec,
    pub realized_missing_rates: Vec<f64>,
    pub presence: Vec<Vec<u8>>,
    pub sample_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SampleSidecar {
    sample_id: String,
    height: usize,
    width: usize,
    n_modalities: usize,
    presence: Vec<u8>,
    images: Vec<String>,
    label: String,
    encoding: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub manifest: Manifest,
    pub samples: Vec<ModalitySample>,
}

impl Corpus {
    pub fn presence(&self) -> Result<PresenceMatrix> {
        PresenceMatrix::from_rows(&self.manifest.presence)
    }

    pub fn n_modalities(&self) -> usize {
        self.manifest.n_modalities
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.n_classes
    }

    /// Sub-corpus holding only the given sample indices.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        let samples: Vec<ModalitySample> =
            indices.iter().map(|&i| self.samples[i].clone()).collect();
        let presence: Vec<Vec<u8>> = indices
            .iter()
            .map(|&i| self.manifest.presence[i].clone())
            .collect();
        let mut manifest = self.manifest.clone();
        manifest.n_samples = samples.len();
        manifest.sample_ids = samples.iter().map(|s| s.sample_id.clone()).collect();
        manifest.realized_missing_rates = realized_rates(&presence, self.manifest.n_modalities);
        manifest.presence = presence;
        Corpus { manifest, samples }
    }
}

fn realized_rates(presence: &[Vec<u8>], m: usize) -> Vec<f64> {
    let n = presence.len().max(1) as f64;
    (0..m)
        .map(|j| presence.iter().filter(|r| r[j] == 0).count() as f64 / n)
        .collect()
}

pub fn sample_id(index: usize) -> String {
    format!("sample_{index:05}")
}

/// Draws the presence matrix once and renders every sample from its own
/// generator stream, so rendering is independent of sample order.
pub fn generate_corpus(
    scene: &SceneSpec,
    protocol: &MissingProtocol,
    n_samples: usize,
    seed: u64,
) -> Result<Corpus> {
    scene.validate()?;
    let m = scene.n_modalities();
    let presence = sample_presence(protocol, n_samples, m)?;
    let mut samples = Vec::with_capacity(n_samples);
    for n in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(n as u64 + 1);
        samples.push(render_sample(scene, &presence.row(n), sample_id(n), &mut rng)?);
    }
    let manifest = Manifest {
        format: CORPUS_FORMAT.into(),
        version: CORPUS_VERSION,
        n_samples,
        n_modalities: m,
        n_classes: scene.n_classes,
        height: scene.height,
        width: scene.width,
        seed,
        protocol: protocol.clone(),
        scene: scene.clone(),
        realized_missing_rates: presence.missing_rates(),
        presence: presence.rows(),
        sample_ids: samples.iter().map(|s| s.sample_id.clone()).collect(),
    };
    Ok(Corpus { manifest, samples })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    write_file(path, text.as_bytes())
}

pub fn write_corpus(root: impl AsRef<Path>, corpus: &Corpus) -> Result<Manifest> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for sample in &corpus.samples {
        let dir = root.join(&sample.sample_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut names = Vec::new();
        for (m, plane) in sample.images.iter().enumerate() {
            let name = format!("image_{m}.f32");
            let bytes: Vec<u8> = plane.iter().flat_map(|v| v.to_le_bytes()).collect();
            write_file(&dir.join(&name), &bytes)?;
            names.push(name);
        }
        write_file(&dir.join("label.u8"), &sample.label)?;
        let sidecar = SampleSidecar {
            sample_id: sample.sample_id.clone(),
            height: sample.height,
            width: sample.width,
            n_modalities: sample.n_modalities(),
            presence: sample.presence.iter().map(|&p| p as u8).collect(),
            images: names,
            label: "label.u8".into(),
            encoding: "f32-le".into(),
        };
        write_json(&dir.join("sample.json"), &sidecar)?;
    }
    write_json(&root.join("manifest.json"), &corpus.manifest)?;
    Ok(corpus.manifest.clone())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(root: impl AsRef<Path>) -> Result<Manifest> {
    let path = root.as_ref().join("manifest.json");
    let text = read_bytes(&path)?;
    let value: serde_json::Value =
        serde_json::from_slice(&text).map_err(|e| Error::json(&path, e))?;
    let version = value.get("version").and_then(serde_json::Value::as_u64);
    let format = value.get("format").and_then(serde_json::Value::as_str);
    match (format, version) {
        (Some(CORPUS_FORMAT), Some(v)) if v == CORPUS_VERSION as u64 => {}
        (Some(CORPUS_FORMAT), Some(v)) => {
            return Err(Error::CorpusVersion {
                found: v as u32,
                expected: CORPUS_VERSION,
            })
        }
        _ => {
            return Err(Error::CorruptSample {
                sample_id: "manifest".into(),
                reason: format!("{} lacks a dmaf-corpus format/version header", path.display()),
            })
        }
    }
    serde_json::from_value(value).map_err(|e| Error::json(&path, e))
}

pub fn read_corpus(root: impl AsRef<Path>) -> Result<Corpus> {
    let root = root.as_ref();
    let manifest = read_manifest(root)?;
    let corrupt = |id: &str, reason: String| Error::CorruptSample {
        sample_id: id.to_string(),
        reason,
    };
    if manifest.sample_ids.len() != manifest.n_samples || manifest.presence.len() != manifest.n_samples {
        return Err(corrupt("manifest", "sample count disagrees with listings".into()));
    }
    let plane = manifest.height * manifest.width;
    let mut samples = Vec::with_capacity(manifest.n_samples);
    for (id, row) in manifest.sample_ids.iter().zip(&manifest.presence) {
        let dir: PathBuf = root.join(id);
        let side_path = dir.join("sample.json");
        let side_bytes = read_bytes(&side_path).map_err(|e| corrupt(id, e.to_string()))?;
        let side: SampleSidecar =
            serde_json::from_slice(&side_bytes).map_err(|e| corrupt(id, e.to_string()))?;
        if side.height != manifest.height
            || side.width != manifest.width
            || side.n_modalities != manifest.n_modalities
            || side.images.len() != manifest.n_modalities
        {
            return Err(corrupt(id, "sidecar shape disagrees with manifest".into()));
        }
        if &side.presence != row {
            return Err(corrupt(id, "sidecar presence disagrees with manifest".into()));
        }
        let mut images = Vec::with_capacity(side.images.len());
        for name in &side.images {
            let bytes = read_bytes(&dir.join(name)).map_err(|e| corrupt(id, e.to_string()))?;
            if bytes.len() != plane * 4 {
                return Err(corrupt(
                    id,
                    format!("{name} holds {} bytes, expected {}", bytes.len(), plane * 4),
                ));
            }
            images.push(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            );
        }
        let label = read_bytes(&dir.join(&side.label)).map_err(|e| corrupt(id, e.to_string()))?;
        if label.len() != plane {
            return Err(corrupt(
                id,
                format!("label holds {} bytes, expected {plane}", label.len()),
            ));
        }
        if let Some(&bad) = label.iter().find(|&&c| c as usize >= manifest.n_classes) {
            return Err(corrupt(id, format!("label value {bad} out of range")));
        }
        samples.push(ModalitySample {
            sample_id: id.clone(),
            height: manifest.height,
            width: manifest.width,
            images,
            label,
            presence: row.iter().map(|&p| p == 1).collect(),
        });
    }
    Ok(Corpus { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_corpus() -> Corpus {
        let scene = SceneSpec::new(16, 16, 3, 4).unwrap();
        generate_corpus(&scene, &MissingProtocol::brats_four(7), 10, 7).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = small_corpus().subset(&[0, 1, 2, 3]);
        write_corpus(dir.path(), &corpus).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back.samples.len(), 4);
        for (a, b) in corpus.samples.iter().zip(&back.samples) {
            assert_eq!(a.label, b.label);
            for (pa, pb) in a.images.iter().zip(&b.images) {
                let ba: Vec<u32> = pa.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u32> = pb.iter().map(|v| v.to_bits()).collect();
                assert_eq!(ba, bb);
            }
        }
        assert_eq!(corpus.manifest, back.manifest);
    }

    #[test]
    fn manifest_records_realized_rates() {
        let corpus = small_corpus();
        assert_eq!(corpus.manifest.realized_missing_rates, vec![0.2, 0.4, 0.6, 0.8]);
    }

    #[test]
    fn truncated_image_names_sample() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = small_corpus();
        write_corpus(dir.path(), &corpus).unwrap();
        let victim = dir.path().join("sample_00003").join("image_1.f32");
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();
        match read_corpus(dir.path()) {
            Err(Error::CorruptSample { sample_id, .. }) => assert_eq!(sample_id, "sample_00003"),
            other => panic!("expected corrupt sample, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &small_corpus()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("\"version\": 1", "\"version\": 9")).unwrap();
        match read_corpus(dir.path()) {
            Err(Error::CorpusVersion { found, expected }) => {
                assert_eq!((found, expected), (9, CORPUS_VERSION));
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(small_corpus(), small_corpus());
    }
}
