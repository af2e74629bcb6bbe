//! Checkpoints: a JSON manifest naming every tensor plus one contiguous
//! little-endian 32-bit-float payload file.
//!
//! A checkpoint directory holds `manifest.json` and `payload.bin`. The
//! manifest lists each tensor's name, shape, and byte offset into the
//! payload, along with the optimizer step, run seed, and the config digest
//! the run was started under. Roundtrips are bit-exact.

use crate::backbone::{BackboneConfig, ModelParams};
use crate::{Error, Result};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const PAYLOAD_NAME: &str = "payload.bin";
const FORMAT_VERSION: u32 = 1;

/// One tensor's location within the payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset of the first element in `payload.bin`.
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Completed optimizer steps at save time.
    pub step: usize,
    /// Run seed; together with `step` this pins every RNG stream, so no
    /// generator state needs to be serialized.
    pub seed: u64,
    pub config_digest: String,
    pub payload_bytes: u64,
    pub tensors: Vec<TensorSpec>,
}

/// Everything training needs to resume exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainSnapshot {
    pub student: ModelParams<f32>,
    pub teacher: ModelParams<f32>,
    /// Running center of teacher outputs, length `proj_dim`.
    pub center: Array1<f32>,
    /// First-moment optimizer accumulator, one per student parameter.
    pub opt_m: ModelParams<f32>,
    /// Second-moment optimizer accumulator.
    pub opt_v: ModelParams<f32>,
    pub step: usize,
    pub seed: u64,
    pub config_digest: String,
}

/// Write `manifest.json` + `payload.bin` into `dir` (created if needed).
pub fn save_checkpoint(dir: &Path, snap: &TrainSnapshot) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut specs: Vec<TensorSpec> = Vec::new();
    let mut payload: Vec<u8> = Vec::new();

    let mut push = |name: String, shape: Vec<usize>, data: &[f32]| {
        specs.push(TensorSpec { name, shape, offset: payload.len() as u64 });
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (prefix, params) in [
        ("student", &snap.student),
        ("teacher", &snap.teacher),
    ] {
        for t in params.tensors() {
            push(format!("{prefix}/{}", t.name), t.shape.clone(), t.data);
        }
    }
    push(
        "distill/center".to_string(),
        vec![snap.center.len()],
        snap.center.as_slice().expect("contiguous"),
    );
    for (prefix, params) in [("optim/m", &snap.opt_m), ("optim/v", &snap.opt_v)] {
        for t in params.tensors() {
            push(format!("{prefix}/{}", t.name), t.shape.clone(), t.data);
        }
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        step: snap.step,
        seed: snap.seed,
        config_digest: snap.config_digest.clone(),
        payload_bytes: payload.len() as u64,
        tensors: specs,
    };
    let mut mf = std::fs::File::create(dir.join(MANIFEST_NAME))?;
    mf.write_all(serde_json::to_string_pretty(&manifest).expect("serializable").as_bytes())?;
    mf.write_all(b"\n")?;
    std::fs::write(dir.join(PAYLOAD_NAME), &payload)?;
    Ok(())
}

/// Read a checkpoint directory back. The backbone config determines the
/// expected tensor inventory; any missing tensor, shape mismatch, or payload
/// length problem is an error.
pub fn load_checkpoint(dir: &Path, backbone: &BackboneConfig) -> Result<TrainSnapshot> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("unreadable manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {}",
            manifest.format_version
        )));
    }
    let payload = std::fs::read(dir.join(PAYLOAD_NAME))?;
    if payload.len() as u64 != manifest.payload_bytes {
        return Err(Error::Checkpoint(format!(
            "payload length mismatch: manifest declares {} bytes, file has {}",
            manifest.payload_bytes,
            payload.len()
        )));
    }

    let index: HashMap<&str, &TensorSpec> =
        manifest.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let read_into = |name: &str, shape: &[usize], out: &mut [f32]| -> Result<()> {
        let spec = index
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if spec.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                spec.shape, shape
            )));
        }
        let start = spec.offset as usize;
        let bytes = out.len() * 4;
        let end = start
            .checked_add(bytes)
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` lies outside payload")))?;
        for (dst, chunk) in out.iter_mut().zip(payload[start..end].chunks_exact(4)) {
            *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        Ok(())
    };

    let load_params = |prefix: &str| -> Result<ModelParams<f32>> {
        let mut params = ModelParams::<f32>::zeros(backbone);
        for t in &mut params.tensors_mut() {
            read_into(&format!("{prefix}/{}", t.name), &t.shape, t.data)?;
        }
        Ok(params)
    };
    let student = load_params("student")?;
    let teacher = load_params("teacher")?;
    let opt_m = load_params("optim/m")?;
    let opt_v = load_params("optim/v")?;
    let mut center = Array1::<f32>::zeros(backbone.proj_dim);
    read_into(
        "distill/center",
        &[backbone.proj_dim],
        center.as_slice_mut().expect("contiguous"),
    )?;

    Ok(TrainSnapshot {
        student,
        teacher,
        center,
        opt_m,
        opt_v,
        step: manifest.step,
        seed: manifest.seed,
        config_digest: manifest.config_digest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn random_params(cfg: &BackboneConfig, seed: u64) -> ModelParams<f32> {
        let mut rng = stream(seed, &[1234]);
        let mut p = ModelParams::<f32>::zeros(cfg);
        for t in &mut p.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = rng.random::<f32>() * 2.0 - 1.0;
            }
        }
        p
    }

    fn snapshot(cfg: &BackboneConfig) -> TrainSnapshot {
        let mut rng = stream(9, &[55]);
        TrainSnapshot {
            student: random_params(cfg, 1),
            teacher: random_params(cfg, 2),
            center: Array1::from_iter((0..cfg.proj_dim).map(|_| rng.random::<f32>())),
            opt_m: random_params(cfg, 3),
            opt_v: random_params(cfg, 4),
            step: 417,
            seed: 20,
            config_digest: "abc123".to_string(),
        }
    }

    fn assert_params_bits_equal(a: &ModelParams<f32>, b: &ModelParams<f32>) {
        for (x, y) in a.tensors().iter().zip(b.tensors().iter()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.shape, y.shape);
            for (u, w) in x.data.iter().zip(y.data.iter()) {
                assert_eq!(u.to_bits(), w.to_bits(), "tensor {}", x.name);
            }
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = BackboneConfig::tiny();
        let snap = snapshot(&cfg);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &snap).unwrap();
        let loaded = load_checkpoint(dir.path(), &cfg).unwrap();
        assert_params_bits_equal(&snap.student, &loaded.student);
        assert_params_bits_equal(&snap.teacher, &loaded.teacher);
        assert_params_bits_equal(&snap.opt_m, &loaded.opt_m);
        assert_params_bits_equal(&snap.opt_v, &loaded.opt_v);
        for (a, b) in snap.center.iter().zip(loaded.center.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(loaded.step, 417);
        assert_eq!(loaded.seed, 20);
        assert_eq!(loaded.config_digest, "abc123");
    }

    #[test]
    fn manifest_offsets_are_contiguous_and_ordered() {
        let cfg = BackboneConfig::tiny();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &snapshot(&cfg)).unwrap();
        let manifest: Manifest = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap(),
        )
        .unwrap();
        let mut expected_offset = 0u64;
        for t in &manifest.tensors {
            assert_eq!(t.offset, expected_offset, "tensor {}", t.name);
            expected_offset += 4 * t.shape.iter().product::<usize>() as u64;
        }
        assert_eq!(expected_offset, manifest.payload_bytes);
        // Prefix inventory: student, teacher, distill, optim moments.
        for prefix in ["student/", "teacher/", "optim/m/", "optim/v/"] {
            assert!(manifest.tensors.iter().any(|t| t.name.starts_with(prefix)));
        }
        assert!(manifest.tensors.iter().any(|t| t.name == "distill/center"));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let cfg = BackboneConfig::tiny();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &snapshot(&cfg)).unwrap();
        let payload_path = dir.path().join(PAYLOAD_NAME);
        let bytes = std::fs::read(&payload_path).unwrap();
        std::fs::write(&payload_path, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_checkpoint(dir.path(), &cfg).unwrap_err();
        assert!(
            err.to_string().contains("length mismatch"),
            "unexpected error: {err}"
        );
    }

    #[test]
    fn loading_under_a_different_backbone_shape_fails() {
        let tiny = BackboneConfig::tiny();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &snapshot(&tiny)).unwrap();
        let desk = BackboneConfig::desk();
        let err = load_checkpoint(dir.path(), &desk).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "unexpected error: {err}");
    }

    #[test]
    fn missing_manifest_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_checkpoint(dir.path(), &BackboneConfig::tiny()).unwrap_err(),
            Error::Io(_)
        ));
    }
}
