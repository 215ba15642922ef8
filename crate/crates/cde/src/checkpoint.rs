//! Model checkpoints: a JSON document with a format tag wrapping the full
//! trained model (head configuration, grid, and network parameters as
//! row-major arrays). JSON float serialization uses shortest round-trip
//! notation, so parameters reload exactly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::TrainedModel;

pub const FORMAT_TAG: &str = "cde-checkpoint-v1";

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    model: TrainedModel,
}

/// Write `bytes` to `path` through a temporary sibling file and an atomic
/// rename, so a crash never leaves a partial artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))
        .map_err(Error::Io)?;
    tmp.write_all(bytes).map_err(Error::Io)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Save a trained model.
pub fn save(path: &Path, model: &TrainedModel) -> Result<()> {
    let doc = Checkpoint {
        format: FORMAT_TAG.to_string(),
        model: model.clone(),
    };
    let json = serde_json::to_vec_pretty(&doc)?;
    write_atomic(path, &json)
}

/// Load a trained model, rejecting files without the expected format tag.
pub fn load(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let doc: Checkpoint = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Data(format!("{} is not a valid checkpoint: {e}", path.display())))?;
    if doc.format != FORMAT_TAG {
        return Err(Error::Data(format!(
            "{}: unsupported checkpoint format '{}', expected '{FORMAT_TAG}'",
            path.display(),
            doc.format
        )));
    }
    Ok(doc.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, SyntheticSpec};
    use crate::data::SplitFractions;
    use crate::eval::experiment::prepare_synthetic_trial;
    use crate::models::{train, ModelKind, TrainConfig};

    fn small_trained_model(kind: ModelKind) -> TrainedModel {
        let spec = SyntheticSpec::random(2, 8, 0.05, 77).unwrap();
        let synth = generate(&spec, 60).unwrap();
        let prepared = prepare_synthetic_trial(&synth, SplitFractions::default(), 1).unwrap();
        let mut config = TrainConfig::new(kind, 5);
        config.epochs = 3;
        config.hidden = vec![8];
        config.lambda = 0.1;
        config.m_components = 2;
        train(&config, &prepared.train).unwrap()
    }

    #[test]
    fn round_trip_is_exact_for_every_head() {
        let dir = tempfile::tempdir().unwrap();
        for kind in ModelKind::ALL {
            let model = small_trained_model(kind);
            let path = dir.path().join(format!("{}.ckpt", kind.name()));
            save(&path, &model).unwrap();
            let loaded = load(&path).unwrap();
            assert_eq!(model, loaded, "{} round trip", kind.name());
        }
    }

    #[test]
    fn rejects_wrong_format_tag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, br#"{"format": "something-else", "model": {}}"#).unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn rejects_missing_and_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load(&dir.path().join("absent.ckpt")).is_err());
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not json").unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn atomic_write_replaces_existing_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("file.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
    }
}
