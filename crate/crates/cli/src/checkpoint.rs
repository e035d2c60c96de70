//! Run checkpoints: a `CVWT` file whose config record says which model it
//! holds and how to rebuild it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use vidgen_core::checkpoint::{read_checkpoint, write_checkpoint};
use vidgen_core::dit::Dit;
use vidgen_core::nn::{MlpConfig, MlpVelocity, ParamSet, VelocityModel};
use vidgen_core::rng::seeded;

use crate::error::{file_err, CliError, Result};
use crate::toy2d::Toy2dConfig;
use crate::video::VideoMeta;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelMeta {
    Toy2d { mlp: MlpConfig, toy: Toy2dConfig },
    /// Latent-colour model trained against encoder `encoder_seed`.
    Adapt { mlp: MlpConfig, encoder_seed: u64 },
    Video(VideoMeta),
}

pub fn save(path: &Path, meta: &ModelMeta, params: &ParamSet) -> Result<()> {
    let f = File::create(path).map_err(file_err(path))?;
    let mut w = BufWriter::new(f);
    write_checkpoint(&mut w, meta, params)?;
    w.flush().map_err(file_err(path))?;
    Ok(())
}

/// Loads a checkpoint; a missing file is a configuration error.
pub fn load(path: &Path) -> Result<(ModelMeta, ParamSet)> {
    if !path.is_file() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    let f = File::open(path).map_err(file_err(path))?;
    Ok(read_checkpoint(BufReader::new(f))?)
}

pub fn load_mlp(cfg: &MlpConfig, params: &ParamSet) -> Result<MlpVelocity> {
    let mut m = MlpVelocity::new(cfg.clone(), &mut seeded(0))?;
    if params.len() != m.params().len() {
        return Err(CliError::Config(format!(
            "checkpoint holds {} tensors, mlp expects {}",
            params.len(),
            m.params().len()
        )));
    }
    for (name, t) in params.names().iter().zip(params.tensors()) {
        let i = m
            .params()
            .index_of(name)
            .ok_or_else(|| CliError::Config(format!("unexpected tensor {name} in checkpoint")))?;
        m.params_mut().set(i, t.clone())?;
    }
    Ok(m)
}

pub fn load_dit(meta: &VideoMeta, params: ParamSet) -> Result<Dit> {
    Ok(Dit::from_params(meta.model.clone(), params)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vidgen_core::rng::seeded;

    #[test]
    fn mlp_checkpoint_round_trips() {
        let toy = Toy2dConfig::default();
        let m = MlpVelocity::new(toy.mlp(), &mut seeded(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cvwt");
        let meta = ModelMeta::Toy2d { mlp: toy.mlp(), toy };
        save(&path, &meta, m.params()).unwrap();
        let (back, params) = load(&path).unwrap();
        assert_eq!(back, meta);
        let ModelMeta::Toy2d { mlp, .. } = back else { unreachable!() };
        assert_eq!(load_mlp(&mlp, &params).unwrap().params(), m.params());
    }

    #[test]
    fn missing_checkpoint_is_a_config_error() {
        let err = load(Path::new("/nonexistent/model.cvwt")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
