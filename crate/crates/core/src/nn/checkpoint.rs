use std::path::Path;

use serde_json::json;

use super::{DenoiserNet, NetConfig};
use crate::error::{Error, Result};
use crate::io::{ArrayFile, NamedArray};

const KIND: &str = "denoiser-net";

impl DenoiserNet {
    pub fn to_array_file(&self) -> ArrayFile {
        ArrayFile::new(json!({ "kind": KIND, "config": self.config() })).with_array(
            NamedArray::new("params", vec![self.num_params()], self.params().to_vec())
                .expect("dims match"),
        )
    }

    pub fn from_array_file(file: &ArrayFile) -> Result<Self> {
        if file.meta.get("kind").and_then(|k| k.as_str()) != Some(KIND) {
            return Err(Error::Format("not a denoiser checkpoint".into()));
        }
        let config: NetConfig = serde_json::from_value(file.meta["config"].clone())
            .map_err(|e| Error::Format(format!("bad net config: {e}")))?;
        let params = file.get("params")?;
        DenoiserNet::from_params(config, params.data.clone())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_array_file().write(path)
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_array_file(&ArrayFile::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::Denoiser;
    use crate::rng;

    #[test]
    fn round_trip_is_bitwise() {
        let mut r = rng::seeded(9);
        let net = DenoiserNet::new(NetConfig::new(3, vec![16, 8]), &mut r).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        net.save_checkpoint(&path).unwrap();
        let back = DenoiserNet::load_checkpoint(&path).unwrap();
        for _ in 0..100 {
            let x = rng::normal_vec(&mut r, 3);
            let s = rng::normal(&mut r).exp();
            let a = net.denoise(&x, s).unwrap();
            let b = back.denoise(&x, s).unwrap();
            assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let net = DenoiserNet::new(NetConfig::new(2, vec![4]), &mut rng::seeded(0)).unwrap();
        let bytes = net.to_array_file().to_bytes();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.bin");
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(DenoiserNet::load_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn parameter_count_mismatch_is_rejected() {
        let net = DenoiserNet::new(NetConfig::new(2, vec![4]), &mut rng::seeded(0)).unwrap();
        let mut file = net.to_array_file();
        file.arrays[0] = NamedArray::new("params", vec![3], vec![0.0; 3]).unwrap();
        assert!(matches!(DenoiserNet::from_array_file(&file), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_dimension_fails_at_first_denoise() {
        let net = DenoiserNet::new(NetConfig::new(2, vec![4]), &mut rng::seeded(0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        net.save_checkpoint(&path).unwrap();
        let back = DenoiserNet::load_checkpoint(&path).unwrap();
        assert!(matches!(back.denoise(&[0.0; 3], 1.0), Err(Error::Dimension { expected: 2, got: 3 })));
    }
}
