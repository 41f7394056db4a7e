//! Parameter checkpoints: one JSON header line followed by the policy and
//! critic values as little-endian `f64`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use sacx_core::nn::{ParamLayout, ParamVector};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::RuntimeError;

const FORMAT: &str = "sacx-checkpoint-1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u64,
    config: RunConfig,
    policy: ParamLayout,
    critic: ParamLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Parameter version at the time of writing.
    pub version: u64,
    pub policy: ParamVector,
    pub critic: ParamVector,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), RuntimeError> {
        let header = Header {
            format: FORMAT.into(),
            version: self.version,
            config: self.config.clone(),
            policy: (**self.policy.layout()).clone(),
            critic: (**self.critic.layout()).clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let mut bytes = Vec::with_capacity(8 * (self.policy.len() + self.critic.len()));
        for v in self.policy.values().iter().chain(self.critic.values()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, RuntimeError> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim_end())?;
        if header.format != FORMAT {
            return Err(RuntimeError::Checkpoint(format!("unknown format {:?}", header.format)));
        }
        let mut read_vector = |layout: ParamLayout| -> Result<ParamVector, RuntimeError> {
            let mut bytes = vec![0u8; 8 * layout.len()];
            r.read_exact(&mut bytes).map_err(|e| RuntimeError::Checkpoint(format!("truncated parameter data: {e}")))?;
            let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            Ok(ParamVector::from_values(Arc::new(layout), values)?)
        };
        let policy = read_vector(header.policy)?;
        let critic = read_vector(header.critic)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(RuntimeError::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { config: header.config, version: header.version, policy, critic })
    }

    pub fn save(&self, path: &Path) -> Result<(), RuntimeError> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, RuntimeError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let config = RunConfig::default();
        let env = config.build_env().unwrap();
        let models = config.models(env.as_ref(), &config.task_set().unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut policy = models.policy.init_params(&mut rng);
        policy.values_mut()[0] = -0.0;
        policy.values_mut()[1] = 1e-310;
        let ckpt = Checkpoint { config, version: 12, policy, critic: models.critic.init_params(&mut rng) };
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back.version, 12);
        assert_eq!(back.config, ckpt.config);
        let bits = |v: &ParamVector| v.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.policy), bits(&ckpt.policy));
        assert_eq!(bits(&back.critic), bits(&ckpt.critic));
        assert!(back.policy.same_layout(&ckpt.policy));

        assert!(Checkpoint::read_from(&buf[..buf.len() - 3]).is_err());
        let mut longer = buf.clone();
        longer.push(0);
        assert!(Checkpoint::read_from(&longer[..]).is_err());
    }
}
