//! JSON tensor container for policy parameters.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::nn::{Linear, Mlp};
use super::policy::{PolicyParams, ACTOR_OUT, CONT_DIM, N_PIT};
use crate::env::OBS_DIM;
use crate::error::AgentError;

pub const CHECKPOINT_FORMAT: &str = "racestrat-sac";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub obs_dim: usize,
    pub cont_dim: usize,
    pub n_pit: usize,
    pub hidden: Vec<usize>,
    pub log_alpha_c: f64,
    pub log_alpha_d: f64,
    pub tensors: Vec<Tensor>,
    /// Free-form training metadata.
    #[serde(default)]
    pub meta: serde_json::Value,
}

const NETS: [&str; 5] = ["actor", "critic1", "critic2", "target1", "target2"];

fn nets(p: &PolicyParams) -> [&Mlp; 5] {
    [&p.actor, &p.critic1, &p.critic2, &p.target1, &p.target2]
}

impl Checkpoint {
    pub fn from_params(p: &PolicyParams, meta: serde_json::Value) -> Self {
        let mut tensors = Vec::new();
        for (name, net) in NETS.iter().zip(nets(p)) {
            for (i, l) in net.layers.iter().enumerate() {
                tensors.push(Tensor { name: format!("{name}.{i}.w"), shape: l.w.shape().to_vec(), data: l.w.iter().copied().collect() });
                tensors.push(Tensor { name: format!("{name}.{i}.b"), shape: l.b.shape().to_vec(), data: l.b.to_vec() });
            }
        }
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            obs_dim: OBS_DIM,
            cont_dim: CONT_DIM,
            n_pit: N_PIT,
            hidden: p.hidden(),
            log_alpha_c: p.log_alpha_c,
            log_alpha_d: p.log_alpha_d,
            tensors,
            meta,
        }
    }

    pub fn to_params(&self) -> Result<PolicyParams, AgentError> {
        let bad = |m: String| AgentError::Checkpoint(m);
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        if (self.obs_dim, self.cont_dim, self.n_pit) != (OBS_DIM, CONT_DIM, N_PIT) {
            return Err(bad("dimension mismatch".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(bad("empty hidden layers".into()));
        }
        let sizes = |input: usize, out: usize| {
            let mut v = vec![input];
            v.extend_from_slice(&self.hidden);
            v.push(out);
            v
        };
        let mut out = Vec::new();
        for name in NETS {
            let s = if name == "actor" { sizes(OBS_DIM, ACTOR_OUT) } else { sizes(OBS_DIM + CONT_DIM, N_PIT) };
            let mut layers = Vec::new();
            for i in 0..s.len() - 1 {
                let w = self.tensor(&format!("{name}.{i}.w"), &[s[i], s[i + 1]])?;
                let b = self.tensor(&format!("{name}.{i}.b"), &[s[i + 1]])?;
                layers.push(Linear {
                    w: Array2::from_shape_vec((s[i], s[i + 1]), w).map_err(|e| bad(e.to_string()))?,
                    b: Array1::from_vec(b),
                });
            }
            out.push(Mlp { layers });
        }
        if self.tensors.len() != out.iter().map(|m| 2 * m.layers.len()).sum::<usize>() {
            return Err(bad("unexpected extra tensors".into()));
        }
        let mut it = out.into_iter();
        let mut next = || it.next().expect("five networks");
        let p = PolicyParams {
            actor: next(),
            critic1: next(),
            critic2: next(),
            target1: next(),
            target2: next(),
            log_alpha_c: self.log_alpha_c,
            log_alpha_d: self.log_alpha_d,
        };
        if !p.is_finite() {
            return Err(bad("non-finite parameters".into()));
        }
        Ok(p)
    }

    fn tensor(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>, AgentError> {
        let t = self.tensors.iter().find(|t| t.name == name).ok_or_else(|| AgentError::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
            return Err(AgentError::Checkpoint(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
        }
        Ok(t.data.clone())
    }

    pub fn from_json(s: &str) -> Result<Self, AgentError> {
        serde_json::from_str(s).map_err(|e| AgentError::Checkpoint(e.to_string()))
    }
}

/// Writes next to the target and renames, so readers never see a partial file.
pub fn save_checkpoint(path: &Path, params: &PolicyParams, meta: serde_json::Value) -> Result<(), AgentError> {
    let ck = Checkpoint::from_params(params, meta);
    let text = serde_json::to_string(&ck).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{}.tmp-{}", path.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint"), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyParams, serde_json::Value), AgentError> {
    let text = fs::read_to_string(path).map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.display())))?;
    let ck = Checkpoint::from_json(&text)?;
    Ok((ck.to_params()?, ck.meta))
}
