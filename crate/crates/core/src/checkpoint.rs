//! Versioned binary policy snapshots.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SOUKCKPT"
//! version  u32      currently 1
//! n_agents u32
//! per agent:
//!   role        u8   0 = seller, 1 = buyer
//!   n_heads     u32  followed by that many u32 head sizes
//!   n_dims      u32  followed by that many u32 actor layer sizes
//!                    (input first; the value net shares the trunk with a
//!                    scalar output)
//!   param_len   u64  followed by that many f64 parameters: the actor's
//!                    flat parameters then the value net's, in network
//!                    flat order (per layer: weights row-major, biases)
//! ```
//!
//! Optimizer state is not persisted; resumed training restarts its moments.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::ippo::nn::{Dense, Mlp};
use crate::ippo::{AdamState, AgentRole, PolicyParams};
use crate::Real;

const MAGIC: &[u8; 8] = b"SOUKCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a policy checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Write all agents' policies to one checkpoint file.
pub fn save_policies(path: &Path, policies: &[PolicyParams<Real>]) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(policies.len() as u32).to_le_bytes())?;
    for policy in policies {
        let role: u8 = match policy.role {
            AgentRole::Seller => 0,
            AgentRole::Buyer => 1,
        };
        w.write_all(&[role])?;
        w.write_all(&(policy.head_sizes.len() as u32).to_le_bytes())?;
        for &h in &policy.head_sizes {
            w.write_all(&(h as u32).to_le_bytes())?;
        }
        let dims = policy.actor.dims();
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for &d in &dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let flat = policy.flat_params();
        w.write_all(&(flat.len() as u64).to_le_bytes())?;
        for v in flat {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn zeroed_mlp(dims: &[usize]) -> Mlp<Real> {
    Mlp {
        layers: dims
            .windows(2)
            .map(|p| Dense {
                in_dim: p[0],
                out_dim: p[1],
                weights: vec![0.0; p[0] * p[1]],
                biases: vec![0.0; p[1]],
            })
            .collect(),
    }
}

/// Load every policy from a checkpoint file.
pub fn load_policies(path: &Path) -> Result<Vec<PolicyParams<Real>>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let n_agents = read_u32(&mut r)? as usize;
    let mut policies = Vec::with_capacity(n_agents);
    for agent in 0..n_agents {
        let mut role_byte = [0u8; 1];
        r.read_exact(&mut role_byte)?;
        let role = match role_byte[0] {
            0 => AgentRole::Seller,
            1 => AgentRole::Buyer,
            other => {
                return Err(CheckpointError::Corrupt(format!(
                    "agent {agent} has unknown role tag {other}"
                )))
            }
        };
        let n_heads = read_u32(&mut r)? as usize;
        let mut head_sizes = Vec::with_capacity(n_heads);
        for _ in 0..n_heads {
            head_sizes.push(read_u32(&mut r)? as usize);
        }
        let n_dims = read_u32(&mut r)? as usize;
        if n_dims < 2 {
            return Err(CheckpointError::Corrupt(format!(
                "agent {agent} has {n_dims} layer dims"
            )));
        }
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            dims.push(read_u32(&mut r)? as usize);
        }
        let logits: usize = head_sizes.iter().sum();
        if *dims.last().expect("non-empty dims") != logits {
            return Err(CheckpointError::Corrupt(format!(
                "agent {agent}: output dim {} does not match head total {logits}",
                dims.last().expect("non-empty dims")
            )));
        }
        let actor = zeroed_mlp(&dims);
        let mut critic_dims = dims.clone();
        *critic_dims.last_mut().expect("non-empty dims") = 1;
        let critic = zeroed_mlp(&critic_dims);
        let param_len = read_u64(&mut r)? as usize;
        let expected = actor.param_count() + critic.param_count();
        if param_len != expected {
            return Err(CheckpointError::Corrupt(format!(
                "agent {agent}: {param_len} parameters stored, shapes imply {expected}"
            )));
        }
        let mut flat = Vec::with_capacity(param_len);
        let mut buf = [0u8; 8];
        for _ in 0..param_len {
            r.read_exact(&mut buf)?;
            flat.push(f64::from_le_bytes(buf));
        }
        let mut policy = PolicyParams {
            role,
            head_sizes,
            actor,
            critic,
            optimizer: AdamState::new(expected),
        };
        policy.set_flat_params(&flat);
        policies.push(policy);
    }
    Ok(policies)
}
