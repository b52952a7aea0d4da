//! Versioned JSON snapshots of training state.
//!
//! A checkpoint captures everything a run mutates: the flat trainable
//! vector (in [`SubnetStack::flatten`] order), the batch-norm running
//! statistics (not trainable, but part of the eval-mode function), the
//! optimizer state, and the iteration counter. Restoring rebuilds a stack
//! that is bit-identical to the saved one.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Architecture, BatchNorm, SubnetParams, SubnetStack};
use crate::optim::AdamState;
use crate::tensor::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable snapshot of one training run's mutable state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub arch: Architecture,
    pub n_subnets: usize,
    /// Whether the stack carries the forward-shooting head.
    pub has_head: bool,
    /// Every trainable scalar, in stack flattening order.
    pub trainables: Vec<f64>,
    /// Running statistics per subnet: `mean1, var1, mean2, var2`
    /// concatenated in stack order; empty when batch norm is disabled.
    pub running_stats: Vec<f64>,
    pub optimizer: Option<AdamState>,
    pub iteration: u64,
}

fn gather_running_stats(stack: &SubnetStack) -> Vec<f64> {
    let mut out = Vec::new();
    for s in &stack.subnets {
        for bn in [&s.bn1, &s.bn2].into_iter().flatten() {
            out.extend_from_slice(&bn.running_mean);
            out.extend_from_slice(&bn.running_var);
        }
    }
    out
}

fn restore_running_stats(stack: &mut SubnetStack, stats: &[f64]) -> Result<()> {
    let h = stack.arch.hidden_dim;
    let expect = if stack.arch.batch_norm {
        stack.subnets.len() * 4 * h
    } else {
        0
    };
    if stats.len() != expect {
        return Err(Error::Config(format!(
            "checkpoint holds {} running statistics, architecture needs {expect}",
            stats.len()
        )));
    }
    let mut pos = 0;
    for s in &mut stack.subnets {
        for bn in [&mut s.bn1, &mut s.bn2].into_iter().flatten() {
            bn.running_mean.copy_from_slice(&stats[pos..pos + h]);
            pos += h;
            bn.running_var.copy_from_slice(&stats[pos..pos + h]);
            pos += h;
        }
    }
    Ok(())
}

/// Captures the current training state.
pub fn snapshot(stack: &SubnetStack, optimizer: Option<&AdamState>, iteration: u64) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        arch: stack.arch,
        n_subnets: stack.n_subnets(),
        has_head: stack.u0.is_some(),
        trainables: stack.flatten(),
        running_stats: gather_running_stats(stack),
        optimizer: optimizer.cloned(),
        iteration,
    }
}

/// Writes a checkpoint as JSON.
pub fn save(
    path: &Path,
    stack: &SubnetStack,
    optimizer: Option<&AdamState>,
    iteration: u64,
) -> Result<()> {
    let ckpt = snapshot(stack, optimizer, iteration);
    let json = serde_json::to_string(&ckpt)?;
    fs::write(path, json)?;
    Ok(())
}

fn zeroed_subnet(arch: Architecture) -> SubnetParams {
    let (d, h, o) = (arch.input_dim, arch.hidden_dim, arch.output_dim);
    let bn = || arch.batch_norm.then(|| BatchNorm::identity(h));
    SubnetParams {
        arch,
        w1: Matrix::zeros(h, d),
        b1: vec![0.0; h],
        bn1: bn(),
        w2: Matrix::zeros(h, h),
        b2: vec![0.0; h],
        bn2: bn(),
        w3: Matrix::zeros(o, h),
        b3: vec![0.0; o],
    }
}

/// Rebuilds the training state from a parsed checkpoint.
pub fn restore(ckpt: &Checkpoint) -> Result<(SubnetStack, Option<AdamState>, u64)> {
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    for (i, v) in ckpt.running_stats.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Config(format!(
                "checkpoint running statistic {i} is not finite"
            )));
        }
    }
    let h = ckpt.arch.hidden_dim;
    // Odd half of each (mean, var) block must be a valid variance.
    for (i, chunk) in ckpt.running_stats.chunks(2 * h).enumerate() {
        for (j, v) in chunk[h..].iter().enumerate() {
            if !(*v > 0.0) {
                return Err(Error::Config(format!(
                    "checkpoint running variance {} of block {i} is not positive",
                    j
                )));
            }
        }
    }
    let mut stack = SubnetStack {
        arch: ckpt.arch,
        subnets: (0..ckpt.n_subnets).map(|_| zeroed_subnet(ckpt.arch)).collect(),
        u0: ckpt.has_head.then_some(0.0),
        grad0: ckpt.has_head.then(|| vec![0.0; ckpt.arch.input_dim]),
    };
    stack.unflatten(&ckpt.trainables).map_err(|e| {
        Error::Config(format!("checkpoint trainables do not fit the architecture: {e}"))
    })?;
    restore_running_stats(&mut stack, &ckpt.running_stats)?;
    if let Some(adam) = &ckpt.optimizer {
        if adam.dim() != ckpt.trainables.len() {
            return Err(Error::Config(format!(
                "optimizer state covers {} parameters, stack has {}",
                adam.dim(),
                ckpt.trainables.len()
            )));
        }
    }
    Ok((stack, ckpt.optimizer.clone(), ckpt.iteration))
}

/// Reads a checkpoint file written by [`save`].
pub fn load(path: &Path) -> Result<(SubnetStack, Option<AdamState>, u64)> {
    let json = fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&json)?;
    restore(&ckpt)
}
